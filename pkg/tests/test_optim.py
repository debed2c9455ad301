import math

import numpy as np
import pytest
import torch

from oracles import adam_transcript, central_difference, random_problem, valid_masks, worst_relative_error
from stdepth import synth
from stdepth.errors import NumericalFailureError
from stdepth.losses import LossWeights
from stdepth.optim import (
    OptimConfig,
    Problem,
    adam_state,
    adam_step,
    evaluate,
    gradient,
    initial_vars,
    make_problem,
    optimize,
)

TUNED = LossWeights(lambda_lr=0.01, lambda_r=0.001)


@pytest.fixture(scope="module")
def slanted():
    q = synth.make_quadruplet(synth.preset("slanted"))
    truth = dict(disp_l=q.gt_disp_l, disp_r=q.gt_disp_r, pose=q.gt_pose.as_array(), intr=q.gt_intrinsics.as_array())
    return q, truth


@pytest.fixture(scope="module")
def small():
    q = synth.make_quadruplet(synth.preset("plane", width=24, height=16))
    truth = dict(disp_l=q.gt_disp_l, disp_r=q.gt_disp_r, pose=q.gt_pose.as_array(), intr=q.gt_intrinsics.as_array())
    return q, truth


# ---- configuration and initialisation ----------------------------------------


def test_config_defaults_and_validation():
    c = OptimConfig()
    assert (c.lr, c.beta1, c.beta2, c.epsilon) == (0.001, 0.9, 0.99, 1e-8)
    assert (c.lr_decay, c.decay_every) == (0.9, 100)
    for bad in (dict(lr=0), dict(beta1=1.0), dict(beta2=-0.1)):
        with pytest.raises(ValueError):
            OptimConfig(**bad)


def test_initial_vars_neutral():
    v = initial_vars((16, 20), 0.5, OptimConfig())
    assert np.allclose(v["intr"], [16, 16, 10, 8])
    assert np.allclose(v["pose"], 0)
    # disparity of a plane 10 m away
    assert np.allclose(np.exp(v["log_disp_l"]), 0.5 * 16 / 10.0)


def test_initial_jitter_is_seeded():
    a = initial_vars((8, 8), 0.5, OptimConfig(seed=3, init_jitter=0.2))
    b = initial_vars((8, 8), 0.5, OptimConfig(seed=3, init_jitter=0.2))
    c = initial_vars((8, 8), 0.5, OptimConfig(seed=4, init_jitter=0.2))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["intr"], c["intr"])


def test_unknown_frozen_class(small):
    q, truth = small
    with pytest.raises(ValueError):
        make_problem(q.images, q.baseline, OptimConfig(), frozen=("focal",), truth=truth)


# ---- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_matches_finite_differences(seed):
    p = random_problem(seed)
    assert worst_relative_error(gradient(p), central_difference(p, h=1e-4)) < 1e-4


def test_all_weights_zero_gives_zero_gradient():
    p = random_problem(0, weights=LossWeights(0, 0, 0, 0))
    g = gradient(p)
    assert set(g) == {"log_disp_l", "log_disp_r", "pose", "intr"}
    assert all(not np.any(x) for x in g.values())


def test_frozen_intrinsics_have_no_gradient():
    p = random_problem(0)
    p = Problem(p.images, p.baseline, p.vars, frozenset({"intrinsics"}), p.weights)
    assert "intr" not in gradient(p)
    p = Problem(p.images, p.baseline, p.vars, frozenset({"disparity", "pose"}), p.weights)
    assert set(gradient(p)) == {"intr"}


def test_gradient_is_deterministic():
    p = random_problem(1)
    a, b = gradient(p), gradient(p)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_non_finite_loss_names_component():
    p = random_problem(0)
    images = list(p.images)
    images[2] = images[2].copy()
    images[2][:] = np.nan
    bad = Problem(tuple(images), p.baseline, p.vars, p.frozen, p.weights)
    with pytest.raises(NumericalFailureError) as err:
        evaluate(bad)
    assert err.value.component == "temporal"
    assert "temporal" in str(err.value)


# ---- Adam --------------------------------------------------------------------


def test_adam_first_step_magnitude():
    cfg = OptimConfig(lr=0.001)
    s = adam_step(adam_state({"x": np.zeros(3)}), {"x": np.ones(3)}, cfg)
    assert np.allclose(s.params["x"], -0.001 / (1 + 1e-8), rtol=0, atol=1e-15)
    assert s.t == 1


def test_adam_constant_gradient_two_steps():
    cfg = OptimConfig(lr=0.01)
    s = adam_state({"x": np.array([0.5])})
    for _ in range(2):
        s = adam_step(s, {"x": np.array([2.0])}, cfg)
    ref = adam_transcript([2.0, 2.0], 0.01, x0=0.5)
    assert s.params["x"][0] == pytest.approx(ref[-1], abs=1e-15)


def test_adam_matches_transcript_varying_gradients(rng):
    gs = list(rng.normal(size=25))
    cfg = OptimConfig(lr=0.003)
    s = adam_state({"x": np.array([1.0])})
    xs = []
    for g in gs:
        s = adam_step(s, {"x": np.array([g])}, cfg)
        xs.append(s.params["x"][0])
    assert np.allclose(xs, adam_transcript(gs, 0.003, x0=1.0), rtol=0, atol=1e-14)


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    cfg = OptimConfig()
    s = adam_step(adam_state({"x": np.zeros(2)}), {"x": np.ones(2)}, cfg)
    x1, m1, v1 = s.params["x"].copy(), s.m["x"].copy(), s.v["x"].copy()
    s0 = adam_step(adam_state({"x": np.full(2, 4.0)}), {"x": np.zeros(2)}, cfg)
    assert np.array_equal(s0.params["x"], np.full(2, 4.0))
    s2 = adam_step(s, {"x": np.zeros(2)}, cfg)
    assert np.allclose(s2.m["x"], 0.9 * m1) and np.allclose(s2.v["x"], 0.99 * v1)
    # the decayed momentum still moves the parameter
    assert np.all(s2.params["x"] < x1)


def test_adam_skips_parameters_without_gradient():
    s = adam_step(adam_state({"a": np.ones(2), "b": np.ones(2)}), {"a": np.ones(2)}, OptimConfig())
    assert np.array_equal(s.params["b"], np.ones(2))


# ---- optimisation ------------------------------------------------------------


def test_small_lr_loss_non_increasing(slanted):
    # start near the truth; the masked means are only continuous while no
    # sample crosses the image border, so that is checked alongside
    q, truth = slanted
    cfg = OptimConfig(lr=1e-5, steps=10)
    prob = make_problem(q.images, q.baseline, cfg, TUNED)
    prob.vars.update(
        log_disp_l=np.log(truth["disp_l"] * 1.1),
        log_disp_r=np.log(truth["disp_r"] * 1.1),
        pose=truth["pose"] + [0.003, -0.002, 0.001, 0.02, -0.01, 0.05],
        intr=truth["intr"] * [1.04, 0.97, 1.0, 1.0],
    )
    rep = optimize(prob, cfg)
    end = Problem(prob.images, prob.baseline, rep.vars, prob.frozen, prob.weights)
    assert np.array_equal(valid_masks(prob), valid_masks(end))
    totals = [b.total for b in rep.trace]
    assert len(totals) == 10 and rep.steps == 10
    assert all(b <= a for a, b in zip(totals, totals[1:]))


def test_frozen_classes_are_untouched(small):
    q, truth = small
    cfg = OptimConfig(lr=0.01, steps=5)
    prob = make_problem(q.images, q.baseline, cfg, frozen=("pose", "intrinsics"), truth=truth)
    rep = optimize(prob, cfg)
    assert np.array_equal(rep.vars["pose"], truth["pose"])
    assert np.array_equal(rep.vars["intr"], truth["intr"])
    assert not np.array_equal(rep.vars["log_disp_l"], prob.vars["log_disp_l"])


def test_all_frozen_trace_is_constant(small):
    q, truth = small
    cfg = OptimConfig(steps=4)
    prob = make_problem(q.images, q.baseline, cfg, frozen=("disparity", "pose", "intrinsics"), truth=truth)
    rep = optimize(prob, cfg)
    assert len({b.total for b in rep.trace}) == 1 and rep.steps == 4


def _run(q, cfg, weights=TUNED, frozen=(), truth=None):
    return optimize(make_problem(q.images, q.baseline, cfg, weights, frozen, truth), cfg)


def test_optimize_deterministic(small):
    q, _ = small
    cfg = OptimConfig(lr=0.01, steps=15, seed=2, init_jitter=0.1)
    a, b = _run(q, cfg), _run(q, cfg)
    assert [x.as_dict() for x in a.trace] == [x.as_dict() for x in b.trace]
    assert all(np.array_equal(a.vars[k], b.vars[k]) for k in a.vars)


def test_two_threads_agree(small):
    q, _ = small
    cfg = OptimConfig(lr=0.01, steps=15, seed=2)
    a = _run(q, cfg)
    before = torch.get_num_threads()
    torch.set_num_threads(2)
    try:
        b = _run(q, cfg)
    finally:
        torch.set_num_threads(before)
    for k in a.vars:
        assert np.allclose(a.vars[k], b.vars[k], rtol=0, atol=1e-10)
    assert all(abs(x.total - y.total) < 1e-10 for x, y in zip(a.trace, b.trace))


def test_convergence_flag(small):
    q, truth = small
    cfg = OptimConfig(lr=1e-12, steps=200, conv_window=5, conv_tol=1e-6)
    rep = _run(q, cfg, frozen=("pose", "intrinsics"), truth=truth)
    assert rep.converged and rep.status == "converged" and rep.steps == len(rep.trace) < 200


def test_divergence_returns_partial_report(small):
    q, _ = small
    huge = tuple(x * 1e9 for x in q.images)
    cfg = OptimConfig(steps=5)
    prob = make_problem(huge, q.baseline, cfg)
    rep = optimize(prob, cfg)
    assert rep.status == "diverged" and not rep.converged
    assert all(np.array_equal(rep.vars[k], prob.vars[k]) for k in prob.vars)


def test_non_finite_midway_stops_with_last_good(small, monkeypatch):
    q, _ = small
    import stdepth.optim as om

    real = om.evaluate
    calls = {"n": 0}

    def flaky(problem, need_grad=True):
        calls["n"] += 1
        if calls["n"] == 4:
            raise NumericalFailureError("non-finite total loss", component="total")
        return real(problem, need_grad)

    monkeypatch.setattr(om, "evaluate", flaky)
    cfg = OptimConfig(lr=0.01, steps=10)
    rep = optimize(make_problem(q.images, q.baseline, cfg), cfg)
    assert rep.status == "diverged" and rep.steps == 3
    assert all(np.all(np.isfinite(v)) for v in rep.vars.values())


def test_depth_only_recovery(slanted):
    q, truth = slanted
    cfg = OptimConfig(lr=0.01, steps=600, decay_every=60, lr_decay=0.7)
    rep = _run(q, cfg, frozen=("pose", "intrinsics"), truth=truth)
    depth = q.baseline * rep.vars["intr"][0] / np.exp(rep.vars["log_disp_l"])
    assert np.median(np.abs(depth - q.gt_depth_l) / q.gt_depth_l) < 0.02


def test_pose_only_recovery(slanted):
    q, truth = slanted
    cfg = OptimConfig(lr=0.01, steps=600, decay_every=100, lr_decay=0.8)
    rep = _run(q, cfg, frozen=("disparity", "intrinsics"), truth=truth)
    err = np.linalg.norm(rep.vars["pose"][3:] - q.gt_pose.trans)
    assert err < 0.01 * q.baseline
    assert math.isfinite(rep.trace[-1].total)
