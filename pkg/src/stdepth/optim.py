"""Direct recovery of disparity, egomotion and intrinsics by minimising the total loss.

The unknowns are per-pixel log-disparities for both views, a 6-vector pose
``(rot, trans)`` taking left-camera points from ``t`` to ``t'``, and the
intrinsics ``(fx, fy, x0, y0)``. Gradients come from torch autograd; the
update rule is a plain numpy Adam so that every step is reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NumericalFailureError
from .geometry import Intrinsics, PoseSE3
from .losses import LossBreakdown, LossWeights, total_loss

VAR_CLASSES = {
    "disparity": ("log_disp_l", "log_disp_r"),
    "pose": ("pose",),
    "intrinsics": ("intr",),
}
VAR_NAMES = ("log_disp_l", "log_disp_r", "pose", "intr")


@dataclass
class OptimConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    steps: int = 2000
    lr_decay: float = 0.9
    decay_every: int = 100
    seed: int = 0
    init_depth: float = 10.0
    # relative half-width of the seeded init perturbation (0 = deterministic init)
    init_jitter: float = 0.0
    conv_tol: float = 1e-7
    conv_window: int = 50

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


@dataclass
class Problem:
    images: tuple
    baseline: float
    vars: dict
    frozen: frozenset = frozenset()
    weights: LossWeights = field(default_factory=LossWeights)

    @property
    def shape(self) -> tuple:
        return tuple(np.shape(self.images[0])[:2])

    def free_names(self) -> list:
        frozen = {n for c in self.frozen for n in VAR_CLASSES[c]}
        return [n for n in VAR_NAMES if n not in frozen]

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_array(self.vars["intr"])

    def pose(self) -> PoseSE3:
        return PoseSE3.from_array(self.vars["pose"])

    def disparity(self, view: str = "l") -> np.ndarray:
        return np.exp(self.vars[f"log_disp_{view}"])

    def depth(self) -> np.ndarray:
        return self.baseline * self.vars["intr"][0] / self.disparity("l")


@dataclass
class OptimReport:
    trace: list
    vars: dict
    wall_time: float
    converged: bool
    status: str
    steps: int


@dataclass
class AdamState:
    params: dict
    m: dict
    v: dict
    t: int = 0


def initial_vars(shape, baseline: float, config: OptimConfig) -> dict:
    """Neutral starting point: fronto-parallel plane, identity pose, generic intrinsics.

    Intrinsics start at ``(0.8 w, 0.8 w, w/2, h/2)`` and the disparity at
    that of a plane ``init_depth`` metres away. With ``init_jitter > 0`` the
    plane depth and the intrinsics are scaled by seeded factors drawn from
    ``[1 - j, 1 + j]``.
    """
    h, w = shape
    intr = np.array([0.8 * w, 0.8 * w, w / 2.0, h / 2.0])
    depth = config.init_depth
    if config.init_jitter > 0:
        rng = np.random.default_rng(config.seed)
        j = config.init_jitter
        depth *= rng.uniform(1 - j, 1 + j)
        intr = intr * rng.uniform(1 - j, 1 + j, 4)
    log_d = math.log(baseline * intr[0] / depth)
    return {
        "log_disp_l": np.full(shape, log_d),
        "log_disp_r": np.full(shape, log_d),
        "pose": np.zeros(6),
        "intr": intr,
    }


def make_problem(images, baseline, config: OptimConfig, weights=None, frozen=(), truth=None) -> Problem:
    """Build a problem from the neutral initialisation.

    Frozen classes listed in ``frozen`` are set from ``truth`` when given: a
    dict with any of ``disp_l``, ``disp_r``, ``pose``, ``intr``.
    """
    images = tuple(np.asarray(x, dtype=np.float64) for x in images)
    vars_ = initial_vars(images[0].shape[:2], baseline, config)
    frozen = frozenset(frozen)
    unknown = frozen - set(VAR_CLASSES)
    if unknown:
        raise ValueError(f"unknown variable classes {sorted(unknown)}")
    if truth is not None:
        if "disparity" in frozen:
            vars_["log_disp_l"] = np.log(np.asarray(truth["disp_l"], dtype=np.float64))
            vars_["log_disp_r"] = np.log(np.asarray(truth["disp_r"], dtype=np.float64))
        if "pose" in frozen:
            vars_["pose"] = np.asarray(truth["pose"], dtype=np.float64).copy()
        if "intrinsics" in frozen:
            vars_["intr"] = np.asarray(truth["intr"], dtype=np.float64).copy()
    return Problem(images, float(baseline), vars_, frozen, weights or LossWeights())


def evaluate(problem: Problem, need_grad: bool = True):
    """Total loss breakdown and gradients of the total for every free variable."""
    free = set(problem.free_names()) if need_grad else set()
    t = {n: torch.tensor(problem.vars[n], dtype=torch.float64, requires_grad=n in free) for n in VAR_NAMES}
    br = total_loss(
        problem.images,
        torch.exp(t["log_disp_l"]),
        torch.exp(t["log_disp_r"]),
        t["pose"],
        t["intr"],
        problem.baseline,
        problem.weights,
    )
    values = br.as_floats()
    # components first so the error names the term that produced the failure
    for name, val in sorted(values.as_dict().items(), key=lambda kv: kv[0] == "total"):
        if not math.isfinite(val):
            raise NumericalFailureError(f"non-finite {name} loss", component=name)
    grads = {}
    if free:
        leaves = [t[n] for n in VAR_NAMES if n in free]
        if br.total.requires_grad:
            gs = torch.autograd.grad(br.total, leaves, allow_unused=True)
        else:
            gs = [None] * len(leaves)
        for n, leaf, g in zip([n for n in VAR_NAMES if n in free], leaves, gs):
            grads[n] = np.zeros(leaf.shape) if g is None else g.numpy().copy()
            if not np.all(np.isfinite(grads[n])):
                raise NumericalFailureError(f"non-finite gradient for {n}", component=n)
    return values, grads


def gradient(problem: Problem) -> dict:
    """Exact reverse-mode gradients of the total loss for all unfrozen variables."""
    return evaluate(problem)[1]


def adam_state(params: dict) -> AdamState:
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    return AdamState(
        params,
        {k: np.zeros_like(v) for k, v in params.items()},
        {k: np.zeros_like(v) for k, v in params.items()},
        0,
    )


def adam_step(state: AdamState, grads: dict, config: OptimConfig, lr: float | None = None) -> AdamState:
    """One bias-corrected Adam update; parameters without a gradient are left alone."""
    lr = config.lr if lr is None else lr
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    params, m, v = dict(state.params), dict(state.m), dict(state.v)
    for k in params:
        g = grads.get(k)
        if g is None:
            continue
        m[k] = b1 * m[k] + (1.0 - b1) * g
        v[k] = b2 * v[k] + (1.0 - b2) * g * g
        params[k] = params[k] - lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + config.epsilon)
    return AdamState(params, m, v, t)


def _chart_scale(problem: Problem) -> dict:
    # intrinsics are stepped in image-normalised units so one lr suits all classes
    h, w = problem.shape
    return {"intr": np.array([w, h, w, h], dtype=np.float64)}


def optimize(problem: Problem, config: OptimConfig, callback=None) -> OptimReport:
    """Run Adam on the free variables with a stepwise-decayed learning rate.

    Stops after ``config.steps`` steps, on convergence (relative change of the
    total below ``conv_tol`` across ``conv_window`` steps), or on divergence
    (total above 1e6 or non-finite), which yields ``status="diverged"`` and
    the last finite variables.
    """
    start = time.perf_counter()
    scale = _chart_scale(problem)
    free = problem.free_names()
    state = adam_state({n: problem.vars[n] / scale.get(n, 1.0) for n in free})
    current = {k: np.array(v, copy=True) for k, v in problem.vars.items()}
    last_good = current
    trace: list[LossBreakdown] = []
    status = "max_steps"
    converged = False
    steps = 0
    while steps < config.steps:
        trial = Problem(problem.images, problem.baseline, current, problem.frozen, problem.weights)
        try:
            values, grads = evaluate(trial, need_grad=bool(free))
        except NumericalFailureError:
            status = "diverged"
            current = last_good
            break
        if values.total > 1e6:
            status = "diverged"
            current = last_good
            break
        last_good = current
        trace.append(values)
        if callback is not None:
            callback(steps, values)
        window = config.conv_window
        if len(trace) > window:
            old = trace[-1 - window].total
            if abs(old - values.total) <= config.conv_tol * max(abs(old), 1e-30):
                converged = True
                status = "converged"
                break
        if not free:
            steps += 1
            continue
        lr = config.lr * config.lr_decay ** (steps // config.decay_every)
        state = adam_step(state, {n: grads[n] * scale.get(n, 1.0) for n in free}, config, lr)
        current = dict(current)
        for n in free:
            current[n] = state.params[n] * scale.get(n, 1.0)
        steps += 1
    return OptimReport(
        trace=trace,
        vars=current,
        wall_time=time.perf_counter() - start,
        converged=converged,
        status=status,
        steps=len(trace),
    )
