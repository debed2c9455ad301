import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from stdepth import synth
from stdepth.errors import DegenerateMaskError, DimensionError
from stdepth.geometry import PoseSE3
from stdepth.losses import (
    SSIM_C1,
    SSIM_C2,
    LossWeights,
    lr_consistency_loss,
    photoconsistency_loss,
    smoothness_loss,
    ssim,
    temporal_loss,
    total_loss,
)
from stdepth.sampler import WarpedImage, warp_temporal_image


def const_ssim(a, b):
    # closed form for two constant images: zero variances and covariance
    return (2 * a * b + SSIM_C1) * SSIM_C2 / ((a * a + b * b + SSIM_C1) * SSIM_C2)


@pytest.fixture(scope="module")
def quad():
    return synth.make_quadruplet(synth.preset("slanted"))


# ---- SSIM --------------------------------------------------------------------


def test_ssim_constants():
    assert SSIM_C1 == pytest.approx(1e-4) and SSIM_C2 == pytest.approx(9e-4)


def test_ssim_self_is_one(rng):
    a = rng.random((9, 11))
    assert torch.allclose(ssim(a, a), torch.ones(9, 11, dtype=torch.float64), atol=1e-12)


def test_ssim_constant_images():
    s = ssim(np.full((6, 6), 0.2), np.full((6, 6), 0.8))
    assert torch.allclose(s, torch.full((6, 6), const_ssim(0.2, 0.8), dtype=torch.float64), atol=1e-12)
    assert const_ssim(0.2, 0.8) == pytest.approx(0.47067, abs=1e-5)


def test_ssim_range_for_inverted_image(rng):
    a = rng.random((12, 12))
    s = ssim(a, 1 - a)
    assert float(s.min()) >= -1 and float(s.max()) <= 1


def test_ssim_color_is_channel_mean(rng):
    a = rng.random((8, 8, 3))
    b = rng.random((8, 8, 3))
    per = torch.stack([ssim(a[..., c], b[..., c]) for c in range(3)]).mean(0)
    assert torch.allclose(ssim(a, b), per, atol=1e-14)


def test_ssim_shape_mismatch():
    with pytest.raises(DimensionError):
        ssim(np.zeros((3, 3)), np.zeros((3, 4)))


# ---- photoconsistency --------------------------------------------------------


def test_photo_zero_for_identical(rng):
    a = rng.random((8, 8))
    assert float(photoconsistency_loss(a, a)) == pytest.approx(0, abs=1e-14)


def test_photo_pure_l1():
    assert float(photoconsistency_loss(np.zeros((5, 5)), np.ones((5, 5)), alpha=0.0)) == pytest.approx(1.0)


def test_photo_pure_ssim():
    val = float(photoconsistency_loss(np.zeros((5, 5)), np.ones((5, 5)), alpha=1.0))
    assert val == pytest.approx((1 - const_ssim(0.0, 1.0)) / 2, abs=1e-12)


def test_photo_counts_only_valid_pixels():
    i = np.zeros((4, 4))
    img = torch.ones(4, 4, dtype=torch.float64)
    mask = torch.zeros(4, 4, dtype=torch.bool)
    mask[:, :2] = True
    val = float(photoconsistency_loss(i, WarpedImage(img, mask), alpha=0.0))
    assert val == pytest.approx(1.0)


def test_photo_empty_mask():
    w = WarpedImage(torch.zeros(4, 4, dtype=torch.float64), torch.zeros(4, 4, dtype=torch.bool))
    with pytest.raises(DegenerateMaskError):
        photoconsistency_loss(np.zeros((4, 4)), w)


def test_photo_color_l1_is_channel_mean():
    i = np.zeros((4, 4, 3))
    j = np.zeros((4, 4, 3))
    j[..., 0] = 0.3
    assert float(photoconsistency_loss(i, j, alpha=0.0)) == pytest.approx(0.1)


@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_photo_nonnegative(seed, alpha):
    r = np.random.default_rng(seed)
    assert float(photoconsistency_loss(r.random((6, 7)), r.random((6, 7)), alpha)) >= 0


# ---- temporal ----------------------------------------------------------------


def test_temporal_static_identity(rng):
    img = rng.random((10, 10))
    w = warp_temporal_image(img, np.full((10, 10), 3.0), (10, 10, 4.5, 4.5), PoseSE3.identity())
    assert bool(w.mask.all())
    assert float(temporal_loss(img, w)) == pytest.approx(0, abs=1e-12)


def test_temporal_at_truth_and_doubled_translation(quad):
    depth = quad.baseline * quad.gt_intrinsics.fx / quad.gt_disp_l
    truth = float(temporal_loss(quad.i_lt, warp_temporal_image(quad.i_ltp, depth, quad.gt_intrinsics, quad.gt_pose)))
    p2 = PoseSE3(quad.gt_pose.rot, 2 * quad.gt_pose.trans)
    doubled = float(temporal_loss(quad.i_lt, warp_temporal_image(quad.i_ltp, depth, quad.gt_intrinsics, p2)))
    assert truth < 1e-3
    assert doubled > truth


# ---- left-right consistency --------------------------------------------------


def test_lr_zero_maps():
    assert float(lr_consistency_loss(np.zeros((5, 6)), np.zeros((5, 6)))) == 0.0


@given(st.floats(0, 3))
def test_lr_constant_maps(c):
    d = np.full((5, 8), c)
    assert float(lr_consistency_loss(d, d)) == pytest.approx(0, abs=1e-12)


def test_lr_hand_example():
    assert float(lr_consistency_loss(np.full((4, 6), 2.0), np.zeros((4, 6)))) == pytest.approx(2.0)


def test_lr_oracle(rng):
    # direct per-pixel evaluation with 1-D linear interpolation along rows
    h, w = 4, 7
    dl = rng.uniform(0, 2, (h, w))
    dr = rng.uniform(0, 2, (h, w))
    total, n = 0.0, 0
    for y in range(h):
        for x in range(w):
            for a, b, s in ((dl, dr, 1), (dr, dl, -1)):
                u = x + s * a[y, x]
                if 0 <= u <= w - 1:
                    total += abs(a[y, x] - np.interp(u, np.arange(w), b[y]))
                    n += 1
    assert float(lr_consistency_loss(dl, dr)) == pytest.approx(total / n, rel=1e-12)


# ---- smoothness --------------------------------------------------------------


def test_smooth_constant_disparity(rng):
    assert float(smoothness_loss(np.full((5, 5), 3.0), rng.random((5, 5)))) == 0.0


def test_smooth_unit_ramp():
    d = np.tile(np.arange(6.0), (4, 1))
    assert float(smoothness_loss(d, np.full((4, 6), 0.5))) == pytest.approx(1.0)


def test_smooth_ramp_on_edge_image():
    d = np.tile(np.arange(6.0), (4, 1))
    g = 0.9
    img = np.tile(np.arange(6.0) * g, (4, 1))
    val = float(smoothness_loss(d, img))
    assert val == pytest.approx(np.exp(-g)) and val < 1


def test_smooth_color_gradient_averaged():
    d = np.tile(np.arange(5.0), (3, 1))
    img = np.zeros((3, 5, 3))
    img[..., 0] = np.arange(5.0) * 0.6
    assert float(smoothness_loss(d, img)) == pytest.approx(np.exp(-0.2))


# ---- total -------------------------------------------------------------------


def _gt_args(q):
    return q.images, q.gt_disp_l, q.gt_disp_r, q.gt_pose, q.gt_intrinsics, q.baseline


def test_total_all_weights_zero(quad):
    w = LossWeights(0, 0, 0, 0)
    assert float(total_loss(*_gt_args(quad), w).total) == 0.0


def test_total_at_truth(quad):
    br = total_loss(*_gt_args(quad), LossWeights()).as_floats()
    for name in ("photo_left", "photo_right", "temporal", "lr_consistency"):
        assert getattr(br, name) < 1e-3, name
    assert br.smooth_left > 0


@given(st.lists(st.floats(0, 5), min_size=4, max_size=4), st.floats(0, 1))
def test_total_is_weighted_sum(lams, alpha):
    q = _QUAD
    w = LossWeights(*lams, alpha=alpha)
    br = total_loss(*_gt_args(q), w).as_floats()
    manual = (
        w.lambda_p * (br.photo_left + br.photo_right)
        + w.lambda_te * br.temporal
        + w.lambda_lr * br.lr_consistency
        + w.lambda_r * (br.smooth_left + br.smooth_right)
    )
    assert br.total == pytest.approx(manual, abs=1e-12)
    assert br.total >= 0


_QUAD = synth.make_quadruplet(synth.preset("plane", width=24, height=20))


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_p=-1)
    with pytest.raises(ValueError):
        LossWeights(alpha=1.5)
    assert LossWeights() == LossWeights(1.0, 1.0, 1.0, 0.1, 0.85)
