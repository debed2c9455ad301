"""Photometric, left-right consistency and smoothness losses plus their weighted total."""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .errors import DegenerateMaskError, DimensionError
from .sampler import (
    LEFT_FROM_RIGHT,
    RIGHT_FROM_LEFT,
    WarpedImage,
    as_tensor,
    bilinear_sample,
    intrinsics_tensor,
    pixel_grid,
    warp_stereo,
    warp_temporal_image,
)

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 1.0
    lambda_te: float = 1.0
    lambda_lr: float = 1.0
    lambda_r: float = 0.1
    alpha: float = 0.85

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.alpha > 1:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class LossBreakdown:
    total: float
    photo_left: float
    photo_right: float
    temporal: float
    lr_consistency: float
    smooth_left: float
    smooth_right: float

    def as_floats(self) -> "LossBreakdown":
        return LossBreakdown(**self.as_dict())

    def as_dict(self) -> dict:
        return {f.name: float(torch.as_tensor(getattr(self, f.name)).detach()) for f in fields(self)}


def _channels_last(x: torch.Tensor) -> torch.Tensor:
    return x if x.dim() == 3 else x.unsqueeze(-1)


def _box3(x: torch.Tensor) -> torch.Tensor:
    # x: (C, H, W); 3x3 mean with reflected borders
    x = F.pad(x.unsqueeze(0), (1, 1, 1, 1), mode="reflect")
    return F.avg_pool2d(x, 3, stride=1).squeeze(0)


def ssim(a, b) -> torch.Tensor:
    """Per-pixel SSIM over a 3x3 window, averaged over channels."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"ssim shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    x = _channels_last(a).permute(2, 0, 1)
    y = _channels_last(b).permute(2, 0, 1)
    mu_x = _box3(x)
    mu_y = _box3(y)
    sxx = _box3(x * x) - mu_x * mu_x
    syy = _box3(y * y) - mu_y * mu_y
    sxy = _box3(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den).mean(dim=0)


def _unpack(i_hat):
    if isinstance(i_hat, WarpedImage):
        return i_hat.image, i_hat.mask
    t = as_tensor(i_hat)
    return t, torch.ones(t.shape[:2], dtype=torch.bool)


def photoconsistency_loss(i, i_hat, alpha: float = 0.85) -> torch.Tensor:
    """Mean of ``alpha*(1-SSIM)/2 + (1-alpha)*|I - I_hat|`` over valid pixels.

    ``i_hat`` is a :class:`WarpedImage` (its mask selects the pixels) or a
    plain image (all pixels valid). Invalid pixels are zeroed in both images
    before SSIM so that windows straddling the mask edge compare like with like.
    """
    i = as_tensor(i)
    img, mask = _unpack(i_hat)
    if i.shape != img.shape:
        raise DimensionError(f"image shapes differ: {tuple(i.shape)} vs {tuple(img.shape)}")
    n = mask.sum()
    if n == 0:
        raise DegenerateMaskError("reconstruction has no valid pixels")
    m = mask.to(i.dtype)
    mc = m.unsqueeze(-1) if i.dim() == 3 else m
    target = i * mc
    recon = img * mc
    s = ssim(target, recon)
    l1 = (target - recon).abs()
    if l1.dim() == 3:
        l1 = l1.mean(dim=-1)
    per_pixel = alpha * (1 - s) / 2 + (1 - alpha) * l1
    return (per_pixel * m).sum() / n


def temporal_loss(i_t, warped: WarpedImage, alpha: float = 0.85) -> torch.Tensor:
    """Photometric loss between the target frame and its temporal reconstruction.

    ``warped`` should come from :func:`warp_temporal_image` with the depth
    derived from the left disparity, ``B * fx_hat / d``.
    """
    return photoconsistency_loss(i_t, warped, alpha)


def lr_consistency_loss(d_l, d_r) -> torch.Tensor:
    """Disagreement between each disparity map and the other one sampled through it.

    Both directions are pooled: the sum of valid absolute differences is
    divided by the total number of valid samples.
    """
    d_l = as_tensor(d_l)
    d_r = as_tensor(d_r)
    if d_l.shape != d_r.shape:
        raise DimensionError("disparity maps differ in shape")
    u, v = pixel_grid(*d_l.shape)
    r_at_l = bilinear_sample(d_r, torch.stack([u + d_l, v], dim=-1))
    l_at_r = bilinear_sample(d_l, torch.stack([u - d_r, v], dim=-1))
    n = r_at_l.mask.sum() + l_at_r.mask.sum()
    if n == 0:
        raise DegenerateMaskError("no valid left-right correspondences")
    s1 = torch.where(r_at_l.mask, (d_l - r_at_l.image).abs(), torch.zeros_like(d_l)).sum()
    s2 = torch.where(l_at_r.mask, (d_r - l_at_r.image).abs(), torch.zeros_like(d_r)).sum()
    return (s1 + s2) / n


def smoothness_loss(d, i) -> torch.Tensor:
    """Edge-aware first-order smoothness of a disparity map."""
    d = as_tensor(d)
    i = _channels_last(as_tensor(i))
    if tuple(i.shape[:2]) != tuple(d.shape):
        raise DimensionError("disparity and image differ in shape")
    dx_d = (d[:, 1:] - d[:, :-1]).abs()
    dy_d = (d[1:, :] - d[:-1, :]).abs()
    dx_i = (i[:, 1:] - i[:, :-1]).abs().mean(dim=-1)
    dy_i = (i[1:, :] - i[:-1, :]).abs().mean(dim=-1)
    return (dx_d * torch.exp(-dx_i)).mean() + (dy_d * torch.exp(-dy_i)).mean()


def total_loss(images, disp_l, disp_r, pose, k, baseline: float, w: LossWeights) -> LossBreakdown:
    """Assemble every reconstruction and combine the components.

    ``images`` is a 4-sequence ``(I_l_t, I_r_t, I_l_t', I_r_t')``. ``pose``
    maps left-camera points at ``t`` into the left camera at ``t'``. The
    temporal reconstruction uses depth ``baseline * fx / disp_l`` with the
    ``fx`` of ``k``, so focal length and disparity are tied together.
    Returned fields are tensors (differentiable); call ``as_floats`` to detach.
    """
    i_lt, i_rt, i_ltp = (as_tensor(x) for x in images[:3])
    disp_l = as_tensor(disp_l)
    disp_r = as_tensor(disp_r)
    kt = intrinsics_tensor(k)

    rec_l = warp_stereo(i_rt, disp_l, LEFT_FROM_RIGHT)
    rec_r = warp_stereo(i_lt, disp_r, RIGHT_FROM_LEFT)
    photo_l = photoconsistency_loss(i_lt, rec_l, w.alpha)
    photo_r = photoconsistency_loss(i_rt, rec_r, w.alpha)

    depth_l = baseline * kt[0] / disp_l
    rec_t = warp_temporal_image(i_ltp, depth_l, kt, pose)
    temporal = temporal_loss(i_lt, rec_t, w.alpha)

    lr = lr_consistency_loss(disp_l, disp_r)
    sm_l = smoothness_loss(disp_l, i_lt)
    sm_r = smoothness_loss(disp_r, i_rt)

    total = (
        w.lambda_p * (photo_l + photo_r)
        + w.lambda_te * temporal
        + w.lambda_lr * lr
        + w.lambda_r * (sm_l + sm_r)
    )
    return LossBreakdown(total, photo_l, photo_r, temporal, lr, sm_l, sm_r)
