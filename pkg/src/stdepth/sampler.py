"""Differentiable bilinear sampling and dense stereo/temporal warping.

All dense routines work on ``torch.float64`` tensors so that reverse-mode
gradients flow to disparities, depth, pose and intrinsics. Images are
``(H, W)`` or ``(H, W, C)``; numpy inputs are converted on entry.

Samples whose coordinates fall outside ``[0, W-1] x [0, H-1]`` are not
clamped: they get value 0 and ``mask=False``, and every loss ignores them.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch

from .errors import DimensionError
from .geometry import Intrinsics, PoseSE3, rotvec_to_matrix_torch

DTYPE = torch.float64
# coordinates this close outside the image still count as inside
BORDER_EPS = 1e-9

LEFT_FROM_RIGHT = "left-from-right"
RIGHT_FROM_LEFT = "right-from-left"


class WarpedImage(NamedTuple):
    image: torch.Tensor
    mask: torch.Tensor


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def intrinsics_tensor(k) -> torch.Tensor:
    if isinstance(k, Intrinsics):
        return torch.as_tensor(k.as_array())
    return as_tensor(k)


def pose_tensor(pose) -> torch.Tensor:
    """Pose as a 6-tensor ``(rot, trans)``."""
    if isinstance(pose, PoseSE3):
        return torch.as_tensor(pose.as_array())
    return as_tensor(pose)


def pixel_grid(height: int, width: int) -> tuple[torch.Tensor, torch.Tensor]:
    v, u = torch.meshgrid(
        torch.arange(height, dtype=DTYPE), torch.arange(width, dtype=DTYPE), indexing="ij"
    )
    return u, v


def bilinear_sample(src, coords) -> WarpedImage:
    """Sample ``src`` at continuous ``coords[..., (u, v)]``.

    A sample is valid when ``0 <= u <= W-1`` and ``0 <= v <= H-1`` (up to
    ``BORDER_EPS`` so that round-off in a computed identity warp does not drop
    edge pixels); every neighbour carrying non-zero weight then lies inside
    the image, and integer coordinates reproduce source pixels exactly.
    """
    src = as_tensor(src)
    coords = as_tensor(coords)
    H, W = src.shape[:2]
    if H < 2 or W < 2:
        raise DimensionError("bilinear sampling needs at least a 2x2 source")
    u, v = coords[..., 0], coords[..., 1]
    e = BORDER_EPS
    mask = (u >= -e) & (u <= W - 1 + e) & (v >= -e) & (v <= H - 1 + e)

    uc = torch.where(mask, u, torch.zeros_like(u))
    vc = torch.where(mask, v, torch.zeros_like(v))
    iu = torch.floor(uc.detach()).clamp(0, W - 2).long()
    iv = torch.floor(vc.detach()).clamp(0, H - 2).long()
    fu = uc - iu.to(DTYPE)
    fv = vc - iv.to(DTYPE)

    flat = src.reshape(H * W, *src.shape[2:])
    idx = iv * W + iu
    a = flat[idx]
    b = flat[idx + 1]
    c = flat[idx + W]
    d = flat[idx + W + 1]
    if src.dim() == 3:
        fu = fu.unsqueeze(-1)
        fv = fv.unsqueeze(-1)
    out = (1 - fv) * ((1 - fu) * a + fu * b) + fv * ((1 - fu) * c + fu * d)
    m = mask.unsqueeze(-1) if src.dim() == 3 else mask
    out = torch.where(m, out, torch.zeros_like(out))
    return WarpedImage(out, mask)


def _check_shapes(src, field):
    if tuple(src.shape[:2]) != tuple(field.shape):
        raise DimensionError(f"image {tuple(src.shape[:2])} and field {tuple(field.shape)} differ")


def warp_stereo(src, disp, direction: str = LEFT_FROM_RIGHT) -> WarpedImage:
    """Reconstruct one view of a rectified pair from the other.

    ``left-from-right`` samples the right image at ``(u + d, v)``;
    ``right-from-left`` samples the left image at ``(u - d, v)``.
    """
    src = as_tensor(src)
    disp = as_tensor(disp)
    _check_shapes(src, disp)
    if direction == LEFT_FROM_RIGHT:
        sign = 1.0
    elif direction == RIGHT_FROM_LEFT:
        sign = -1.0
    else:
        raise ValueError(f"unknown stereo direction {direction!r}")
    u, v = pixel_grid(*disp.shape)
    coords = torch.stack([u + sign * disp, v], dim=-1)
    return bilinear_sample(src, coords)


def temporal_coords(depth, k, pose) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pixel target coordinates and in-front flags for a dense warp.

    Returns ``(coords, in_front)`` where ``coords[..., (u', v')]`` is where
    each pixel of the depth map lands after moving through ``pose``.
    """
    depth = as_tensor(depth)
    kt = intrinsics_tensor(k)
    pt = pose_tensor(pose)
    fx, fy, x0, y0 = kt[0], kt[1], kt[2], kt[3]
    R = rotvec_to_matrix_torch(pt[:3])
    t = pt[3:]
    u, v = pixel_grid(*depth.shape)
    X = (u - x0) / fx * depth
    Y = (v - y0) / fy * depth
    Xs = R[0, 0] * X + R[0, 1] * Y + R[0, 2] * depth + t[0]
    Ys = R[1, 0] * X + R[1, 1] * Y + R[1, 2] * depth + t[1]
    Zs = R[2, 0] * X + R[2, 1] * Y + R[2, 2] * depth + t[2]
    in_front = Zs > 1e-12
    Zsafe = torch.where(in_front, Zs, torch.ones_like(Zs))
    us = fx * Xs / Zsafe + x0
    vs = fy * Ys / Zsafe + y0
    # behind-camera points are pushed out of bounds
    us = torch.where(in_front, us, torch.full_like(us, -1.0))
    return torch.stack([us, vs], dim=-1), in_front


def warp_temporal_image(src, depth, k, pose) -> WarpedImage:
    """Reconstruct the target frame from an adjacent source frame.

    ``depth`` is the target-frame depth and ``pose`` maps target-frame points
    into the source camera (t -> t'). Pixels warped behind the camera are
    masked out.
    """
    src = as_tensor(src)
    depth = as_tensor(depth)
    _check_shapes(src, depth)
    coords, in_front = temporal_coords(depth, k, pose)
    warped = bilinear_sample(src, coords)
    return WarpedImage(warped.image, warped.mask & in_front)
