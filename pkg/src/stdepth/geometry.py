"""Pinhole camera model, rigid transforms and per-pixel reprojection.

Pixel convention used throughout the package: ``u`` is the column coordinate
(x, increasing left to right) and ``v`` the row coordinate (y, increasing top
to bottom). Pixel ``(u, v) = (j, i)`` is the centre of array element
``img[i, j]``. Disparity is a horizontal offset along ``u``.

Camera frame: x right, y down, z forward along the optical axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import BehindCameraError, InfiniteDepthError, InvalidIntrinsicsError

SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    """Zero-skew pinhole intrinsics, all in pixels."""

    fx: float
    fy: float
    x0: float
    y0: float

    def __post_init__(self):
        if not (np.isfinite(self.fx) and np.isfinite(self.fy)) or self.fx <= 0 or self.fy <= 0:
            raise InvalidIntrinsicsError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.x0) and np.isfinite(self.y0)):
            raise InvalidIntrinsicsError("principal point must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.x0, self.y0], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Intrinsics":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def check_image(self, width: int, height: int) -> None:
        if not (0 <= self.x0 < width and 0 <= self.y0 < height):
            raise InvalidIntrinsicsError(
                f"principal point ({self.x0}, {self.y0}) outside a {width}x{height} image"
            )


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform ``x -> R(rot) x + trans`` with an axis-angle rotation."""

    rot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=np.float64).reshape(3))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_array(cls, a) -> "PoseSE3":
        a = np.asarray(a, dtype=np.float64).reshape(6)
        return cls(a[:3], a[3:])

    @classmethod
    def from_matrix(cls, T) -> "PoseSE3":
        T = np.asarray(T, dtype=np.float64)
        return cls(matrix_to_rotvec(T[:3, :3]), T[:3, 3])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.rot, self.trans])

    @property
    def rotation(self) -> np.ndarray:
        return rotvec_to_matrix(self.rot)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.trans
        return T

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.trans


def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rotvec_to_matrix(rot) -> np.ndarray:
    """Rodrigues' formula, with a Taylor expansion for tiny angles."""
    rot = np.asarray(rot, dtype=np.float64).reshape(3)
    theta2 = float(rot @ rot)
    theta = np.sqrt(theta2)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    W = _skew(rot)
    return np.eye(3) + a * W + b * (W @ W)


def matrix_to_rotvec(R) -> np.ndarray:
    """Inverse of :func:`rotvec_to_matrix`; angle returned in ``[0, pi]``."""
    R = np.asarray(R, dtype=np.float64)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    cos_t = (np.trace(R) - 1.0) / 2.0
    # atan2 stays well conditioned where arccos is not (near 0 and pi)
    theta = np.arctan2(np.linalg.norm(vee) / 2.0, cos_t)
    if theta < 1e-6:
        # sin(t)/t ~ 1 - t^2/6
        return 0.5 * vee * (1.0 + theta**2 / 6.0)
    if cos_t >= 0:
        return theta / (2.0 * np.sin(theta)) * vee
    # obtuse angles: n n^T = (sym(R) - cos I) / (1 - cos), sign from the skew part
    B = ((R + R.T) / 2.0 - cos_t * np.eye(3)) / (1.0 - cos_t)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(B[i, i])
    if axis @ vee < 0:
        axis = -axis
    return theta * axis / np.linalg.norm(axis)


def rotvec_to_matrix_torch(rot: torch.Tensor) -> torch.Tensor:
    """Differentiable Rodrigues' formula for a single 3-vector tensor."""
    theta2 = (rot * rot).sum()
    small = theta2 < SMALL_ANGLE**2
    safe2 = torch.where(small, torch.ones_like(theta2), theta2)
    safe = torch.sqrt(safe2)
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(safe) / safe)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(safe)) / safe2)
    zero = torch.zeros((), dtype=rot.dtype)
    W = torch.stack(
        [
            torch.stack([zero, -rot[2], rot[1]]),
            torch.stack([rot[2], zero, -rot[0]]),
            torch.stack([-rot[1], rot[0], zero]),
        ]
    )
    return torch.eye(3, dtype=rot.dtype) + a * W + b * (W @ W)


def to_matrix(k: Intrinsics) -> np.ndarray:
    return np.array([[k.fx, 0.0, k.x0], [0.0, k.fy, k.y0], [0.0, 0.0, 1.0]])


def inverse_matrix(k: Intrinsics) -> np.ndarray:
    return np.array(
        [
            [1.0 / k.fx, 0.0, -k.x0 / k.fx],
            [0.0, 1.0 / k.fy, -k.y0 / k.fy],
            [0.0, 0.0, 1.0],
        ]
    )


def unproject(p, z, k: Intrinsics) -> np.ndarray:
    """Back-project pixels ``p[..., (u, v)]`` at depth ``z`` to camera-frame points."""
    p = np.asarray(p, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise BehindCameraError("unproject needs strictly positive depth")
    x = (p[..., 0] - k.x0) / k.fx * z
    y = (p[..., 1] - k.y0) / k.fy * z
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


def project(points, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points to ``(pixels, depth)``."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point at or behind the camera plane")
    u = k.fx * points[..., 0] / z + k.x0
    v = k.fy * points[..., 1] / z + k.y0
    return np.stack([u, v], axis=-1), z.copy()


def warp_temporal(p, z, k: Intrinsics, pose: PoseSE3) -> tuple[np.ndarray, np.ndarray]:
    """Move pixel ``p`` with depth ``z`` through ``pose`` and re-project it.

    Evaluates ``z' p' = K R K^-1 z p + K t``. Raises :class:`BehindCameraError`
    when the transformed point lands at non-positive depth; dense callers
    turn that into an invalid-mask entry instead.
    """
    return project(pose.apply(unproject(p, z, k)), k)


def disparity_to_depth(d, baseline: float, fx: float):
    d = np.asarray(d, dtype=np.float64)
    if baseline <= 0 or fx <= 0:
        raise ValueError("baseline and fx must be positive")
    if np.any(d <= 0):
        raise InfiniteDepthError("zero or negative disparity; clamp to a minimum first")
    out = baseline * fx / d
    return out if out.ndim else float(out)


def depth_to_disparity(z, baseline: float, fx: float):
    z = np.asarray(z, dtype=np.float64)
    if baseline <= 0 or fx <= 0:
        raise ValueError("baseline and fx must be positive")
    if np.any(z <= 0):
        raise BehindCameraError("depth must be positive")
    out = baseline * fx / z
    return out if out.ndim else float(out)


def pose_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """``compose(a, b)`` applies ``b`` first, then ``a``."""
    Ra = a.rotation
    return PoseSE3(matrix_to_rotvec(Ra @ b.rotation), Ra @ b.trans + a.trans)


def pose_inverse(a: PoseSE3) -> PoseSE3:
    Rt = a.rotation.T
    return PoseSE3(-a.rot, -Rt @ a.trans)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """``(H, W, 2)`` array of ``(u, v)`` pixel-centre coordinates."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([u, v], axis=-1)
