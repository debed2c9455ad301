"""Depth error/accuracy metrics and absolute trajectory error."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AlignmentError, DegenerateMaskError, DimensionError
from .geometry import PoseSE3

MIN_DEPTH = 1e-3


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self) -> dict:
        return asdict(self)


def depth_metrics(pred, gt, cap: float = 80.0, median_scale: bool = False) -> DepthMetrics:
    """Standard depth metrics over pixels with ``0 < gt <= cap``.

    With ``median_scale`` the prediction is first rescaled by
    ``median(gt) / median(pred)`` over the valid pixels; it is then clamped
    to ``[1e-3, cap]``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = np.isfinite(gt) & (gt > 0) & (gt <= cap)
    if not valid.any():
        raise DegenerateMaskError("no valid ground-truth pixels")
    p = pred[valid]
    g = gt[valid]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, MIN_DEPTH, cap)

    ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
    )


@dataclass
class Trajectory:
    poses: list
    timestamps: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.timestamps is None:
            self.timestamps = np.arange(len(self.poses), dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if len(self.timestamps) != len(self.poses):
            raise DimensionError("one timestamp per pose required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.trans for p in self.poses])

    def rotations(self) -> np.ndarray:
        return np.array([p.rotation for p in self.poses])


def align_rigid(src: np.ndarray, dst: np.ndarray, with_scale: bool = False):
    """Closed-form ``(s, R, t)`` minimising ``sum ||s R src_i + t - dst_i||^2``."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = 1.0
    if with_scale:
        var_s = (xs**2).sum() / len(src)
        s = float(np.trace(np.diag(D) @ S) / var_s)
    t = mu_d - s * R @ mu_s
    return s, R, t


def ate(pred: Trajectory, gt: Trajectory, with_scale: bool = False) -> tuple[float, float]:
    """Translational and rotational RMS error after aligning ``pred`` onto ``gt``.

    The aligned error pose per frame is ``F_i = Q_i^-1 S P_i`` with ``S``
    the rigid (optionally similarity) transform that best maps predicted
    positions onto ground-truth positions.
    """
    if len(pred) != len(gt):
        raise AlignmentError(f"trajectory lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < 3:
        raise AlignmentError("at least three poses are needed to fix the alignment")
    P = pred.positions()
    Q = gt.positions()
    s, R_s, t_s = align_rigid(P, Q, with_scale)
    t_err = (s * P @ R_s.T + t_s) - Q
    t_ate = float(np.sqrt(np.mean(np.sum(t_err**2, axis=1))))

    angles = []
    for Rp, Rq in zip(pred.rotations(), gt.rotations()):
        Rf = Rq.T @ R_s @ Rp
        angles.append(np.arccos(np.clip((np.trace(Rf) - 1.0) / 2.0, -1.0, 1.0)))
    r_ate = float(np.sqrt(np.mean(np.square(angles))))
    return t_ate, r_ate


def trajectory_from_matrices(mats, timestamps=None) -> Trajectory:
    return Trajectory([PoseSE3.from_matrix(m) for m in mats], timestamps)
