"""Identifiability of intrinsics from inter-frame rotation.

Recovering ``K_hat, R_hat`` from the pixel-space rotation ``K R K^-1`` pins
``K_hat = K`` whenever ``R`` is a genuine rotation, while the translation
product ``K t`` alone does not. This module measures those relations
numerically and evaluates the per-axis focal-length tolerance
``delta_fx < 2 fx^2 / (w^2 ry)``, ``delta_fy < 2 fy^2 / (h^2 rx)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .geometry import Intrinsics, inverse_matrix, matrix_to_rotvec, rotvec_to_matrix, to_matrix

PARAMS = ("fx", "fy", "x0", "y0")


@dataclass
class ConjugacyReport:
    residual_rotation: float
    residual_translation: float
    A_residual: float
    kkT_residual: float


@dataclass
class FocalTolerance:
    delta_fx: float
    delta_fy: float


@dataclass
class UniquenessResult:
    """Outcome of :func:`verify_uniqueness`.

    ``status`` is ``"pass"``, ``"fail"``, ``"not-identifiable"`` (rotation is
    the identity, so every ``K_hat`` fits) or ``"inconclusive"`` (no trial
    reached the residual threshold).
    """

    status: str
    worst_gap: float
    converged: int
    trials: int
    per_param: dict = field(default_factory=dict)


def _as_rotation(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return r if r.shape == (3, 3) else rotvec_to_matrix(r)


def conjugacy_report(k_true: Intrinsics, k_hat: Intrinsics, r_true, r_hat, t_true, t_hat) -> ConjugacyReport:
    """Residuals of the rotation and translation relations between two camera hypotheses.

    Rotations may be axis-angle 3-vectors or 3x3 matrices.
    """
    K = to_matrix(k_true)
    Kh = to_matrix(k_hat)
    Ki = inverse_matrix(k_true)
    R = _as_rotation(r_true)
    Rh = _as_rotation(r_hat)
    t = np.asarray(t_true, dtype=np.float64)
    th = np.asarray(t_hat, dtype=np.float64)
    A = Ki @ Kh @ Kh.T @ Ki.T
    return ConjugacyReport(
        residual_rotation=float(np.linalg.norm(Kh @ Rh @ inverse_matrix(k_hat) - K @ R @ Ki)),
        residual_translation=float(np.linalg.norm(Kh @ th - K @ t)),
        A_residual=float(np.linalg.norm(A - np.eye(3))),
        kkT_residual=float(np.linalg.norm(Kh @ Kh.T - K @ K.T)),
    )


def kkt_block_form(k: Intrinsics) -> np.ndarray:
    """``K K^T`` assembled from blocks ``[[F F + X0 X0^T, X0], [X0^T, 1]]``."""
    F = np.diag([k.fx, k.fy])
    X0 = np.array([[k.x0], [k.y0]])
    return np.block([[F @ F + X0 @ X0.T, X0], [X0.T, np.ones((1, 1))]])


def focal_tolerance(k: Intrinsics, w: float, h: float, rx: float, ry: float) -> FocalTolerance:
    """Focal-length tolerances for a given inter-frame rotation; zero rotation gives ``inf``."""
    if w <= 0 or h <= 0:
        raise ValueError("image size must be positive")
    dfx = math.inf if ry == 0 else 2.0 * k.fx**2 / (w**2 * abs(ry))
    dfy = math.inf if rx == 0 else 2.0 * k.fy**2 / (h**2 * abs(rx))
    return FocalTolerance(dfx, dfy)


def _unpack(x):
    k = Intrinsics(math.exp(x[0]), math.exp(x[1]), x[2], x[3])
    return k, x[4:7]


def verify_uniqueness(
    k_true: Intrinsics,
    r_true,
    trials: int = 20,
    seed: int = 0,
    residual_tol: float = 1e-8,
    rel_tol: float = 1e-4,
    spread: float = 0.5,
) -> UniquenessResult:
    """Multi-start search for intrinsics that reproduce ``K R K^-1``.

    Each trial starts from intrinsics scaled by factors in
    ``[1 - spread, 1 + spread]`` and a random rotation, then minimises
    ``||K_hat R_hat K_hat^-1 - K R K^-1||_F``. Trials ending below
    ``residual_tol`` count as converged; the check passes when every
    converged ``K_hat`` lies within ``rel_tol * ||K||_F`` of ``K``. Each
    intrinsic is also reported separately, since rotation about a single
    axis leaves some of them free.
    """
    R = _as_rotation(r_true)
    per_param = {p: {"max_gap": 0.0, "identifiable": True} for p in PARAMS}
    if np.linalg.norm(matrix_to_rotvec(R)) < 1e-12:
        for p in PARAMS:
            per_param[p] = {"max_gap": math.inf, "identifiable": False}
        return UniquenessResult("not-identifiable", math.inf, 0, trials, per_param)

    K = to_matrix(k_true)
    target = K @ R @ inverse_matrix(k_true)
    k_norm = float(np.linalg.norm(K))
    truth = k_true.as_array()
    rng = np.random.default_rng(seed)

    def residual(x):
        k, rot = _unpack(x)
        return (to_matrix(k) @ rotvec_to_matrix(rot) @ inverse_matrix(k) - target).ravel()

    converged = 0
    worst = 0.0
    for _ in range(trials):
        start_k = truth * rng.uniform(1 - spread, 1 + spread, 4)
        x0 = np.concatenate([np.log(start_k[:2]), start_k[2:], rng.normal(scale=0.3, size=3)])
        try:
            sol = least_squares(residual, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(sol.x)) or np.linalg.norm(sol.fun) >= residual_tol:
            continue
        converged += 1
        k_hat, _ = _unpack(sol.x)
        gaps = np.abs(k_hat.as_array() - truth)
        worst = max(worst, float(np.linalg.norm(to_matrix(k_hat) - K)))
        for p, g in zip(PARAMS, gaps):
            per_param[p]["max_gap"] = max(per_param[p]["max_gap"], float(g))

    if converged == 0:
        return UniquenessResult("inconclusive", math.nan, 0, trials, per_param)
    for p in PARAMS:
        per_param[p]["identifiable"] = per_param[p]["max_gap"] < rel_tol * k_norm
    status = "pass" if worst < rel_tol * k_norm else "fail"
    return UniquenessResult(status, worst, converged, trials, per_param)
