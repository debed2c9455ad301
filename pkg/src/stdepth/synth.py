"""Analytic textured-plane scenes and exact stereo-temporal quadruplets.

A scene is a set of planes in the frame of the left camera at time ``t``.
Cameras are placed with camera-to-world poses; each pixel ray is intersected
with every plane and the nearest positive hit wins, so scenes must enclose
the cameras in a convex region (a single plane, a concave corner, a tapered
tunnel). Textures are smooth solid (3D) fields evaluated at the hit point, so
images stay continuous across plane creases and bilinear resampling error
stays small.

Stereo layout: the second ("right") view is rendered from a camera centre at
``(-B, 0, 0)``. With ``u`` increasing along +x this gives ``I_l(u) = I_r(u + d)``
with ``d = B fx / z >= 0``, the disparity convention used by the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoIntersectionError
from .geometry import Intrinsics, PoseSE3, pose_compose, pose_inverse, rotvec_to_matrix

PRESETS = ("plane", "slanted", "two-planes", "corridor")
# finer texture on the single slanted plane sharpens the monocular depth signal
TEXTURE_PX = {"slanted": (10.0, 32.0)}


@dataclass(frozen=True)
class TextureSpec:
    """Procedural solid texture, values in ``[0, 1]``.

    ``kind="noise"`` is a random-phase sum of 3D plane waves (a smooth random
    field) with wavelengths in ``[min_wavelength, max_wavelength]`` metres.
    ``kind="grid"`` is a sinusoid grid with period ``max_wavelength``.
    """

    kind: str = "noise"
    min_wavelength: float = 1.0
    max_wavelength: float = 4.0
    components: int = 24
    seed: int = 0


@dataclass(frozen=True)
class Plane:
    """Plane ``{X : normal . X = offset}``; cameras sit where ``normal . X < offset``."""

    normal: np.ndarray
    offset: float
    texture: TextureSpec = field(default_factory=TextureSpec)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @classmethod
    def through(cls, point, normal, texture: TextureSpec | None = None) -> "Plane":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return cls(n, float(n @ np.asarray(point, dtype=np.float64)), texture or TextureSpec())


@dataclass(frozen=True)
class SceneSpec:
    planes: tuple
    width: int
    height: int
    intrinsics: Intrinsics
    baseline: float
    motion: PoseSE3 = field(default_factory=PoseSE3.identity)
    seed: int = 0
    name: str = "custom"


@dataclass
class Quadruplet:
    """Left/right images at ``t`` and ``t'`` plus exact ground truth at ``t``.

    ``gt_pose`` maps left-camera points at ``t`` into the left camera at ``t'``.
    """

    i_lt: np.ndarray
    i_rt: np.ndarray
    i_ltp: np.ndarray
    i_rtp: np.ndarray
    gt_depth_l: np.ndarray
    gt_depth_r: np.ndarray
    gt_disp_l: np.ndarray
    gt_disp_r: np.ndarray
    gt_pose: PoseSE3
    gt_intrinsics: Intrinsics
    baseline: float

    @property
    def images(self) -> tuple:
        return (self.i_lt, self.i_rt, self.i_ltp, self.i_rtp)


def _texture_fn(tex: TextureSpec):
    if tex.kind == "grid":
        lam = tex.max_wavelength

        def grid(X):
            return 0.5 + 0.13 * np.sin(2 * np.pi * X / lam).sum(axis=-1)

        return grid
    if tex.kind != "noise":
        raise ValueError(f"unknown texture kind {tex.kind!r}")
    rng = np.random.default_rng(tex.seed)
    n = tex.components
    freq = rng.uniform(1.0 / tex.max_wavelength, 1.0 / tex.min_wavelength, n)
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    wavevec = 2 * np.pi * freq[:, None] * direction
    phase = rng.uniform(0, 2 * np.pi, n)
    amp = 1.0 / freq
    amp /= np.sqrt((amp**2).sum() / 2.0)

    def noise(X):
        s = np.cos(X @ wavevec.T + phase) @ amp
        return 0.5 + 0.4 * np.tanh(0.8 * s)

    return noise


def render_view(spec: SceneSpec, pose: PoseSE3) -> tuple[np.ndarray, np.ndarray]:
    """Render ``(image, depth)`` for a camera with camera-to-world ``pose``."""
    k = spec.intrinsics
    v, u = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    rays_c = np.stack([(u - k.x0) / k.fx, (v - k.y0) / k.fy, np.ones_like(u)], axis=-1)
    R = pose.rotation
    centre = pose.trans
    rays_w = rays_c @ R.T

    best_t = np.full(u.shape, np.inf)
    best_i = np.full(u.shape, -1)
    for i, plane in enumerate(spec.planes):
        gap = plane.offset - plane.normal @ centre
        if gap <= 0:
            continue  # camera outside this plane's half-space
        denom = rays_w @ plane.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(denom > 1e-12, gap / denom, np.inf)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_i = np.where(closer, i, best_i)
    if not np.all(np.isfinite(best_t)):
        raise NoIntersectionError(f"{int((~np.isfinite(best_t)).sum())} pixel rays hit no plane")

    image = np.zeros(u.shape)
    for i, plane in enumerate(spec.planes):
        sel = best_i == i
        if sel.any():
            X = centre + rays_w[sel] * best_t[sel, None]
            image[sel] = _texture_fn(plane.texture)(X)
    # ray z-component is 1 in the camera frame, so the ray parameter is depth
    return image, best_t


def stereo_offset(baseline: float) -> PoseSE3:
    """Camera-to-left-camera pose of the second stereo view."""
    return PoseSE3(np.zeros(3), np.array([-baseline, 0.0, 0.0]))


def make_quadruplet(spec: SceneSpec) -> Quadruplet:
    k = spec.intrinsics
    B = spec.baseline
    right = stereo_offset(B)
    cam_tp = pose_inverse(spec.motion)
    i_lt, z_l = render_view(spec, PoseSE3.identity())
    i_rt, z_r = render_view(spec, right)
    i_ltp, _ = render_view(spec, cam_tp)
    i_rtp, _ = render_view(spec, pose_compose(cam_tp, right))
    return Quadruplet(
        i_lt=i_lt,
        i_rt=i_rt,
        i_ltp=i_ltp,
        i_rtp=i_rtp,
        gt_depth_l=z_l,
        gt_depth_r=z_r,
        gt_disp_l=B * k.fx / z_l,
        gt_disp_r=B * k.fx / z_r,
        gt_pose=spec.motion,
        gt_intrinsics=k,
        baseline=B,
    )


def _rot(axis_angles):
    return rotvec_to_matrix(np.asarray(axis_angles, dtype=np.float64))


def preset(name: str, **overrides) -> SceneSpec:
    """Build a named scene.

    Presets (defaults for a 64x64 image, ``fx = 0.9 w``, baseline 0.5 m):

    - ``plane``: fronto-parallel plane at 8 m.
    - ``slanted``: one plane through (0, 0, 8) tilted 30 deg about y and 15 deg about x.
    - ``two-planes``: concave vertical corner at 9 m, faces at +-35 deg.
    - ``corridor``: four walls, 6 m apart at the camera, tapering to an apex 20 m ahead.

    All planes of a scene share one solid noise texture whose wavelengths are
    ``texture_px`` pixels at the scene's far reference depth ((10, 32) for
    ``slanted``, (16, 48) otherwise). The default motion rotates by
    (0.02, 0.05, 0) rad and moves points 0.6 m further away, so every pixel
    at ``t`` stays visible at ``t'``.

    Keyword overrides: ``width``, ``height``, ``fx``, ``fy``, ``x0``, ``y0``,
    ``baseline``, ``rot``, ``trans`` (the t -> t' point motion), ``seed``,
    ``texture_px`` (min, max texture wavelength in pixels).
    """
    if name not in PRESETS:
        raise KeyError(f"unknown scene preset {name!r}; choose from {', '.join(PRESETS)}")
    ov = dict(overrides)
    w = int(ov.pop("width", 64))
    h = int(ov.pop("height", 64))
    fx = float(ov.pop("fx", 0.9 * w))
    fy = float(ov.pop("fy", fx))
    x0 = float(ov.pop("x0", 0.48 * w))
    y0 = float(ov.pop("y0", 0.52 * h))
    baseline = float(ov.pop("baseline", 0.5))
    rot = ov.pop("rot", (0.02, 0.05, 0.0))
    trans = ov.pop("trans", (0.0, 0.0, 0.6))
    seed = int(ov.pop("seed", 0))
    tex_px = ov.pop("texture_px", TEXTURE_PX.get(name, (16.0, 48.0)))
    if ov:
        raise KeyError(f"unknown preset overrides: {sorted(ov)}")

    def texture(z_ref):
        return TextureSpec("noise", tex_px[0] * z_ref / fx, tex_px[1] * z_ref / fx, 24, seed)

    if name == "plane":
        planes = (Plane.through((0, 0, 8.0), (0, 0, 1), texture(8.0)),)
    elif name == "slanted":
        n = _rot((np.radians(15), 0, 0)) @ _rot((0, np.radians(30), 0)) @ np.array([0, 0, 1.0])
        planes = (Plane.through((0, 0, 8.0), n, texture(12.0)),)
    elif name == "two-planes":
        a = np.radians(35)
        tex = texture(9.0)
        planes = (
            Plane.through((0, 0, 9.0), (-np.sin(a), 0, np.cos(a)), tex),
            Plane.through((0, 0, 9.0), (np.sin(a), 0, np.cos(a)), tex),
        )
    else:
        apex = np.array([0.0, 0.0, 20.0])
        tex = texture(16.0)
        walls = [
            ((3.0, 0, 0), (0, -1.0, 0)),
            ((-3.0, 0, 0), (0, 1.0, 0)),
            ((0, 3.0, 0), (1.0, 0, 0)),
            ((0, -3.0, 0), (-1.0, 0, 0)),
        ]
        planes = tuple(
            Plane.through(c, np.cross(apex - np.array(c), e), tex) for c, e in walls
        )
    return SceneSpec(
        planes=planes,
        width=w,
        height=h,
        intrinsics=Intrinsics(fx, fy, x0, y0),
        baseline=baseline,
        motion=PoseSE3(rot, trans),
        seed=seed,
        name=name,
    )
