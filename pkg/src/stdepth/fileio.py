"""PFM / 16-bit PNG maps, trajectory text files and JSON helpers."""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

from .errors import FormatError
from .geometry import PoseSE3
from .metrics import Trajectory

# 16-bit PNG previews store round(value * scale)
DEPTH_PNG_SCALE = 256.0
IMAGE_PNG_SCALE = 65535.0

_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s")


def write_pfm(path, data) -> None:
    """Write a float32 map as little-endian PFM.

    Rows are stored bottom-to-top as the format prescribes, so readers that
    follow the standard get the image upright. The negative scale declares
    little-endian data.
    """
    arr = np.asarray(data)
    if arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    elif arr.ndim == 2:
        tag = b"Pf"
    else:
        raise FormatError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    body = np.ascontiguousarray(np.flipud(arr), dtype="<f4")
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(body.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a top-down float32 array (native byte order)."""
    raw = Path(path).read_bytes()
    m = _PFM_HEADER.match(raw)
    if m is None:
        raise FormatError(f"{path}: not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    try:
        scale = float(scale)
    except ValueError as e:
        raise FormatError(f"{path}: bad PFM scale {scale!r}") from e
    if scale == 0 or w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad PFM header")
    channels = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    body = raw[m.end() :]
    if len(body) != 4 * count:
        raise FormatError(f"{path}: expected {4 * count} data bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=dtype, count=count).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(arr.reshape(shape)).copy()


def write_png16(path, data, scale: float) -> None:
    """16-bit grayscale preview holding ``round(data * scale)`` clipped to [0, 65535]."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError("PNG previews are single channel")
    q = np.clip(np.rint(np.nan_to_num(arr * scale, nan=0.0, posinf=65535.0)), 0, 65535)
    Image.fromarray(q.astype(np.uint16)).save(path, format="PNG")


def read_png16(path, scale: float) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / scale


def _data_lines(text: str):
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield n, line.replace(",", " ").split()


def parse_trajectory(text: str) -> Trajectory:
    """Parse either trajectory format, detected from the column count.

    8 columns: ``timestamp tx ty tz qx qy qz qw`` (pose of the camera in the
    world). 12 columns: a row-major 3x4 ``[R | t]`` per line, timestamps are
    the line indices.
    """
    rows = list(_data_lines(text))
    if not rows:
        raise FormatError("trajectory file has no poses")
    ncol = {len(r) for _, r in rows}
    if len(ncol) != 1:
        raise FormatError(f"inconsistent column counts {sorted(ncol)}")
    ncol = ncol.pop()
    try:
        vals = np.array([[float(x) for x in r] for _, r in rows])
    except ValueError as e:
        raise FormatError(f"non-numeric trajectory entry: {e}") from e
    if ncol == 8:
        rot = Rotation.from_quat(vals[:, 4:8]).as_rotvec()
        poses = [PoseSE3(r, t) for r, t in zip(rot, vals[:, 1:4])]
        return Trajectory(poses, vals[:, 0])
    if ncol == 12:
        mats = vals.reshape(-1, 3, 4)
        return Trajectory([PoseSE3.from_matrix(m) for m in mats])
    raise FormatError(f"cannot detect trajectory format from {ncol} columns (expected 8 or 12)")


def read_trajectory(path) -> Trajectory:
    return parse_trajectory(Path(path).read_text())


def format_trajectory(traj: Trajectory, fmt: str = "tum") -> str:
    """Serialise as ``"tum"`` (timestamp + quaternion) or ``"kitti"`` (3x4 rows)."""
    lines = []
    for ts, p in zip(traj.timestamps, traj.poses):
        if fmt == "tum":
            q = Rotation.from_rotvec(p.rot).as_quat()
            vals = [ts, *p.trans, *q]
        elif fmt == "kitti":
            vals = p.matrix()[:3].ravel()
        else:
            raise ValueError(f"unknown trajectory format {fmt!r}")
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def write_trajectory(path, traj: Trajectory, fmt: str = "tum") -> None:
    Path(path).write_text(format_trajectory(traj, fmt))


def finite_or_none(obj):
    """Recursively replace non-finite floats by ``None`` so JSON stays standard."""
    if isinstance(obj, dict):
        return {k: finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [finite_or_none(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return finite_or_none(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(finite_or_none(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj))
