"""Flat ``key = value`` run configuration for the command-line driver.

One key per line, ``#`` starts a comment, no sections. Every key is optional
except ``seed``: runs are only reproducible when the seed is written down.
Scene overrides that are absent fall back to the preset defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .losses import LossWeights
from .optim import VAR_CLASSES, OptimConfig
from .synth import PRESETS

ENV_PREFIX = "STDEPTH_"

# scene overrides forwarded to synth.preset
SCENE_KEYS = {
    "width": int,
    "height": int,
    "fx": float,
    "fy": float,
    "x0": float,
    "y0": float,
    "baseline": float,
    "rot": "vec3",
    "trans": "vec3",
    "texture_px": "vec2",
}
WEIGHT_KEYS = tuple(f.name for f in fields(LossWeights))
OPTIM_KEYS = tuple(f.name for f in fields(OptimConfig) if f.name != "seed")


@dataclass
class RunConfig:
    seed: int
    scene: str = "slanted"
    scene_overrides: dict = field(default_factory=dict)
    input: str = ""
    output: str = "out"
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    frozen: tuple = ()
    export_png: bool = True
    export_trace: bool = True

    def __post_init__(self):
        if self.scene not in PRESETS:
            raise ConfigError(f"unknown scene {self.scene!r}; choose from {', '.join(PRESETS)}")
        bad = set(self.frozen) - set(VAR_CLASSES)
        if bad:
            raise ConfigError(f"unknown frozen classes {sorted(bad)}")
        self.optim = replace(self.optim, seed=self.seed)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_vec(s: str, n: int) -> tuple:
    parts = [p for p in s.replace(" ", "").split(",") if p]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {s!r}")
    return tuple(float(p) for p in parts)


def _convert(kind, raw: str):
    if kind == "vec3":
        return _parse_vec(raw, 3)
    if kind == "vec2":
        return _parse_vec(raw, 2)
    if kind is bool:
        return _parse_bool(raw)
    return kind(raw)


def parse_pairs(text: str) -> dict:
    """Split config text into an ordered ``{key: raw string}`` dict."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = val
    return out


def from_pairs(pairs: dict) -> RunConfig:
    pairs = dict(pairs)
    if "seed" not in pairs:
        raise ConfigError("config must set 'seed'")
    try:
        seed = int(pairs.pop("seed"))
        kw = {}
        for key in ("scene", "input", "output"):
            if key in pairs:
                kw[key] = pairs.pop(key)
        for key in ("export_png", "export_trace"):
            if key in pairs:
                kw[key] = _parse_bool(pairs.pop(key))
        if "frozen" in pairs:
            kw["frozen"] = tuple(s for s in pairs.pop("frozen").replace(" ", "").split(",") if s)
        overrides = {k: _convert(SCENE_KEYS[k], pairs.pop(k)) for k in list(pairs) if k in SCENE_KEYS}
        w = {k: float(pairs.pop(k)) for k in list(pairs) if k in WEIGHT_KEYS}
        o = {}
        for k in list(pairs):
            if k in OPTIM_KEYS:
                typ = type(getattr(OptimConfig(), k))
                o[k] = typ(pairs.pop(k))
        if pairs:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(pairs))}")
        return RunConfig(seed=seed, scene_overrides=overrides, weights=LossWeights(**w), optim=OptimConfig(**o), **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    """Parse config text; ``STDEPTH_<KEY>`` entries of ``env`` override keys."""
    pairs = parse_pairs(text)
    for name, val in (env or {}).items():
        if name.startswith(ENV_PREFIX) and name != ENV_PREFIX + "THREADS":
            pairs[name[len(ENV_PREFIX) :].lower()] = val
    return from_pairs(pairs)


def format_config(cfg: RunConfig) -> str:
    """Serialise every setting; parsing the result gives back an equal config."""
    lines = [
        f"seed = {cfg.seed}",
        f"scene = {cfg.scene}",
    ]
    for k in SCENE_KEYS:
        if k in cfg.scene_overrides:
            lines.append(f"{k} = {_fmt(cfg.scene_overrides[k])}")
    lines += [
        f"input = {cfg.input}",
        f"output = {cfg.output}",
        f"frozen = {_fmt(tuple(cfg.frozen))}",
        f"export_png = {_fmt(cfg.export_png)}",
        f"export_trace = {_fmt(cfg.export_trace)}",
    ]
    lines += [f"{k} = {_fmt(getattr(cfg.weights, k))}" for k in WEIGHT_KEYS]
    lines += [f"{k} = {_fmt(getattr(cfg.optim, k))}" for k in OPTIM_KEYS]
    return "\n".join(lines) + "\n"


def load_config(path, env: dict | None = None) -> RunConfig:
    with open(path) as f:
        text = f.read()
    return parse_config(text, os.environ if env is None else env)
