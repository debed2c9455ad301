"""Command-line driver: ``stdepth {gen,optimize,eval-depth,eval-pose,observability}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (including
divergence), 4 I/O or input-format error. Any option can also be supplied
through an environment variable ``STDEPTH_<OPTION>`` (e.g. ``STDEPTH_SEED``);
command-line flags win over the environment. For ``optimize`` the variables
override keys of the config file instead.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from . import fileio, metrics, observability, optim, synth
from .errors import (
    AlignmentError,
    ConfigError,
    DimensionError,
    FormatError,
    InvalidIntrinsicsError,
    NumericalFailureError,
    StDepthError,
)
from .geometry import Intrinsics, PoseSE3, inverse_matrix, to_matrix

log = logging.getLogger("stdepth")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
IMAGE_NAMES = ("i_lt", "i_rt", "i_ltp", "i_rtp")
GT_NAMES = ("gt_depth_l", "gt_depth_r", "gt_disp_l", "gt_disp_r")


def _vec(n):
    def parse(s: str):
        try:
            v = tuple(float(x) for x in s.split(","))
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers") from e
        if len(v) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
        return v

    return parse


def _pose_json(p: PoseSE3) -> dict:
    return {"rot": p.rot, "trans": p.trans, "matrix": p.matrix()}


def _intr_json(k: Intrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "x0": k.x0, "y0": k.y0}


# ---- quadruplet files --------------------------------------------------------


def save_quadruplet(out: Path, q: synth.Quadruplet, manifest: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    arrays = {n: getattr(q, n) for n in IMAGE_NAMES + GT_NAMES}
    # exact float64 copy; the PFM files are float32
    np.savez(
        out / "quadruplet.npz",
        **arrays,
        gt_pose=q.gt_pose.as_array(),
        gt_intrinsics=q.gt_intrinsics.as_array(),
        baseline=np.float64(q.baseline),
    )
    files = ["quadruplet.npz"]
    for n in IMAGE_NAMES:
        fileio.write_pfm(out / f"{n}.pfm", arrays[n])
        fileio.write_png16(out / f"{n}.png", arrays[n], fileio.IMAGE_PNG_SCALE)
        files += [f"{n}.pfm", f"{n}.png"]
    for n in GT_NAMES:
        fileio.write_pfm(out / f"{n}.pfm", arrays[n])
        files.append(f"{n}.pfm")
    fileio.write_png16(out / "gt_depth_l.png", q.gt_depth_l, fileio.DEPTH_PNG_SCALE)
    fileio.write_json(out / "pose.json", _pose_json(q.gt_pose))
    fileio.write_json(out / "intrinsics.json", _intr_json(q.gt_intrinsics))
    files += ["gt_depth_l.png", "pose.json", "intrinsics.json", "manifest.json"]
    manifest = dict(manifest)
    manifest.update(
        baseline=q.baseline,
        intrinsics=_intr_json(q.gt_intrinsics),
        pose=_pose_json(q.gt_pose),
        width=q.i_lt.shape[1],
        height=q.i_lt.shape[0],
        files=sorted(files),
        png_scale={"image": fileio.IMAGE_PNG_SCALE, "depth": fileio.DEPTH_PNG_SCALE},
    )
    fileio.write_json(out / "manifest.json", manifest)


def load_quadruplet(path) -> synth.Quadruplet:
    path = Path(path)
    if path.is_dir():
        path = path / "quadruplet.npz"
    try:
        with np.load(path) as z:
            d = {k: z[k] for k in z.files}
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read quadruplet {path}: {e}") from e
    missing = set(IMAGE_NAMES + GT_NAMES + ("gt_pose", "gt_intrinsics", "baseline")) - set(d)
    if missing:
        raise FormatError(f"{path}: missing arrays {sorted(missing)}")
    return synth.Quadruplet(
        **{n: d[n] for n in IMAGE_NAMES + GT_NAMES},
        gt_pose=PoseSE3.from_array(d["gt_pose"]),
        gt_intrinsics=Intrinsics.from_array(d["gt_intrinsics"]),
        baseline=float(d["baseline"]),
    )


# ---- subcommands -------------------------------------------------------------


def cmd_gen(args) -> int:
    overrides = {k: getattr(args, k) for k in cfgmod.SCENE_KEYS if getattr(args, k) is not None}
    try:
        spec = synth.preset(args.scene, seed=args.seed, **overrides)
    except KeyError as e:
        raise ConfigError(str(e.args[0])) from e
    q = synth.make_quadruplet(spec)
    out = Path(args.out or f"gen_{args.scene}_{args.seed}")
    save_quadruplet(out, q, {"scene": args.scene, "seed": args.seed, "overrides": overrides})
    print(out)
    return EXIT_OK


def _source(cfg: cfgmod.RunConfig) -> synth.Quadruplet:
    if cfg.input:
        return load_quadruplet(cfg.input)
    try:
        spec = synth.preset(cfg.scene, seed=cfg.seed, **cfg.scene_overrides)
    except KeyError as e:
        raise ConfigError(str(e.args[0])) from e
    return synth.make_quadruplet(spec)


def cmd_optimize(args) -> int:
    cfg = cfgmod.load_config(args.config, args.env)
    if args.out:
        cfg.output = args.out
    q = _source(cfg)
    truth = {
        "disp_l": q.gt_disp_l,
        "disp_r": q.gt_disp_r,
        "pose": q.gt_pose.as_array(),
        "intr": q.gt_intrinsics.as_array(),
    }
    problem = optim.make_problem(q.images, q.baseline, cfg.optim, cfg.weights, cfg.frozen, truth)
    report = optim.optimize(problem, cfg.optim)
    final = optim.Problem(problem.images, problem.baseline, report.vars, problem.frozen, problem.weights)

    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfgmod.format_config(cfg))
    depth = final.depth()
    fileio.write_pfm(out / "depth.pfm", depth)
    fileio.write_pfm(out / "disparity_l.pfm", final.disparity("l"))
    if cfg.export_png:
        fileio.write_png16(out / "depth.png", depth, fileio.DEPTH_PNG_SCALE)
    if cfg.export_trace:
        names = list(report.trace[0].as_dict()) if report.trace else []
        with open(out / "trace.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", *names])
            for i, br in enumerate(report.trace):
                w.writerow([i, *(repr(v) for v in br.as_dict().values())])
    fileio.write_json(out / "pose.json", _pose_json(final.pose()))
    fileio.write_json(out / "intrinsics.json", _intr_json(final.intrinsics()))

    # wall time is left out so reruns produce identical files
    summary = {
        "status": report.status,
        "converged": report.converged,
        "steps": report.steps,
        "initial_loss": report.trace[0].as_dict() if report.trace else None,
        "final_loss": report.trace[-1].as_dict() if report.trace else None,
        "pose": _pose_json(final.pose()),
        "intrinsics": _intr_json(final.intrinsics()),
        "gt_pose": _pose_json(q.gt_pose),
        "gt_intrinsics": _intr_json(q.gt_intrinsics),
        "frozen": sorted(cfg.frozen),
        "seed": cfg.seed,
    }
    try:
        dm = metrics.depth_metrics(depth, q.gt_depth_l)
        summary["depth_metrics"] = dm.as_dict()
        summary["median_depth_ratio"] = float(np.median(depth) / np.median(q.gt_depth_l))
    except StDepthError as e:
        summary["depth_metrics"] = {"error": str(e)}
    fileio.write_json(out / "report.json", summary)
    print(out)
    if report.status == "diverged":
        log.error("optimisation diverged after %d steps; partial results in %s", report.steps, out)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_eval_depth(args) -> int:
    pred = fileio.read_pfm(args.pred)
    gt = fileio.read_pfm(args.gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    m = metrics.depth_metrics(pred, gt, cap=args.cap, median_scale=args.median_scale).as_dict()
    text = fileio.dumps_json(m)
    sys.stdout.write(text)
    if args.json:
        Path(args.json).write_text(text)
    if args.csv:
        path = Path(args.csv)
        new = not path.exists()
        with open(path, "a", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            if new:
                w.writerow(["pred", "gt", "cap", "median_scale", *m])
            w.writerow([args.pred, args.gt, repr(args.cap), int(args.median_scale), *(repr(v) for v in m.values())])
    return EXIT_OK


def cmd_eval_pose(args) -> int:
    pred = fileio.read_trajectory(args.pred)
    gt = fileio.read_trajectory(args.gt)
    t_ate, r_ate = metrics.ate(pred, gt, with_scale=args.with_scale)
    text = fileio.dumps_json({"t_ate": t_ate, "r_ate": r_ate, "poses": len(gt), "with_scale": args.with_scale})
    sys.stdout.write(text)
    if args.json:
        Path(args.json).write_text(text)
    return EXIT_OK


def cmd_observability(args) -> int:
    w, h = args.width, args.height
    try:
        k = Intrinsics(
            args.fx,
            args.fy if args.fy is not None else args.fx,
            args.x0 if args.x0 is not None else w / 2.0,
            args.y0 if args.y0 is not None else h / 2.0,
        )
        k_hat = Intrinsics(
            args.fx_hat if args.fx_hat is not None else k.fx,
            args.fy_hat if args.fy_hat is not None else k.fy,
            args.x0_hat if args.x0_hat is not None else k.x0,
            args.y0_hat if args.y0_hat is not None else k.y0,
        )
    except InvalidIntrinsicsError as e:
        raise ConfigError(str(e)) from e
    rot = np.array(args.rotation)
    t = np.array(args.translation)
    # t_hat reproducing K t exactly under k_hat
    t_hat = inverse_matrix(k_hat) @ to_matrix(k) @ t
    conj = observability.conjugacy_report(k, k_hat, rot, rot, t, t_hat)
    tol = observability.focal_tolerance(k, w, h, rx=rot[0], ry=rot[1])
    uniq = observability.verify_uniqueness(k, rot, trials=args.trials, seed=args.seed)
    result = {
        "intrinsics": _intr_json(k),
        "intrinsics_hat": _intr_json(k_hat),
        "rotation": rot,
        "translation": t,
        "width": w,
        "height": h,
        "tolerance": asdict(tol),
        "conjugacy": asdict(conj),
        "uniqueness": asdict(uniq),
    }
    text = fileio.dumps_json(result)
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text)
    return EXIT_OK


# ---- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="torch intra-op threads (1 = bit-reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="stdepth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="render a synthetic stereo-temporal quadruplet")
    g.add_argument("--scene", default="slanted", help=f"one of {', '.join(synth.PRESETS)}")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None, help="output directory (default gen_<scene>_<seed>)")
    for key, kind in cfgmod.SCENE_KEYS.items():
        typ = {"vec3": _vec(3), "vec2": _vec(2)}.get(kind, kind)
        g.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None)
    g.set_defaults(func=cmd_gen)

    o = sub.add_parser("optimize", parents=[common], help="recover depth, pose and intrinsics from a config")
    o.add_argument("config", help="key = value config file")
    o.add_argument("--out", default=None, help="output directory (overrides the config)")
    o.set_defaults(func=cmd_optimize)

    e = sub.add_parser("eval-depth", parents=[common], help="depth error metrics between two PFM maps")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--cap", type=float, default=80.0)
    e.add_argument("--median-scale", action="store_true")
    e.add_argument("--json", default=None, help="also write the metrics JSON here")
    e.add_argument("--csv", default=None, help="append a CSV row here")
    e.set_defaults(func=cmd_eval_depth)

    t = sub.add_parser("eval-pose", parents=[common], help="absolute trajectory error")
    t.add_argument("pred")
    t.add_argument("gt")
    t.add_argument("--with-scale", action="store_true", help="similarity instead of rigid alignment")
    t.add_argument("--json", default=None)
    t.set_defaults(func=cmd_eval_pose)

    b = sub.add_parser("observability", parents=[common], help="intrinsics identifiability from rotation")
    b.add_argument("--fx", type=float, default=300.0)
    b.add_argument("--fy", type=float, default=None)
    b.add_argument("--x0", type=float, default=None)
    b.add_argument("--y0", type=float, default=None)
    b.add_argument("--width", type=int, default=512)
    b.add_argument("--height", type=int, default=256)
    b.add_argument("--rotation", type=_vec(3), default=(0.0, 0.05, 0.0), help="axis-angle rx,ry,rz (rad)")
    b.add_argument("--translation", type=_vec(3), default=(0.0, 0.0, 1.0))
    for name in ("fx", "fy", "x0", "y0"):
        b.add_argument(f"--{name}-hat", dest=f"{name}_hat", type=float, default=None, help="alternative hypothesis")
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--output", default=None)
    b.set_defaults(func=cmd_observability)
    return p


def _apply_env(parser: argparse.ArgumentParser, env) -> None:
    # STDEPTH_<DEST> replaces the argparse default of every matching option
    parsers = [parser]
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            parsers += list(action.choices.values())
    for p in parsers:
        for action in p._actions:
            if not action.option_strings or action.dest in ("help",):
                continue
            raw = env.get(cfgmod.ENV_PREFIX + action.dest.upper())
            if raw is None:
                continue
            if action.const is True:
                action.default = cfgmod._parse_bool(raw)
            else:
                action.default = action.type(raw) if action.type else raw


def main(argv=None, env=None) -> int:
    env = os.environ if env is None else env
    parser = build_parser()
    try:
        _apply_env(parser, env)
    except (ValueError, argparse.ArgumentTypeError) as e:
        print(f"stdepth: bad environment override: {e}", file=sys.stderr)
        return EXIT_CONFIG
    args = parser.parse_args(argv)
    args.env = env
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("stdepth: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (ConfigError, InvalidIntrinsicsError) as e:
        print(f"stdepth: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DimensionError, AlignmentError, OSError) as e:
        print(f"stdepth: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailureError, StDepthError) as e:
        print(f"stdepth: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
