"""Command-line driver.

Subcommands: ``generate``, ``build``, ``check``, ``sync``, ``eval``,
``oneshot``.  Parameters come from a ``key = value`` file (``--config``),
environment variables ``TRIFOCAL_SYNC_<KEY>``, and ``--set key=value``, in
increasing order of precedence; ``--seed`` overrides every seed.

Exit codes: 0 success, 2 validation or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import fileio
from .block_tensor import build_block_tensor, check_block_properties
from .camera_geometry import GeometryError
from .evaluation import AlignmentError, evaluate_cameras
from .scenegen import CorruptionConfig, SceneConfig, SceneError, corrupt_blocks, generate_line_experiment, generate_scene
from .synchronization import OrphanCameraError, SyncConfig, SyncError, extract_cameras, synchronize
from .tensor_core import SvdConfig, ThresholdTooHighError
from .trifocal import EstimationError

log = logging.getLogger("trifocal_sync")

ENV_PREFIX = "TRIFOCAL_SYNC_"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
GENERATE_KEYS = {"source"}
SYNC_KEYS = {"svd_mode"}
NESTED_FIELDS = {"svd", "subspace"}


class ValidationError(ValueError):
    pass


def _convert(value: str, default, name: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if name == "thresholds":
            if value.strip().lower() in ("", "none"):
                return None
            return tuple(float(v) for v in value.split(","))
        return value
    except ValueError as exc:
        raise ValidationError(f"invalid value {value!r} for {name}") from exc


def _build_config(cls, params: dict, seed: int | None, **extra):
    """Instantiate a config dataclass from string parameters; unknown keys are ignored."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in params and f.name not in NESTED_FIELDS:
            default = f.default
            if f.name == "noise_rel":
                kwargs[f.name] = params[f.name]
                continue
            kwargs[f.name] = _convert(params[f.name], default, f.name)
    if seed is not None and "seed" in {f.name for f in dataclasses.fields(cls)}:
        kwargs["seed"] = seed
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{cls.__name__}: {exc}") from exc


def _check_keys(params: dict, *classes, allowed=()):
    known = set(allowed)
    for cls in classes:
        known |= {f.name for f in dataclasses.fields(cls) if f.name not in NESTED_FIELDS}
    unknown = sorted(set(params) - known)
    if unknown:
        raise ValidationError(f"unknown configuration key(s): {', '.join(unknown)}")


def gather_params(args) -> dict:
    params = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        params.update(fileio.read_key_values(path))
    for k, v in os.environ.items():
        if k.startswith(ENV_PREFIX) and k not in (ENV_PREFIX + "THREADS",):
            params[k[len(ENV_PREFIX):].lower()] = v
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = v.strip()
    if args.seed is not None:
        params.pop("seed", None)
    return params


def _seed(args, params):
    if args.seed is not None:
        return args.seed
    if "seed" in params:
        return _convert(params["seed"], 0, "seed")
    return None


def _require(path, what):
    if path is None:
        raise ValidationError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} not found: {p}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args, params) -> int:
    _check_keys(params, SceneConfig, CorruptionConfig, allowed=GENERATE_KEYS)
    seed = _seed(args, params)
    scfg = _build_config(SceneConfig, params, seed)
    source = params.get("source", "blocks")
    out = _out_dir(args)
    if source == "blocks":
        ccfg = _build_config(CorruptionConfig, params, seed)
        scene = generate_scene(scfg)
        bt, lam, _ = corrupt_blocks(build_block_tensor(scene.cameras), ccfg)
        fileio.write_scales(out / "scales.txt", lam)
        cams = scene.cameras
    elif source == "lines":
        bt, cams = generate_line_experiment(scfg)
        ccfg = None
    else:
        raise ValidationError("source must be 'blocks' or 'lines'")
    fileio.write_cameras(out / "cameras_gt.txt", cams)
    fileio.write_block_tensor(out / "tensor.txt", bt)
    meta = {"source": source}
    meta.update({f.name: getattr(scfg, f.name) for f in dataclasses.fields(scfg)})
    if ccfg is not None:
        meta.update({f.name: getattr(ccfg, f.name) for f in dataclasses.fields(ccfg)})
    fileio.write_key_values(out / "meta.txt", meta)
    print(f"wrote scene with {len(cams)} cameras ({scfg.layout}) to {out}")
    return EXIT_OK


def cmd_build(args, params) -> int:
    cams = fileio.read_cameras(_require(args.cameras, "camera file (--cameras)"))
    out = _out_dir(args)
    fileio.write_block_tensor(out / "tensor.txt", build_block_tensor(cams))
    print(f"wrote {out / 'tensor.txt'}")
    return EXIT_OK


def cmd_check(args, params) -> int:
    bt = fileio.read_block_tensor(_require(args.tensor, "tensor file (--tensor)"))
    if not bt.mask.all():
        raise ValidationError("property checks need a fully observed tensor")
    cams = fileio.read_cameras(_require(args.cameras, "camera file")) if args.cameras else None
    if cams is not None and len(cams) != bt.n:
        raise ValidationError(f"camera count {len(cams)} does not match tensor size {bt.n}")
    rep = check_block_properties(bt, calibrated=not args.uncalibrated, cameras=cams)
    rows = rep.rows()
    for name, res in rows[1:]:
        print(f"{name:24s} {res}")
    for f in rep.failures:
        print("FAIL", f)
    out = _out_dir(args)
    fileio.write_csv(out / "check.csv", [dict(zip(rows[0], r)) for r in rows[1:]], rows[0])
    return EXIT_NUMERICAL if (args.strict and not rep.passed) else EXIT_OK


def cmd_sync(args, params) -> int:
    _check_keys(params, SyncConfig, allowed=SYNC_KEYS)
    seed = _seed(args, params)
    try:
        svd = SvdConfig(mode=params.get("svd_mode", "exact"), seed=seed or 0)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    cfg = _build_config(SyncConfig, params, seed, svd=svd)
    bt = fileio.read_block_tensor(_require(args.tensor, "tensor file (--tensor)"))
    res = synchronize(bt, cfg)
    out = _out_dir(args)
    fileio.write_cameras(out / "cameras.txt", res.cameras)
    rows = res.diagnostics_rows()
    fileio.write_csv(out / "diagnostics.csv", rows, rows[0].keys())
    fileio.write_key_values(out / "sync_info.txt", {
        "iterations": res.iterations,
        "stop_reason": res.stop_reason,
        "thresholds": ",".join(fileio.fmt(l) for l in res.thresholds),
    })
    print(f"stopped after {res.iterations} iterations ({res.stop_reason}); wrote {out / 'cameras.txt'}")
    return EXIT_OK


def cmd_oneshot(args, params) -> int:
    bt = fileio.read_block_tensor(_require(args.tensor, "tensor file (--tensor)"))
    out = _out_dir(args)
    fileio.write_cameras(out / "cameras.txt", extract_cameras(bt.tensor, mode=args.mode))
    print(f"wrote {out / 'cameras.txt'}")
    return EXIT_OK


SUMMARY_COLUMNS = ("meanR_deg", "medianR_deg", "meanT", "medianT", "alignment_residual")


def cmd_eval(args, params) -> int:
    est = fileio.read_cameras(_require(args.cameras, "estimated camera file (--cameras)"))
    gt = fileio.read_cameras(_require(args.groundtruth, "ground-truth camera file (--groundtruth)"))
    if len(est) != len(gt):
        raise ValidationError(f"camera counts differ: {len(est)} estimated, {len(gt)} ground truth")
    if not all(c.has_decomposition for c in gt):
        raise ValidationError("ground-truth file needs a DECOMPOSITION section")
    summary, al = evaluate_cameras(np.vstack([c.P for c in est]), gt)
    out = _out_dir(args)
    srow = dict(summary.summary(), alignment_residual=al.residual)
    fileio.write_csv(out / "eval_summary.csv", [srow], SUMMARY_COLUMNS)
    per = [{"camera": i, "rotation_deg": float(r), "location": float(t)}
           for i, (r, t) in enumerate(zip(summary.rotation_deg, summary.location))]
    fileio.write_csv(out / "eval_cameras.csv", per, ("camera", "rotation_deg", "location"))
    print(", ".join(f"{k}={fileio.fmt(v)}" for k, v in srow.items()))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "build": cmd_build,
    "check": cmd_check,
    "sync": cmd_sync,
    "eval": cmd_eval,
    "oneshot": cmd_oneshot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value parameter file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter")
    common.add_argument("--seed", type=int, default=None, help="override every seed")
    common.add_argument("--threads", type=int, default=int(os.environ.get(ENV_PREFIX + "THREADS", 0)),
                        help="BLAS threads, 0 = library default")
    common.add_argument("--out-dir", default=".", help="output directory (created if missing)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="trifocal-sync", description="Block trifocal tensor synchronization")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="synthetic scene and corrupted block tensor")
    b = sub.add_parser("build", parents=[common], help="block tensor from a camera file")
    b.add_argument("--cameras")
    c = sub.add_parser("check", parents=[common], help="structural property report")
    c.add_argument("--tensor")
    c.add_argument("--cameras", help="cameras with decomposition, enables the fundamental-matrix check")
    c.add_argument("--uncalibrated", action="store_true", help="skip the equal-singular-value check")
    c.add_argument("--strict", action="store_true", help="exit 3 when a check fails")
    s = sub.add_parser("sync", parents=[common], help="synchronize an observed block tensor")
    s.add_argument("--tensor")
    e = sub.add_parser("eval", parents=[common], help="pose errors against ground truth")
    e.add_argument("--cameras")
    e.add_argument("--groundtruth")
    o = sub.add_parser("oneshot", parents=[common], help="cameras straight from a tensor's flattening")
    o.add_argument("--tensor")
    o.add_argument("--mode", type=int, choices=(2, 3), default=2)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 0:
        print("error: --threads must be >= 0", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        params = gather_params(args)
        with threadpool_limits(limits=args.threads or None):
            return COMMANDS[args.command](args, params)
    except (ValidationError, OrphanCameraError, fileio.FormatError, SceneError, GeometryError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SyncError, AlignmentError, EstimationError, ThresholdTooHighError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
