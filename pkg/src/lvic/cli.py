"""Command-line entry point: ``lvic {paint,synth,experiment,embed,validate,bench}``.

Machine-readable results go to stdout as one JSON line; diagnostics go to
stderr. Any lvic or OS error exits with status 1 and writes no output file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path


from . import io as lio
from .errors import ConfigurationError, LvicError
from .fusion import embed, init_params
from .painter import PaintLayout, paint_cloud, resolve_threads
from .synth import SceneConfig, generate_scene, miscalibration_experiment, parse_noise, report_csv

log = logging.getLogger("lvic")

DEPTH_NAME = "{}.lvdm"
FEATURE_NAME = "{}.lvfm"


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    sys.stdout.flush()


def _positive(name: str, value: int | None) -> None:
    if value is not None and value < 1:
        raise ConfigurationError(f"--{name} must be >= 1, got {value}")


def cmd_paint(args: argparse.Namespace) -> int:
    if args.channels < 3:
        raise ConfigurationError(f"--channels must be >= 3, got {args.channels}")
    if args.dim is not None and args.dim < 0:
        raise ConfigurationError(f"--dim must be >= 0, got {args.dim}")
    _positive("stride", args.stride)
    threads = resolve_threads(args.threads)

    rig = lio.read_calibration(args.calib)
    depths, feats = [], []
    for cam in rig:
        dpath = Path(args.depth_dir) / DEPTH_NAME.format(cam.camera_id)
        fpath = Path(args.feat_dir) / FEATURE_NAME.format(cam.camera_id)
        if not dpath.is_file():
            raise ConfigurationError(f"camera {cam.camera_id}: missing depth file {dpath}")
        if not fpath.is_file():
            raise ConfigurationError(f"camera {cam.camera_id}: missing feature file {fpath}")
        depths.append(lio.read_depth(dpath))
        fm = lio.read_feature(fpath)
        if args.dim is not None and fm.d != args.dim:
            raise ConfigurationError(f"camera {cam.camera_id}: {fpath} has d={fm.d}, --dim is {args.dim}")
        if args.stride is not None and fm.stride != args.stride:
            raise ConfigurationError(
                f"camera {cam.camera_id}: {fpath} has stride={fm.stride}, --stride is {args.stride}"
            )
        feats.append(fm)
    d = args.dim if args.dim is not None else (feats[0].d if feats else 0)
    cloud = lio.read_cloud(args.cloud, args.channels)

    t0 = time.perf_counter()
    painted = paint_cloud(cloud, rig, depths, feats, PaintLayout(cloud.c, d), threads)
    log.info("painted %d points in %.3f s", painted.n, time.perf_counter() - t0)
    lio.write_painted(args.out, painted)
    _emit(painted.summary())
    return 0


def _scene_config(args: argparse.Namespace) -> SceneConfig:
    kw = {"seed": args.seed}
    for flag, key in (("points", "n_points"), ("cameras", "n_cameras"), ("occluders", "n_occluders"),
                      ("width", "width"), ("height", "height"), ("focal", "focal_px"),
                      ("dim", "feature_dim"), ("stride", "stride"), ("threshold", "threshold_m")):
        value = getattr(args, flag, None)
        if value is not None:
            kw[key] = value
    if getattr(args, "noise", None):
        kw["noise"] = parse_noise(args.noise)
    return SceneConfig(**kw)


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _scene_config(args)
    scene = generate_scene(cfg, threads=resolve_threads(args.threads))
    out = Path(args.out)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    (out / "feat").mkdir(parents=True, exist_ok=True)
    lio.write_cloud(out / "cloud.bin", scene.cloud)
    lio.write_calibration(out / "calib.json", scene.rig)
    for cam, dm, fm in zip(scene.rig, scene.depths, scene.feats):
        lio.write_depth(out / "depth" / DEPTH_NAME.format(cam.camera_id), dm)
        lio.write_feature(out / "feat" / FEATURE_NAME.format(cam.camera_id), fm)
    lio.write_weights(out / "weights.lvfw", init_params(cfg.feature_dim, 16, seed=cfg.seed))
    lio.atomic_write(out / "scene.json", (cfg.to_json() + "\n").encode())
    _emit({
        "out": str(out),
        "n": scene.cloud.n,
        "c": scene.cloud.c,
        "d": cfg.feature_dim,
        "cameras": len(scene.rig),
        "seed": cfg.seed,
    })
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _scene_config(args)
    rows = miscalibration_experiment(cfg, threads=resolve_threads(args.threads))
    text = report_csv(rows)
    if args.out:
        lio.atomic_write(args.out, text.encode("utf-8"))
        _emit({"out": str(args.out), "seed": cfg.seed, "rows": [r.__dict__ for r in rows]})
    else:
        sys.stdout.write(text)
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    painted = lio.read_painted(args.cloud)
    params = lio.read_weights(args.weights)
    if params.d != painted.d:
        raise ConfigurationError(f"{args.weights} expects d={params.d}, {args.cloud} has d={painted.d}")
    emb = embed(params, painted.values, painted.layout)
    lio.write_embeddings(args.out, emb)
    _emit({"n": int(emb.shape[0]), "e": int(params.e), "out": str(args.out)})
    return 0


def _validate_one(path: Path, channels: int | None) -> dict:
    if path.suffix == ".json":
        rig = lio.read_calibration(path)
        return {"path": str(path), "kind": "calibration", "cameras": len(rig)}
    head = path.read_bytes()[:4]
    if head in lio.MAGICS or channels is None:
        kind, _ = lio.read_any(path)
        return {"path": str(path), "kind": kind}
    cloud = lio.read_cloud(path, channels)
    return {"path": str(path), "kind": "cloud", "n": cloud.n}


def cmd_validate(args: argparse.Namespace) -> int:
    status = 0
    results = []
    for name in args.files:
        try:
            doc = _validate_one(Path(name), args.channels)
            doc["ok"] = True
        except (LvicError, OSError) as exc:
            print(f"lvic validate: error: {exc}", file=sys.stderr)
            doc = {"path": name, "ok": False, "error": str(exc)}
            status = 1
        results.append(doc)
    _emit({"ok": status == 0, "files": results})
    return status


def cmd_bench(args: argparse.Namespace) -> int:
    threads = resolve_threads(args.threads)
    cfg = SceneConfig(seed=args.seed, n_points=args.points, n_cameras=args.cameras)
    timings = {}
    t0 = time.perf_counter()
    scene = generate_scene(cfg, threads=threads)
    timings["generate_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    painted = paint_cloud(scene.cloud, scene.rig, scene.depths, scene.feats, scene.layout, threads)
    timings["paint_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    blob = lio.painted_to_bytes(painted)
    digest = hashlib.sha256(blob).hexdigest()
    timings["hash_s"] = time.perf_counter() - t0
    if args.out:
        lio.atomic_write(args.out, blob)

    summary = painted.summary()
    _emit({
        "n": painted.n,
        "cameras": len(scene.rig),
        "threads": threads,
        "painted_frac": summary["painted_frac"],
        "points_per_s": painted.n / timings["paint_s"] if timings["paint_s"] > 0 else float("inf"),
        "timings": timings,
        "sha256": digest,
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lvic", description="Depth-aware LiDAR point painting.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def threads_flag(sp):
        sp.add_argument("--threads", type=int, help="worker threads (default: $LVIC_THREADS or CPU count)")

    sp = sub.add_parser("paint", help="paint a raw LiDAR sweep")
    sp.add_argument("--cloud", required=True, help="headerless little-endian f32 sweep")
    sp.add_argument("--channels", type=int, required=True, help="channels per point (x, y, z first)")
    sp.add_argument("--calib", required=True, help="calibration JSON")
    sp.add_argument("--depth-dir", required=True, help="directory holding <camera_id>.lvdm")
    sp.add_argument("--feat-dir", required=True, help="directory holding <camera_id>.lvfm")
    sp.add_argument("--out", required=True, help="painted cloud (.lvpc) to write")
    sp.add_argument("--dim", type=int, help="expected texture dimension d")
    sp.add_argument("--stride", type=int, help="expected feature stride")
    threads_flag(sp)
    sp.set_defaults(func=cmd_paint)

    def scene_flags(sp):
        sp.add_argument("--seed", type=int, default=1)
        sp.add_argument("--points", type=int)
        sp.add_argument("--cameras", type=int)
        sp.add_argument("--occluders", type=int)
        sp.add_argument("--width", type=int, help="image width in pixels")
        sp.add_argument("--height", type=int, help="image height in pixels")
        sp.add_argument("--focal", type=float, help="focal length in pixels")
        sp.add_argument("--dim", type=int)
        sp.add_argument("--stride", type=int)
        threads_flag(sp)

    sp = sub.add_parser("synth", help="write a synthetic scene fixture")
    scene_flags(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("experiment", help="run the miscalibration experiment")
    scene_flags(sp)
    sp.add_argument("--noise", help='rotation degrees "0,0.5,1,2" or "deg:m" pairs')
    sp.add_argument("--threshold", type=float, help="|delta_z| exceedance threshold in meters")
    sp.add_argument("--out", help="CSV path (default: CSV on stdout)")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("embed", help="embed a painted cloud with fusion weights")
    sp.add_argument("--cloud", required=True, help="painted cloud (.lvpc)")
    sp.add_argument("--weights", required=True, help="fusion weights (.lvfw)")
    sp.add_argument("--out", required=True, help="embeddings (.lvem) to write")
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("validate", help="check files against their formats")
    sp.add_argument("files", nargs="+")
    sp.add_argument("--channels", type=int, help="channel count for headerless sweeps")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("bench", help="time painting of a large synthetic sweep")
    sp.add_argument("--points", type=int, default=1_000_000)
    sp.add_argument("--cameras", type=int, default=6)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", help="also write the painted cloud here")
    threads_flag(sp)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (LvicError, OSError) as exc:
        print(f"lvic {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
