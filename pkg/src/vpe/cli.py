"""``vpe`` command line: filter, encode, eval, synth, run.

Exit codes: 0 ok, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import InputError, NumericError, PointSet, VPEError
from .filtering import FilterParams, filter_virtual, merge
from .io import (PipelineConfig, default_config_path, load_config, read_labels, read_points_bin,
                 write_labels, write_points_bin)
from .metrics import evaluate
from .model import SegmentationNet
from .parallel import thread_limit
from .pipeline import PipelineError, run_pipeline
from .projection import read_calibration, write_calibration
from .report import write_json, write_report
from .synth import CLASS_NAMES, SceneSpec, synth_scene

log = logging.getLogger("vpe")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _calibs(paths):
    return [read_calibration(p) for p in paths] if paths else None


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else load_config(default_config_path())
    return cfg.override(
        seed=getattr(args, "seed", None),
        filter_a=getattr(args, "a", None),
        filter_b=getattr(args, "b", None),
        filter_s=getattr(args, "s", None),
        filter_D=getattr(args, "D", None),
        filter_prefilter_radius=getattr(args, "radius", None),
        num_classes=getattr(args, "num_classes", None),
    )


def _add_filter_flags(p):
    p.add_argument("-a", type=float, help="voxel-scale adjustment (default 5)")
    p.add_argument("-b", type=float, help="distance adjustment in metres (default 20)")
    p.add_argument("-s", type=float, help="filter voxel size in metres (default 0.4)")
    p.add_argument("-D", type=float, help="near/far distance boundary in metres (default 10)")
    p.add_argument("--radius", type=float, help="pixel radius of the prefilter (default 2)")


def cmd_synth(args) -> int:
    spec = SceneSpec(sigma=args.sigma, outliers=args.outliers, cameras=args.cameras)
    real, virtual, calibs, _ = synth_scene(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_points_bin(out / "real.bin", real)
    write_labels(out / "real.label", real.labels)
    write_points_bin(out / "virtual.bin", virtual)
    write_labels(out / "virtual.label", virtual.labels)
    for i, c in enumerate(calibs):
        write_calibration(out / ("calib.txt" if i == 0 else f"calib_{i}.txt"), c)
    print(json.dumps({"real": len(real), "virtual": len(virtual), "cameras": len(calibs), "out": str(out)}))
    return EXIT_OK


def cmd_filter(args) -> int:
    cfg = _config(args)
    real = read_points_bin(args.real)
    virtual = read_points_bin(args.virtual)
    selected, stats = filter_virtual(real, virtual, _calibs(args.calib), cfg.filter)
    if args.out:
        write_points_bin(args.out, selected)
    if args.stats:
        write_json(args.stats, stats.to_dict())
    print(json.dumps(stats.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    calibs = _calibs(args.calib)
    points = read_points_bin(args.points)
    if args.virtual:
        pseudo, _ = filter_virtual(points, read_points_bin(args.virtual), calibs, cfg.filter)
        points = merge(points, pseudo)
    from .core import crop

    points = crop(points, cfg.voxel_config)
    net = SegmentationNet.load(args.weights, cfg) if args.weights else SegmentationNet.random(cfg)
    if args.save_weights:
        net.save(args.save_weights)
    feats = net.encode(points, calibs, cfg)
    np.save(args.out, feats.astype(np.float32))
    print(json.dumps({"points": len(points), "channels": int(feats.shape[1]), "out": str(args.out)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = read_labels(args.pred)
    truth = read_labels(args.truth)
    points = read_points_bin(args.points) if args.points else None
    bins = [float(b) for b in args.bins.split(",")] if args.bins else None
    kw = {"bins": bins} if bins else {}
    report = evaluate(pred, truth, args.num_classes, points=points, calib=_calibs(args.calib),
                      ignore_id=args.ignore_id, mode=args.mode, **kw)
    if args.out:
        write_report(report, args.out, plots=not args.no_plots)
    print(report.to_json())
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.no_filter:
        cfg = replace(cfg, filter_enabled=False)
    class_names = None
    if args.data or args.real:
        root = Path(args.data) if args.data else None
        real_path = args.real or root / "real.bin"
        real = read_points_bin(real_path)
        label_path = args.labels or (root / "real.label" if root and (root / "real.label").exists() else None)
        if label_path:
            real = real.with_labels(read_labels(label_path))
        virt_path = args.virtual or (root / "virtual.bin" if root and (root / "virtual.bin").exists() else None)
        virtual = read_points_bin(virt_path) if virt_path else None
        calib_paths = args.calib or (sorted(root.glob("calib*.txt")) if root else [])
        calibs = _calibs(calib_paths)
    else:
        real, virtual, calibs, _ = synth_scene(SceneSpec(), cfg.seed)
        class_names = CLASS_NAMES
    net = SegmentationNet.load(args.weights, cfg) if args.weights else SegmentationNet.random(cfg)
    dump = set(args.dump_stage or [])
    result = run_pipeline(cfg, real, virtual, calibs, net=net, keep_trace=bool(dump))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "predictions.label", result.pred)
    if result.filter_stats is not None:
        write_json(out / "filter_stats.json", result.filter_stats.to_dict())
    write_json(out / "summary.json", result.summary())
    if result.report is not None:
        write_report(result.report, out, class_names, plots=not args.no_plots)
    if dump:
        dump_dir = out / "stages"
        dump_dir.mkdir(exist_ok=True)
        names = sorted(result.trace) if "all" in dump else sorted(dump)
        for name in names:
            if name not in result.trace:
                raise InputError(f"unknown stage {name!r}; available: {', '.join(sorted(result.trace))}")
            np.save(dump_dir / f"{name}.npy", result.trace[name])
    print(json.dumps({"out": str(out), "miou": None if result.report is None else result.report.miou,
                      "kept_virtual": None if result.filter_stats is None else result.filter_stats.kept}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpe", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, help="cap on worker threads (overrides VPE_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic scene (points, labels, calibration)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float, default=SceneSpec.sigma, help="virtual depth noise (m)")
    s.add_argument("--outliers", type=float, default=SceneSpec.outliers, help="virtual outlier fraction")
    s.add_argument("--cameras", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("filter", help="select reliable pseudo points from virtual points")
    f.add_argument("--real", required=True)
    f.add_argument("--virtual", required=True)
    f.add_argument("--calib", action="append", help="calibration file; repeat for a camera rig")
    f.add_argument("--config")
    _add_filter_flags(f)
    f.add_argument("--out", help="write selected points (.bin)")
    f.add_argument("--stats", help="write FilterStats JSON here as well as to stdout")
    f.set_defaults(func=cmd_filter)

    e = sub.add_parser("encode", help="run the sparse encoder and save per-point features (.npy)")
    e.add_argument("--points", required=True)
    e.add_argument("--virtual")
    e.add_argument("--calib", action="append")
    e.add_argument("--config")
    e.add_argument("--weights", help="VPEW0001 weight file")
    e.add_argument("--save-weights", help="write the (possibly random) weights used")
    e.add_argument("--seed", type=int)
    _add_filter_flags(e)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    v = sub.add_parser("eval", help="score predictions against ground truth")
    v.add_argument("--pred", required=True)
    v.add_argument("--truth", required=True)
    v.add_argument("--points", help="point file, enables distance bins")
    v.add_argument("--calib", action="append", help="enables co-visible point mIoU")
    v.add_argument("--num-classes", type=int, required=True)
    v.add_argument("--ignore-id", type=int)
    v.add_argument("--mode", choices=("present", "fixed"), default="present")
    v.add_argument("--bins", help="comma-separated range edges, e.g. 0,20,50,inf")
    v.add_argument("--out", help="directory for report.json, CSV tables and figures")
    v.add_argument("--no-plots", action="store_true")
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="full pipeline; defaults to the bundled synthetic scene")
    r.add_argument("--config")
    r.add_argument("--data", help="directory written by 'vpe synth'")
    r.add_argument("--real")
    r.add_argument("--labels")
    r.add_argument("--virtual")
    r.add_argument("--calib", action="append")
    r.add_argument("--weights")
    r.add_argument("--seed", type=int)
    r.add_argument("--no-filter", action="store_true")
    _add_filter_flags(r)
    r.add_argument("--dump-stage", action="append", metavar="NAME",
                   help="save an intermediate as .npy (repeatable; 'all' for every stage)")
    r.add_argument("--out", default="vpe_out")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit(args.threads):
            return args.func(args)
    except PipelineError as exc:
        print(f"vpe: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericError as exc:
        print(f"vpe: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (VPEError, OSError, ValueError) as exc:
        print(f"vpe: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
