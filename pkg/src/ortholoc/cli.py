"""Command-line entry point: ``ortholoc synth|localize|calibrate|bench|ablate``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .bench import ablations
from .bench.metrics import evaluate_sample
from .bench.runner import run_benchmark
from .errors import OrthoLocError
from .pipeline import PipelineConfig, run_pipeline
from .sample import load_sample
from .synth import SceneSpec, generate_dataset
from .synth.pairing import anonymize


def _load_config(path) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    return PipelineConfig.from_dict(json.loads(Path(path).read_text()))


def _pair(vals):
    return tuple(float(v) for v in vals)


def cmd_synth(args) -> int:
    scene = SceneSpec.load(args.spec) if args.spec else None
    kw = dict(
        obliqueness=_pair(args.obliqueness), azimuth=_pair(args.azimuth), altitude=_pair(args.altitude),
        preset=args.preset, expansion=args.expansion, views_per_scene=args.views_per_scene,
    )
    paths = generate_dataset(args.out, args.views, args.seed, scene, **kw)
    if args.anonymize:
        from .sample import save_sample
        for i, p in enumerate(paths):
            save_sample(anonymize(load_sample(p), rng_seed=args.seed + i), p)
    print(f"wrote {len(paths)} samples to {args.out}")
    return 0


def _pose_dict(est) -> dict:
    if est is None:
        return None
    d = {
        "rotation": est.pose.rotation.tolist(),
        "translation": est.pose.translation.tolist(),
        "camera_center": est.pose.camera_center().tolist(),
        "mean_reproj_px": est.mean_reproj_px,
        "n_inliers": int(est.inlier_mask.sum()),
    }
    K = getattr(est, "intrinsics", None)
    if K is not None:
        d["intrinsics"] = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height}
    return d


def cmd_run(args, mode: str) -> int:
    cfg = _load_config(args.config)
    cfg = replace(cfg, mode=mode)
    if args.matcher:
        cfg = replace(cfg, matcher=args.matcher)
    if args.adhop:
        cfg = replace(cfg, adhop_enabled=True)
    sample = load_sample(args.sample)
    result = run_pipeline(sample, cfg, seed=args.seed)
    out = {
        "sample_id": sample.sample_id,
        "mode": mode,
        "success": result.success,
        "failure": result.failure,
        "accepted_refinement": result.accepted_refinement,
        "counts": result.counts,
        "initial": _pose_dict(result.initial),
        "refined": _pose_dict(result.refined),
        "final": _pose_dict(result.final),
    }
    if sample.gt_pose is not None:
        out["metrics"] = evaluate_sample(sample, result).as_dict()
        out["metrics"].pop("runtime_s", None)
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0 if result.success else 1


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    summary = run_benchmark(args.data, cfg, args.out, args.seed, args.workers, args.runtime)
    summary.pop("records", None)
    print(json.dumps({k: v for k, v in summary.items() if k != "meta"}, indent=2))
    return 0


_ABLATION_DEFAULTS = {
    "resolution": [1.0, 0.5, 0.25],
    "covis": [1.0, 0.5, 0.2, 0.1],
    "gtconf": [0.0, 0.5, 0.95, 0.99],
    "domain": [0.0, 0.25, 0.5, 1.0],
}


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    vals = args.values or _ABLATION_DEFAULTS[args.kind]
    common = dict(seed=args.seed, out_dir=args.out, workers=args.workers)
    if args.kind == "resolution":
        rows = ablations.ablate_resolution(args.data, vals, cfg, target=args.target, **common)
    elif args.kind == "covis":
        rows = ablations.ablate_covisibility(args.data, vals, cfg, **common)
    elif args.kind == "gtconf":
        rows = ablations.sweep_gt_confidence(args.data, vals, cfg, **common)
    else:
        rows = ablations.ablate_domain(args.data, vals, cfg, kind=args.shift, **common)
    print(ablations.rows_to_json(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ortholoc", description="Visual localization against orthophoto + DSM.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic dataset")
    s.add_argument("--spec", help="scene JSON (random scenes when omitted)")
    s.add_argument("--views", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--obliqueness", nargs=2, type=float, default=(0.0, 20.0), metavar=("LO", "HI"))
    s.add_argument("--azimuth", nargs=2, type=float, default=(-10.0, 10.0), metavar=("LO", "HI"))
    s.add_argument("--altitude", nargs=2, type=float, default=(45.0, 55.0), metavar=("LO", "HI"))
    s.add_argument("--preset", default="main", choices=["main", "appendix", "none"])
    s.add_argument("--expansion", type=float, default=0.0)
    s.add_argument("--views-per-scene", type=int, default=10)
    s.add_argument("--anonymize", action="store_true")

    for name in ("localize", "calibrate"):
        r = sub.add_parser(name, help=f"{name} one sample")
        r.add_argument("--sample", required=True)
        r.add_argument("--matcher", help="ncc | gt | random | csv:PATH")
        r.add_argument("--adhop", action="store_true")
        r.add_argument("--seed", type=int, default=0)
        r.add_argument("--config")
        r.add_argument("--out", help="write the result JSON here instead of stdout")

    b = sub.add_parser("bench", help="benchmark a dataset")
    b.add_argument("--data", required=True)
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--runtime", action="store_true", help="record wall time (breaks bit-identical reruns)")

    a = sub.add_parser("ablate", help="run an ablation sweep")
    a.add_argument("kind", choices=sorted(_ABLATION_DEFAULTS))
    a.add_argument("--data", required=True)
    a.add_argument("--config")
    a.add_argument("--out")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--values", nargs="+", type=float)
    a.add_argument("--target", default="raster", choices=["raster", "query", "both"])
    a.add_argument("--shift", default="photometric", choices=["photometric", "geometric", "both"])
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command in ("localize", "calibrate"):
            return cmd_run(args, args.command)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_ablate(args)
    except (OrthoLocError, ValueError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
