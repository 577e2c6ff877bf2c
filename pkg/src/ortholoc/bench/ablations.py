"""Ablation drivers: raster/query resolution, covisibility, domain shift and GT-confidence filtering.

Each driver reruns the benchmark once per setting and returns one row per
setting (the setting, a status and the summary fields). A setting that
cannot be applied is kept as a ``failed`` row and the sweep carries on.
"""

from __future__ import annotations

import csv
import json
from dataclasses import replace
from pathlib import Path

import cv2
import numpy as np

from ..errors import DegenerateOutput, OrthoLocError
from ..pipeline import PipelineConfig
from ..raster import resample
from ..sample import crop_covis
from ..synth.pairing import domain_shift
from .records import summarize, write_results_csv
from .runner import load_dataset, run_samples

SUMMARY_FIELDS = (
    "n_samples", "n_success", "n_failed",
    "median_me_px", "median_te_m", "median_re_deg", "median_rpe_px", "median_rfe_pct",
    "median_all_te_m", "median_all_re_deg",
    "recall_1m1d_pct", "recall_3m3d_pct", "recall_5m5d_pct",
)


def resample_query(sample, factor: float):
    """Resize the query image (area filter) and its point map (nearest) and rescale the camera."""
    K = sample.intrinsics.scaled(factor)
    W, H = K.width, K.height
    if W < 8 or H < 8:
        raise DegenerateOutput(f"query resampled by {factor} is only {W}x{H}")
    if (W, H) == (sample.intrinsics.width, sample.intrinsics.height):
        return sample
    img = cv2.resize(sample.query_image, (W, H), interpolation=cv2.INTER_AREA)
    h0, w0 = sample.point_map.shape[:2]
    cols = np.minimum(((np.arange(W) + 0.5) * w0 / W).astype(int), w0 - 1)
    rows = np.minimum(((np.arange(H) + 0.5) * h0 / H).astype(int), h0 - 1)
    pm = sample.point_map[rows[:, None], cols[None, :]]
    return sample.replace(query_image=img, point_map=pm, intrinsics=K)


def resample_rasters(sample, factor: float):
    dop = resample(sample.dop, factor, "bilinear")
    dsm = resample(sample.dsm, factor, "bilinear")
    return sample.replace(dop=dop, dsm=dsm)


def _row(param_name, value, records=None, error: str | None = None) -> dict:
    row = {param_name: value, "status": "ok" if error is None else "failed", "error": error or ""}
    summ = summarize(records) if records else {}
    for k in SUMMARY_FIELDS:
        row[k] = summ.get(k)
    return row


def write_table(rows, path) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in cols})


def _sweep(samples, cfg, values, param_name, make_transform, seed, out_dir, tag, workers=1, check=None):
    rows = []
    for v in values:
        try:
            if check is not None:
                check(v)
            transform = make_transform(v)
            recs = run_samples(samples, cfg if not callable(cfg) else cfg(v), seed, workers, transform)
        except (OrthoLocError, ValueError) as exc:
            rows.append(_row(param_name, v, error=f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(_row(param_name, v, recs))
        if out_dir is not None:
            d = Path(out_dir) / f"{tag}_{param_name}_{v}"
            d.mkdir(parents=True, exist_ok=True)
            write_results_csv(recs, d / "results.csv")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_table(rows, Path(out_dir) / f"ablation_{tag}.csv")
    return rows


def ablate_resolution(dataset, factors, cfg: PipelineConfig, target: str = "raster", seed: int = 0,
                      out_dir=None, workers: int = 1) -> list[dict]:
    """Resample rasters, query or both by each factor and rerun."""
    if target not in ("raster", "query", "both"):
        raise ValueError(f"unknown resolution target {target!r}")
    samples = load_dataset(dataset)

    def check(f):
        if not f > 0:
            raise DegenerateOutput(f"resolution factor {f} must be positive")
        # fail the whole row up front if the smallest raster would collapse
        for s in samples:
            if target != "query":
                for r in (s.dop, s.dsm):
                    if round(r.width * f) < 2 or round(r.height * f) < 2:
                        raise DegenerateOutput(f"factor {f} collapses a {r.width}x{r.height} raster")
            if target != "raster" and (round(s.intrinsics.width * f) < 8 or round(s.intrinsics.height * f) < 8):
                raise DegenerateOutput(f"factor {f} collapses the query image")

    def make(f):
        if f == 1:
            return None

        def t(s, _seed):
            if target in ("raster", "both"):
                s = resample_rasters(s, f)
            if target in ("query", "both"):
                s = resample_query(s, f)
            return s
        return t

    return _sweep(samples, cfg, factors, "factor", make, seed, out_dir, f"resolution_{target}", workers, check)


def ablate_covisibility(dataset, ratios, cfg: PipelineConfig, seed: int = 0, out_dir=None,
                        workers: int = 1) -> list[dict]:
    """Crop the reference rasters to each covisibility ratio and rerun."""
    for r in ratios:
        if not 0 < r <= 1:
            raise ValueError(f"covisibility ratio {r} must lie in (0, 1]")
    samples = load_dataset(dataset)

    def make(r):
        if r == 1:
            return None
        return lambda s, sd: crop_covis(s, r, rng_seed=sd)

    return _sweep(samples, cfg, ratios, "ratio", make, seed, out_dir, "covis", workers)


def ablate_domain(dataset, strengths, cfg: PipelineConfig, kind: str = "photometric", seed: int = 0,
                  out_dir=None, workers: int = 1) -> list[dict]:
    """Apply a simulated appearance and/or structure change of each strength to the reference data."""
    if kind not in ("photometric", "geometric", "both"):
        raise ValueError(f"unknown domain shift {kind!r}")
    samples = load_dataset(dataset)

    def make(st):
        if st == 0:
            return None
        return lambda s, sd: domain_shift(s, kind, st, sd)

    return _sweep(samples, cfg, strengths, "strength", make, seed, out_dir, f"domain_{kind}", workers)


def sweep_gt_confidence(dataset, taus=(0.0, 0.5, 0.95, 0.99), cfg: PipelineConfig | None = None, seed: int = 0,
                        out_dir=None, n_points: int = 500, gamma: float = 1.0, workers: int = 1) -> list[dict]:
    """Localise from oracle matches kept at confidence > tau.

    The pipeline's own confidence filter is switched off so that tau alone
    decides which oracle matches are used.
    """
    base = replace(cfg or PipelineConfig(), matcher="gt", min_conf=0.0)
    samples = load_dataset(dataset)

    def cfg_for(t):
        return replace(base, matcher_params={"n": n_points, "gamma": gamma, "tau": float(t)})

    return _sweep(samples, cfg_for, taus, "tau", lambda t: None, seed, out_dir, "gtconf", workers)


def rows_to_json(rows) -> str:
    return json.dumps(rows, indent=2)
