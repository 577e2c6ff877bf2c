"""Batch runner: evaluate a pipeline config over a set of samples."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ..errors import EmptyDataset, OrthoLocError
from ..pipeline import LocResult, PipelineConfig, run_pipeline
from ..sample import list_sample_dirs, load_sample
from .metrics import evaluate_sample
from .records import ResultRecord, summarize, write_results_csv


def sample_seed(global_seed: int, sample_id: str) -> int:
    """Per-sample seed derived from the global seed and the sample id (stable across runs and platforms)."""
    h = hashlib.sha256(f"{int(global_seed)}:{sample_id}".encode()).digest()
    return int.from_bytes(h[:4], "little")


def load_dataset(source) -> list:
    """A list of samples from a directory of sample dirs (or pass a list through)."""
    if isinstance(source, (str, Path)):
        dirs = list_sample_dirs(source)
        if not dirs:
            raise EmptyDataset(f"no samples under {source}")
        return [load_sample(d) for d in dirs]
    samples = list(source)
    if not samples:
        raise EmptyDataset("empty sample list")
    return samples


def make_record(sample, result: LocResult, cfg: PipelineConfig, record_runtime: bool = False) -> ResultRecord:
    fin = evaluate_sample(sample, result, final=True)
    ini = evaluate_sample(sample, result, final=False)
    final = result.final
    return ResultRecord(
        sample_id=sample.sample_id,
        mode=cfg.mode,
        matcher=cfg.matcher,
        adhop=cfg.adhop_enabled,
        success=result.success,
        accepted_refinement=result.accepted_refinement,
        failure=result.failure or "",
        # counts describe the stage that produced the final estimate
        n_matches=int(result.counts.get("refined_matches" if result.accepted_refinement else "matches", 0)),
        n_inliers=0 if final is None else int(final.inlier_mask.sum()),
        me_px=fin.me_px,
        te_m=fin.te_m,
        re_deg=fin.re_deg,
        rpe_px=fin.rpe_px,
        rfe_pct=fin.rfe_pct,
        recall_1m1d=fin.recall_1m1d,
        recall_3m3d=fin.recall_3m3d,
        recall_5m5d=fin.recall_5m5d,
        me_initial_px=ini.me_px,
        te_initial_m=ini.te_m,
        initial_err_px=None if result.initial is None else float(result.initial.mean_reproj_px),
        final_err_px=None if final is None else float(final.mean_reproj_px),
        # wall time breaks bit-identical reruns, so it is opt-in
        runtime_s=result.runtime_s if record_runtime else None,
    )


def _failed_record(sample_id: str, cfg: PipelineConfig, why: str) -> ResultRecord:
    return ResultRecord(sample_id, cfg.mode, cfg.matcher, cfg.adhop_enabled, False, False, why)


def evaluate_one(sample, cfg: PipelineConfig, seed: int = 0, transform=None, record_runtime: bool = False):
    """Run and score one sample. ``transform(sample, seed)`` may alter it first (ablations)."""
    s_seed = sample_seed(seed, sample.sample_id)
    try:
        if transform is not None:
            sample = transform(sample, s_seed)
        result = run_pipeline(sample, cfg, seed=s_seed)
    except (OrthoLocError, ValueError) as exc:
        return _failed_record(sample.sample_id, cfg, f"{type(exc).__name__}: {exc}")
    return make_record(sample, result, cfg, record_runtime)


def run_samples(samples, cfg: PipelineConfig, seed: int = 0, workers: int = 1, transform=None,
                record_runtime: bool = False) -> list[ResultRecord]:
    """Records in sample-id order, whatever the evaluation order."""
    samples = sorted(samples, key=lambda s: s.sample_id)

    def job(s):
        return evaluate_one(s, cfg, seed, transform, record_runtime)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(job, samples))
    return [job(s) for s in samples]


def write_outputs(records, out_dir, meta: dict | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(records, out / "results.csv")
    summary = summarize(records)
    if meta:
        summary["meta"] = meta
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def run_benchmark(dataset, cfg: PipelineConfig, out_dir=None, seed: int = 0, workers: int = 1,
                  record_runtime: bool = False, transform=None) -> dict:
    """Evaluate every sample; write results.csv and summary.json when ``out_dir`` is given."""
    samples = load_dataset(dataset)
    records = run_samples(samples, cfg, seed, workers, transform, record_runtime)
    meta = {"seed": int(seed), "config": _jsonable(cfg.to_dict())}
    if out_dir is not None:
        summary = write_outputs(records, out_dir, meta)
    else:
        summary = summarize(records)
        summary["meta"] = meta
    summary["records"] = records
    return summary


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    return d
