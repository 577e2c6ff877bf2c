"""Per-sample result rows, their CSV form and the set-level summary."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .metrics import RECALL_THRESHOLDS


@dataclass
class ResultRecord:
    sample_id: str
    mode: str
    matcher: str
    adhop: bool
    success: bool
    accepted_refinement: bool
    failure: str = ""
    n_matches: int = 0
    n_inliers: int = 0
    me_px: float | None = None
    te_m: float | None = None
    re_deg: float | None = None
    rpe_px: float | None = None
    rfe_pct: float | None = None
    recall_1m1d: bool = False
    recall_3m3d: bool = False
    recall_5m5d: bool = False
    me_initial_px: float | None = None
    te_initial_m: float | None = None
    initial_err_px: float | None = None
    final_err_px: float | None = None
    runtime_s: float | None = None


RESULT_COLUMNS = [f.name for f in fields(ResultRecord)]
METRIC_COLUMNS = ("me_px", "te_m", "re_deg", "rpe_px", "rfe_pct")
RECALL_COLUMNS = ("recall_1m1d", "recall_3m3d", "recall_5m5d")
_BOOL = {"adhop", "success", "accepted_refinement", *RECALL_COLUMNS}
_INT = {"n_matches", "n_inliers"}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        # repr round-trips doubles exactly
        return repr(float(v))
    return str(v)


def write_results_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in RESULT_COLUMNS])


def read_results_csv(path) -> list[ResultRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for c in RESULT_COLUMNS:
                v = row.get(c, "")
                if c in _BOOL:
                    kw[c] = v == "1"
                elif c in _INT:
                    kw[c] = int(v or 0)
                elif c in ("sample_id", "mode", "matcher", "failure"):
                    kw[c] = v
                else:
                    kw[c] = float(v) if v != "" else None
            out.append(ResultRecord(**kw))
    return out


def _median(vals) -> float | None:
    vals = [v for v in vals if v is not None]
    return float(np.median(vals)) if vals else None


def summarize(records) -> dict:
    """Medians and recall percentages over a result set.

    Recall counts failed samples as misses. Medians come in two flavours:
    over successful estimates only, and over all samples with failures set
    to +inf (reported as ``null`` in JSON when the median itself is infinite).
    """
    records = list(records)
    n = len(records)
    ok = [r for r in records if r.success]
    out = {
        "n_samples": n,
        "n_success": len(ok),
        "n_failed": n - len(ok),
        "median_convention": {
            "median_*": "over successful estimates only",
            "median_all_*": "over all samples, failures counted as +inf",
            "recall_*": "percentage of all samples; failures count as misses",
        },
    }
    for c in METRIC_COLUMNS:
        out[f"median_{c}"] = _median(getattr(r, c) for r in ok)
        allv = [getattr(r, c) if r.success and getattr(r, c) is not None else math.inf for r in records]
        m = float(np.median(allv)) if allv else None
        out[f"median_all_{c}"] = m if m is not None and math.isfinite(m) else None
    for c, (tm, td) in zip(RECALL_COLUMNS, RECALL_THRESHOLDS):
        out[f"{c}_pct"] = 100.0 * sum(bool(getattr(r, c)) for r in records) / n if n else 0.0
    out["accepted_refinement_pct"] = 100.0 * sum(r.accepted_refinement for r in records) / n if n else 0.0
    return out


def summary_path(out_dir) -> Path:
    return Path(out_dir) / "summary.json"
