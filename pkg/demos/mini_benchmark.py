"""Small end-to-end benchmark: synthesize, save, run, summarize.

Writes a dataset and benchmark outputs under the given directory (default
./mini_bench) and prints the summary that also lands in summary.json.

    python3 demos/mini_benchmark.py [out_dir]
"""
import json
import sys
from pathlib import Path

from ortholoc.bench.runner import run_benchmark
from ortholoc.pipeline import PipelineConfig
from ortholoc.sample import save_sample
from ortholoc.synth import generate_samples


def main(root="mini_bench"):
    root = Path(root)
    for s in generate_samples(8, seed=5, obliqueness=(0.0, 30.0)):
        save_sample(s, root / "data" / s.sample_id)
    summary = run_benchmark(root / "data", PipelineConfig(adhop_enabled=True), root / "out", seed=0)
    keys = ("n_samples", "n_failed", "median_te_m", "median_re_deg", "recall_1m1d_pct", "recall_5m5d_pct")
    print(json.dumps({k: summary[k] for k in keys}, indent=2))
    print(f"per-sample rows: {root / 'out' / 'results.csv'}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
