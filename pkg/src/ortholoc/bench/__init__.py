from .ablations import ablate_covisibility, ablate_domain, ablate_resolution, sweep_gt_confidence
from .metrics import MetricBundle, compute_metrics, evaluate_sample, matching_error, pose_errors, recall_flags
from .records import RESULT_COLUMNS, ResultRecord, read_results_csv, summarize, write_results_csv
from .runner import load_dataset, run_benchmark, run_samples, sample_seed
