"""Per-sample accuracy metrics: matching, translation, rotation, keypoint reprojection and focal errors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import MissingGroundTruth
from ..geometry import CameraIntrinsics, CameraPose, OrthoCamera, project_ortho, project_points, rotation_angle_deg

RECALL_THRESHOLDS = ((1.0, 1.0), (3.0, 3.0), (5.0, 5.0))


@dataclass
class MetricBundle:
    me_px: float | None = None
    te_m: float | None = None
    re_deg: float | None = None
    rpe_px: float | None = None
    rfe_pct: float | None = None
    recall_1m1d: bool = False
    recall_3m3d: bool = False
    recall_5m5d: bool = False
    runtime_s: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def pose_errors(est: CameraPose, gt: CameraPose) -> tuple[float, float]:
    """(camera-centre distance in metres, rotation angle in degrees)."""
    te = float(np.linalg.norm(est.camera_center() - gt.camera_center()))
    return te, rotation_angle_deg(est.rotation, gt.rotation)


def recall_flags(te: float | None, re: float | None) -> tuple[bool, ...]:
    if te is None or re is None:
        return tuple(False for _ in RECALL_THRESHOLDS)
    return tuple(bool(te <= tm and re <= td) for tm, td in RECALL_THRESHOLDS)


def keypoint_rpe(points, est_pose, est_K, gt_pose, gt_K) -> float | None:
    """Median pixel distance between keypoint projections under the estimated and true cameras."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return None
    a, _ = project_points(points, est_K, est_pose)
    b, _ = project_points(points, gt_K, gt_pose)
    d = np.linalg.norm(a - b, axis=1)
    d = np.where(np.isfinite(d), d, np.inf)
    return float(np.median(d))


def oracle_dop_coords(sample, query_pts: np.ndarray):
    """True DOP pixel of each query pixel via the point map (bilinear where the 2x2 patch is valid)."""
    q = np.atleast_2d(np.asarray(query_pts, dtype=float))
    pm = sample.point_map.astype(float)
    H, W = pm.shape[:2]
    x = np.clip(q[:, 0], 0, W - 1)
    y = np.clip(q[:, 1], 0, H - 1)
    c0 = np.minimum(np.floor(x).astype(int), W - 2 if W > 1 else 0)
    r0 = np.minimum(np.floor(y).astype(int), H - 2 if H > 1 else 0)
    c1, r1 = np.minimum(c0 + 1, W - 1), np.minimum(r0 + 1, H - 1)
    wx, wy = (x - c0)[:, None], (y - r0)[:, None]
    p00, p01, p10, p11 = pm[r0, c0], pm[r0, c1], pm[r1, c0], pm[r1, c1]
    bil = (p00 * (1 - wx) + p01 * wx) * (1 - wy) + (p10 * (1 - wx) + p11 * wx) * wy
    near = pm[np.clip(np.round(y).astype(int), 0, H - 1), np.clip(np.round(x).astype(int), 0, W - 1)]
    P = np.where(np.all(np.isfinite(bil), 1, keepdims=True), bil, near)
    ok = np.all(np.isfinite(P), 1)
    return project_ortho(np.where(ok[:, None], P, 0.0), OrthoCamera(sample.dop.georef)), ok


def matching_error(sample, corrs) -> float | None:
    if corrs is None or len(corrs) == 0:
        return None
    true, ok = oracle_dop_coords(sample, corrs.query_pts)
    if not ok.any():
        return None
    return float(np.median(np.linalg.norm(corrs.dop_pts[ok] - true[ok], axis=1)))


def compute_metrics(result, gt_pose: CameraPose | None, gt_intrinsics: CameraIntrinsics,
                    gt_corr_oracle=None, keypoints3d=None, final: bool = True) -> MetricBundle:
    """Metrics of ``result.final`` (or ``result.initial`` with ``final=False``).

    ``gt_corr_oracle`` maps the correspondence set to its true DOP pixels and
    returns the median matching error (see :func:`matching_error`).
    """
    if gt_pose is None:
        raise MissingGroundTruth("metrics need a ground-truth pose")
    mb = MetricBundle(runtime_s=result.runtime_s)
    est = result.final if final else result.initial
    if not result.success or est is None:
        return mb
    K_est = getattr(est, "intrinsics", None) or gt_intrinsics
    mb.te_m, mb.re_deg = pose_errors(est.pose, gt_pose)
    if keypoints3d is not None:
        mb.rpe_px = keypoint_rpe(keypoints3d, est.pose, K_est, gt_pose, gt_intrinsics)
    if result.mode == "calibrate":
        mb.rfe_pct = float(abs(K_est.fx - gt_intrinsics.fx) / gt_intrinsics.fx * 100.0)
    corrs = result.final_corrs if final else result.initial_corrs
    if gt_corr_oracle is not None and corrs is not None:
        mb.me_px = gt_corr_oracle(corrs)
    mb.recall_1m1d, mb.recall_3m3d, mb.recall_5m5d = recall_flags(mb.te_m, mb.re_deg)
    return mb


def evaluate_sample(sample, result, final: bool = True) -> MetricBundle:
    return compute_metrics(
        result, sample.gt_pose, sample.intrinsics, lambda c: matching_error(sample, c), sample.keypoints3d, final
    )
