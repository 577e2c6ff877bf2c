"""Localisation / calibration against DOP+DSM with optional homography-guided re-matching.

Stage one matches the query against the DOP, lifts the DOP side to 3D with
the DSM and solves the pose with LO-RANSAC EPnP (plus a focal refinement
when calibrating). The refinement stage fits a homography DOP -> query on
those matches, warps the DOP into the query frame, matches again, maps the
new matches back through the inverse homography and re-solves. The refined
result is kept only when its mean inlier reprojection error is lower.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import DegenerateSample, HomographyDegenerate, MatchFailure, NoConsensus, OrthoLocError, SingularHomography
from .estimation import (
    CalibEstimate, Homography, LMOptions, PoseEstimate, RansacConfig, homography_dlt_ransac, ransac_pnp, refine_lm,
    reprojection_errors, valley_profile, warp_by_homography,
)
from .geometry import CameraIntrinsics, lift_points
from .matching import (
    CSVMatcher, CorrespondenceSet, GTMatcher, Matcher, NCCMatcher, RandomMatcher, RotationInvariant, filter_matches,
)


@dataclass(frozen=True)
class PipelineConfig:
    matcher: str = "ncc"  # ncc | gt | random | csv:PATH
    matcher_params: dict = field(default_factory=dict)
    rematch_matcher: str | None = None
    rematch_params: dict | None = None
    rotation_invariant: bool = False
    ransac: RansacConfig = field(default_factory=RansacConfig)
    min_conf: float = 0.5
    mode: str = "localize"  # localize | calibrate
    adhop_enabled: bool = False
    adhop_rounds: int = 1
    homography_threshold: float = 8.0
    gate: str = "own_inliers"  # own_inliers | common
    optimize_focal: bool = True
    full_k: bool = False
    huber_delta: float = 5.0
    calib_alternate: bool = False
    fov_check: bool = True

    def __post_init__(self):
        if self.mode not in ("localize", "calibrate"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.gate not in ("own_inliers", "common"):
            raise ValueError(f"unknown gate {self.gate!r}")
        if not (0 <= self.min_conf <= 1 and self.homography_threshold > 0 and self.huber_delta > 0):
            raise ValueError("thresholds must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if isinstance(d.get("ransac"), dict):
            d["ransac"] = RansacConfig(**d["ransac"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, ransac=replace(self.ransac, rng_seed=int(seed)))


@dataclass
class LocResult:
    mode: str
    initial: PoseEstimate | CalibEstimate | None = None
    refined: PoseEstimate | CalibEstimate | None = None
    accepted_refinement: bool = False
    homography: Homography | None = None
    counts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    failure: str | None = None
    initial_corrs: CorrespondenceSet | None = None
    refined_corrs: CorrespondenceSet | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.failure is None and self.initial is not None

    @property
    def final(self):
        return self.refined if self.accepted_refinement else self.initial

    @property
    def final_corrs(self) -> CorrespondenceSet | None:
        return self.refined_corrs if self.accepted_refinement else self.initial_corrs

    @property
    def runtime_s(self) -> float:
        return float(sum(self.timings.values()))


def build_matcher(spec: str, params: dict | None = None, sample=None, seed: int = 0) -> Matcher:
    params = dict(params or {})
    if spec == "ncc":
        return NCCMatcher(**params)
    if spec == "gt":
        params.setdefault("rng_seed", seed)
        return GTMatcher(sample=sample, **params)
    if spec == "random":
        params.setdefault("rng_seed", seed)
        return RandomMatcher(**params)
    if spec.startswith("csv:"):
        return CSVMatcher(path=spec[4:], **params)
    raise ValueError(f"unknown matcher {spec!r}")


def _lift(corrs: CorrespondenceSet, sample, cfg: PipelineConfig, query_shape):
    corrs = filter_matches(corrs, cfg.min_conf, sample.dsm, sample.dop.georef, None, query_shape)
    corrs = corrs.subset(corrs.within(query_shape, sample.dop.data.shape))
    P, ok = lift_points(corrs.dop_pts, sample.dsm, sample.dop.georef)
    return corrs.subset(ok), P[ok]


def _solve(P, p, sample, cfg: PipelineConfig, K: CameraIntrinsics):
    """Stage-one pose (and focal when calibrating) from lifted correspondences."""
    if len(P) < 4:
        raise MatchFailure(f"only {len(P)} usable correspondences")
    if cfg.mode == "localize":
        est = ransac_pnp_k(P, p, K, cfg.ransac)
        return est
    est = ransac_pnp_k(P, p, K, cfg.ransac)
    opts = LMOptions(optimize_focal=cfg.optimize_focal, full_k=cfg.full_k, huber_delta=cfg.huber_delta)
    mask = est.inlier_mask
    rounds = 2 if cfg.calib_alternate else 1
    cal = None
    for r in range(rounds):
        cal = refine_lm(P[mask], p[mask], K, est.pose, opts)
        K = cal.intrinsics
        if r + 1 < rounds:
            est = ransac_pnp_k(P, p, K, cfg.ransac)
            mask = est.inlier_mask
    cal.inlier_mask = mask
    return cal


def ransac_pnp_k(P, p, K, rcfg):
    est = ransac_pnp(P, p, K, rcfg)
    est.intrinsics = K
    return est


def _intrinsics_of(est, fallback: CameraIntrinsics) -> CameraIntrinsics:
    K = getattr(est, "intrinsics", None)
    return fallback if K is None else K


def initial_intrinsics(sample, cfg: PipelineConfig) -> CameraIntrinsics:
    if cfg.mode == "calibrate" and (cfg.optimize_focal or cfg.full_k):
        W, H = sample.intrinsics.width, sample.intrinsics.height
        return CameraIntrinsics.centered(float(max(W, H)), W, H)
    return sample.intrinsics


def _match(matcher: Matcher, cfg: PipelineConfig, query, dop) -> CorrespondenceSet:
    if cfg.rotation_invariant and not isinstance(matcher, RotationInvariant):
        matcher = RotationInvariant(inner=matcher)
    return matcher.match(query, dop)


def _run(sample, cfg: PipelineConfig, matcher: Matcher | None, rematcher: Matcher | None, seed: int) -> LocResult:
    cfg = cfg.with_seed(seed)
    res = LocResult(cfg.mode)
    matcher = matcher or build_matcher(cfg.matcher, cfg.matcher_params, sample, seed)
    K0 = initial_intrinsics(sample, cfg)
    qshape = sample.query_image.shape
    t0 = time.perf_counter()
    try:
        raw = _match(matcher, cfg, sample.query_image, sample.dop.data)
        res.counts["matches_raw"] = len(raw)
        res.diagnostics["rotation_deg"] = raw.info.get("rotation_deg", 0)
        corrs, P = _lift(raw, sample, cfg, qshape)
        res.counts["matches"] = len(corrs)
        res.timings["match"] = time.perf_counter() - t0
        if len(corrs) == 0:
            raise MatchFailure("no correspondences survived filtering")
        t1 = time.perf_counter()
        res.initial = _solve(P, corrs.query_pts, sample, cfg, K0)
        res.initial_corrs = corrs
        res.counts["inliers"] = int(res.initial.inlier_mask.sum())
        res.timings["solve"] = time.perf_counter() - t1
    except OrthoLocError as exc:
        res.timings.setdefault("match", time.perf_counter() - t0)
        res.failure = f"{type(exc).__name__}: {exc}"
        res.initial = None
        return res
    if cfg.mode == "calibrate":
        res.diagnostics.update(_valley_diagnostics(P[res.initial.inlier_mask], res.initial))
    if cfg.adhop_enabled:
        t2 = time.perf_counter()
        rematcher = rematcher or (
            build_matcher(cfg.rematch_matcher, cfg.rematch_params, sample, seed) if cfg.rematch_matcher else matcher
        )
        current, current_corrs, current_P = res.initial, corrs, P
        for _ in range(max(1, cfg.adhop_rounds)):
            out = refine_adhop(sample, current_corrs, current, cfg, rematcher, initial_P=current_P)
            res.homography = out["homography"] or res.homography
            res.diagnostics.update({k: v for k, v in out.items() if k.startswith("adhop_")})
            if not out["accepted"]:
                if res.refined is None:
                    res.refined = out["estimate"]
                    res.refined_corrs = out["corrs"]
                break
            res.refined, res.refined_corrs, res.accepted_refinement = out["estimate"], out["corrs"], True
            current, current_corrs, current_P = out["estimate"], out["corrs"], out["P"]
        if res.refined is not None:
            res.counts["refined_matches"] = len(res.refined_corrs) if res.refined_corrs is not None else 0
            res.counts["refined_inliers"] = int(res.refined.inlier_mask.sum())
        res.timings["adhop"] = time.perf_counter() - t2
    return res


def _valley_diagnostics(P_in, est) -> dict:
    """Flag the focal / depth ambiguity when joint scaling barely moves the projections."""
    if len(P_in) < 4:
        return {}
    prof = valley_profile(P_in, est.intrinsics, est.pose, [0.9, 1.1])
    return {"valley_shift_px": float(np.max(prof)), "focal_translation_ambiguous": bool(np.max(prof) < 0.5)}


def refine_adhop(sample, initial_corrs: CorrespondenceSet, initial_estimate, cfg: PipelineConfig,
                 matcher: Matcher | None = None, initial_P=None) -> dict:
    """One homography-guided re-matching round.

    Returns a dict with ``estimate`` (the re-solved result or None), ``accepted``,
    ``homography``, ``corrs`` (re-matched pairs in DOP pixels) and diagnostics.
    Degenerate homographies skip the refinement and leave the initial result in place.
    """
    matcher = matcher or build_matcher(cfg.matcher, cfg.matcher_params, sample, cfg.ransac.rng_seed)
    out = {"estimate": None, "accepted": False, "homography": None, "corrs": None, "P": None}
    K_init = _intrinsics_of(initial_estimate, sample.intrinsics)
    if initial_P is None:
        initial_P, _ = lift_points(initial_corrs.dop_pts, sample.dsm, sample.dop.georef)
    qh, qw = sample.query_image.shape[:2]
    try:
        if len(initial_corrs) < 4:
            raise HomographyDegenerate("fewer than 4 initial correspondences")
        try:
            hcfg = replace(cfg.ransac, inlier_threshold=cfg.homography_threshold)
            H = homography_dlt_ransac(initial_corrs.dop_pts, initial_corrs.query_pts, hcfg)
        except (NoConsensus, DegenerateSample, SingularHomography) as exc:
            raise HomographyDegenerate(str(exc)) from exc
        if not np.isfinite(H.condition_number) or H.condition_number > 1e10:
            raise HomographyDegenerate("homography is ill-conditioned")
        out["homography"] = H
        out["adhop_h_inlier_ratio"] = H.inlier_ratio
        warped, valid = warp_by_homography(sample.dop.data, H.matrix, (qw, qh))
        if valid.mean() < 0.05:
            raise HomographyDegenerate("warped DOP barely overlaps the query frame")
        wc = matcher.match_warped(sample.query_image, warped, H.matrix)
        # drop matches that landed on the fill region
        c = np.clip(np.round(wc.dop_pts).astype(int), [0, 0], [qw - 1, qh - 1])
        wc = wc.subset(valid[c[:, 1], c[:, 0]] & wc.within((qh, qw), (qh, qw)))
        back = H.apply_inverse(wc.dop_pts)
        finite = np.all(np.isfinite(back), 1)
        corrs = CorrespondenceSet(wc.query_pts[finite], back[finite], wc.confidence[finite])
        corrs, P = _lift(corrs, sample, cfg, sample.query_image.shape)
        out["adhop_rematches"] = len(corrs)
        est = _solve(P, corrs.query_pts, sample, cfg, initial_intrinsics(sample, cfg))
    except OrthoLocError as exc:
        out["adhop_skipped"] = f"{type(exc).__name__}: {exc}"
        return out
    out["estimate"], out["corrs"], out["P"] = est, corrs, P
    K_ref = _intrinsics_of(est, sample.intrinsics)
    init_err = initial_estimate.mean_reproj_px
    ref_err = est.mean_reproj_px
    if cfg.gate == "common":
        # both poses scored on the union of both stages' inlier pairs
        Pc = np.vstack([initial_P[initial_estimate.inlier_mask], P[est.inlier_mask]])
        pc = np.vstack([initial_corrs.query_pts[initial_estimate.inlier_mask], corrs.query_pts[est.inlier_mask]])
        init_err = float(reprojection_errors(Pc, pc, K_init, initial_estimate.pose).mean())
        ref_err = float(reprojection_errors(Pc, pc, K_ref, est.pose).mean())
    out["adhop_initial_err"] = init_err
    out["adhop_refined_err"] = ref_err
    out["accepted"] = bool(ref_err < init_err)
    return out


def localize(sample, cfg: PipelineConfig | None = None, matcher: Matcher | None = None,
             rematcher: Matcher | None = None, seed: int = 0) -> LocResult:
    """Pose with known intrinsics. Failures are recorded on the result, never raised."""
    cfg = cfg or PipelineConfig()
    if cfg.mode != "localize":
        cfg = replace(cfg, mode="localize")
    return _run(sample, cfg, matcher, rematcher, seed)


def calibrate(sample, cfg: PipelineConfig | None = None, matcher: Matcher | None = None,
              rematcher: Matcher | None = None, seed: int = 0) -> LocResult:
    """Pose and focal length from the query alone (focal initialised to max(W, H))."""
    cfg = cfg or PipelineConfig(mode="calibrate")
    if cfg.mode != "calibrate":
        cfg = replace(cfg, mode="calibrate")
    return _run(sample, cfg, matcher, rematcher, seed)


def run_pipeline(sample, cfg: PipelineConfig, matcher=None, rematcher=None, seed: int = 0) -> LocResult:
    return (calibrate if cfg.mode == "calibrate" else localize)(sample, cfg, matcher, rematcher, seed)
