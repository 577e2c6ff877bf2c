"""Query <-> DOP correspondences and the matchers that produce them.

Any callable object with ``match(query, reference) -> CorrespondenceSet`` can
drive the pipeline. Three matchers ship with the package: a classical
corner + normalised cross-correlation matcher (no model weights needed), the
ground-truth oracle built from a sample's point map, and a CSV reader for
correspondences produced by external (learned) matchers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import InsufficientValidPoints, MatchFailure, NoFeatures, OrthoLocError
from .geometry import CameraIntrinsics, CameraPose, OrthoCamera, lift_points, project_ortho, project_points

CSV_HEADER = ["qx", "qy", "dx", "dy", "conf"]


@dataclass(eq=False)
class CorrespondenceSet:
    """Scored query-pixel <-> reference-pixel pairs."""

    query_pts: np.ndarray
    dop_pts: np.ndarray
    confidence: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.query_pts = np.asarray(self.query_pts, dtype=float).reshape(-1, 2)
        self.dop_pts = np.asarray(self.dop_pts, dtype=float).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=float).reshape(-1)
        n = len(self.query_pts)
        if len(self.dop_pts) != n or len(self.confidence) != n:
            raise ValueError("correspondence arrays have different lengths")
        if not (np.all(np.isfinite(self.query_pts)) and np.all(np.isfinite(self.dop_pts))):
            raise ValueError("correspondence coordinates must be finite")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ValueError("confidence must lie in [0, 1]")

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))

    def __len__(self) -> int:
        return len(self.query_pts)

    def subset(self, mask) -> "CorrespondenceSet":
        return CorrespondenceSet(self.query_pts[mask], self.dop_pts[mask], self.confidence[mask], dict(self.info))

    def within(self, query_shape, ref_shape) -> np.ndarray:
        """Mask of pairs inside both images (pixel-centred half-pixel border)."""

        def inside(pts, shape):
            h, w = shape[:2]
            return (pts[:, 0] >= -0.5) & (pts[:, 0] <= w - 0.5) & (pts[:, 1] >= -0.5) & (pts[:, 1] <= h - 0.5)

        return inside(self.query_pts, query_shape) & inside(self.dop_pts, ref_shape)


def write_correspondences(corrs: CorrespondenceSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for (qx, qy), (dx, dy), c in zip(corrs.query_pts, corrs.dop_pts, corrs.confidence):
            w.writerow([repr(float(qx)), repr(float(qy)), repr(float(dx)), repr(float(dy)), repr(float(c))])


def read_correspondences(path) -> CorrespondenceSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return CorrespondenceSet.empty()
        if [h.strip() for h in header] != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float).reshape(-1, 5)
    return CorrespondenceSet(rows[:, 0:2], rows[:, 2:4], rows[:, 4])


class Matcher:
    """Base class for matchers; subclasses implement :meth:`match`."""

    name = "matcher"
    rotation_invariant = False

    def match(self, query: np.ndarray, reference: np.ndarray) -> CorrespondenceSet:
        raise NotImplementedError

    def match_warped(self, query: np.ndarray, warped: np.ndarray, H: np.ndarray) -> CorrespondenceSet:
        """Match against a DOP warped by ``H`` (coordinates in the warped frame)."""
        return self.match(query, warped)

    def __call__(self, query, reference):
        return self.match(query, reference)


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 3:
        img = img.astype(np.float32) @ np.array([0.299, 0.587, 0.114], np.float32)
    return np.ascontiguousarray(img, dtype=np.float32)


def _resize(img: np.ndarray, factor: float) -> tuple[np.ndarray, float, float]:
    h, w = img.shape[:2]
    nw, nh = max(1, int(round(w * factor))), max(1, int(round(h * factor)))
    interp = cv2.INTER_AREA if factor < 1 else cv2.INTER_LINEAR
    return cv2.resize(img, (nw, nh), interpolation=interp), nw / w, nh / h


def _subpixel(score: np.ndarray, r: int, c: int) -> tuple[float, float]:
    def offset(a, b, d):
        den = a - 2 * b + d
        return 0.0 if den >= 0 else float(np.clip(0.5 * (a - d) / den, -0.5, 0.5))

    dx = offset(score[r, c - 1], score[r, c], score[r, c + 1]) if 0 < c < score.shape[1] - 1 else 0.0
    dy = offset(score[r - 1, c], score[r, c], score[r + 1, c]) if 0 < r < score.shape[0] - 1 else 0.0
    return c + dx, r + dy


@dataclass
class NCCMatcher(Matcher):
    """Corners in the query matched over the reference by normalised cross-correlation.

    Corners are minimum-eigenvalue (Shi-Tomasi) maxima spread at least
    ``min_distance`` pixels apart. The relative scale between query and
    reference is searched over ``2 * pyramid_levels + 1`` factors spaced by
    ``scale_step``; the scale whose matches correlate best is kept for all
    features. A match survives when its peak beats the best competing peak
    (outside the patch footprint) by ``peak_ratio``, exceeds ``min_score``
    and, with ``cross_check``, the reference patch found maps back to within
    ``cross_tol`` pixels of the query corner. The scale is chosen on about
    ``scale_probe`` corners. Confidence is ``(score + 1) / 2``.
    """

    n_features: int = 300
    patch: int = 15
    pyramid_levels: int = 1
    scale_step: float = 2.0
    peak_ratio: float = 0.97
    min_score: float = 0.3
    quality: float = 0.001
    min_distance: int = 8
    cross_check: bool = True
    cross_tol: float = 2.0
    scale_probe: int = 40
    name: str = "ncc"

    def __post_init__(self):
        if self.patch % 2 == 0 or self.patch < 3:
            raise ValueError("patch must be odd and >= 3")

    def _features(self, gray: np.ndarray) -> np.ndarray:
        half = self.patch // 2
        if float(gray.max() - gray.min()) < 1e-6:
            raise NoFeatures("constant query image")
        pts = cv2.goodFeaturesToTrack(
            gray, maxCorners=self.n_features * 2, qualityLevel=self.quality,
            minDistance=max(1, self.min_distance), blockSize=5,
        )
        if pts is None:
            raise NoFeatures("no corners found in the query image")
        pts = pts.reshape(-1, 2)
        h, w = gray.shape
        keep = (pts[:, 0] >= half) & (pts[:, 0] < w - half) & (pts[:, 1] >= half) & (pts[:, 1] < h - half)
        pts = pts[keep][: self.n_features]
        if len(pts) == 0:
            raise NoFeatures("all corners lie on the image border")
        return np.round(pts).astype(int)

    def _match_scale(self, gq: np.ndarray, gr: np.ndarray, feats: np.ndarray, factor: float):
        """Match every feature at one relative scale; coordinates returned at full resolution."""
        half = self.patch // 2
        if factor <= 1:
            ref, sx, sy = _resize(gr, factor) if factor != 1 else (gr, 1.0, 1.0)
            qimg, qsx, qsy = gq, 1.0, 1.0
        else:
            ref, sx, sy = gr, 1.0, 1.0
            qimg, qsx, qsy = _resize(gq, 1.0 / factor)
        if ref.shape[0] < self.patch + 2 or ref.shape[1] < self.patch + 2:
            return None
        qh, qw = qimg.shape
        out_q, out_r, scores = [], [], []
        excl = half + 1
        for u, v in feats:
            uc = int(round((u + 0.5) * qsx - 0.5))
            vc = int(round((v + 0.5) * qsy - 0.5))
            if uc < half or vc < half or uc >= qw - half or vc >= qh - half:
                continue
            tpl = qimg[vc - half: vc + half + 1, uc - half: uc + half + 1]
            if float(tpl.std()) < 1e-3:
                continue
            res = cv2.matchTemplate(ref, tpl, cv2.TM_CCOEFF_NORMED)
            res = np.nan_to_num(res, nan=-1.0, posinf=-1.0, neginf=-1.0)
            r, c = np.unravel_index(int(np.argmax(res)), res.shape)
            best = float(res[r, c])
            masked = res.copy()
            masked[max(0, r - excl): r + excl + 1, max(0, c - excl): c + excl + 1] = -1.0
            second = float(masked.max()) if masked.size else -1.0
            if best < self.min_score or second > self.peak_ratio * best:
                continue
            if self.cross_check:
                back = ref[r: r + self.patch, c: c + self.patch]
                if float(back.std()) < 1e-3:
                    continue
                res2 = cv2.matchTemplate(qimg, back, cv2.TM_CCOEFF_NORMED)
                r2, c2 = np.unravel_index(int(np.argmax(np.nan_to_num(res2, nan=-1.0))), res2.shape)
                if abs(c2 + half - uc) > self.cross_tol or abs(r2 + half - vc) > self.cross_tol:
                    continue
            x, y = _subpixel(res, r, c)
            x, y = x + half, y + half
            out_r.append(((x + 0.5) / sx - 0.5, (y + 0.5) / sy - 0.5))
            out_q.append(((uc + 0.5) / qsx - 0.5, (vc + 0.5) / qsy - 0.5))
            scores.append(best)
        return np.array(out_q).reshape(-1, 2), np.array(out_r).reshape(-1, 2), np.array(scores)

    def match(self, query: np.ndarray, reference: np.ndarray) -> CorrespondenceSet:
        gq, gr = _gray(query), _gray(reference)
        feats = self._features(gq)
        factors = [self.scale_step ** k for k in range(-self.pyramid_levels, self.pyramid_levels + 1)]
        # pick the scale on a spread-out subset of corners, then match them all at that scale
        probe = feats[:: max(1, len(feats) // self.scale_probe)] if len(factors) > 1 else feats
        best_f, best, best_key = None, None, (False, -np.inf)
        for f in sorted(factors, key=lambda f: abs(np.log(f))):
            res = self._match_scale(gq, gr, probe, f)
            if res is None or len(res[2]) == 0:
                continue
            key = (len(res[2]) >= 4, float(np.median(res[2])) * np.sqrt(len(res[2])))
            if key > best_key:
                best_f, best, best_key = f, res, key
        if best_f is None:
            return CorrespondenceSet.empty()
        if len(probe) < len(feats):
            best = self._match_scale(gq, gr, feats, best_f)
        q, r, s = best
        corrs = CorrespondenceSet(q, r, np.clip((s + 1.0) / 2.0, 0.0, 1.0), {"scale": best_f})
        return corrs.subset(corrs.within(query.shape, reference.shape))


def _rotate_image(img: np.ndarray, k: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(img, k))


def _rot_dims(shape, k):
    h, w = shape[:2]
    return (h, w) if k % 2 == 0 else (w, h)


def unrotate_points(pts: np.ndarray, k: int, shape) -> np.ndarray:
    """Map coords in ``np.rot90(img, k)`` back into ``img`` of the given shape."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0].copy(), pts[:, 1].copy()
    k = k % 4
    # undo one quarter turn at a time, starting from the most recent
    for i in range(k, 0, -1):
        _, w_prev = _rot_dims(shape, i - 1)
        # one ccw quarter turn sends source (x, y) to (y, w_prev - 1 - x)
        x, y = (w_prev - 1) - y, x
    return np.column_stack([x, y])


def rotation_invariant_match(matcher, query: np.ndarray, dop: np.ndarray) -> CorrespondenceSet:
    """Run ``matcher`` on the query rotated by 0/90/180/270 degrees and keep the largest set.

    Winning query coordinates are mapped back through the inverse rotation.
    Ties go to the smallest angle. ``info['rotation_deg']`` records the winner.
    """
    best, best_k, errors = None, 0, []
    for k in range(4):
        try:
            c = matcher.match(_rotate_image(query, k), dop)
        except OrthoLocError as exc:
            errors.append(exc)
            continue
        if best is None or len(c) > len(best):
            best, best_k = c, k
    if best is None:
        raise errors[-1]
    if len(best) == 0:
        raise MatchFailure("no orientation produced correspondences")
    q = unrotate_points(best.query_pts, best_k, query.shape)
    out = CorrespondenceSet(q, best.dop_pts, best.confidence, dict(best.info))
    out.info["rotation_deg"] = 90 * best_k
    return out


@dataclass
class RotationInvariant(Matcher):
    """Wrap a matcher so that it is evaluated in four query orientations."""

    inner: Matcher = None
    rotation_invariant = True

    @property
    def name(self):
        return f"{self.inner.name}+ri"

    def match(self, query, reference):
        return rotation_invariant_match(self.inner, query, reference)

    def match_warped(self, query, warped, H):
        # the warp already aligns orientation with the query
        return self.inner.match_warped(query, warped, H)


def gt_confidences(points: np.ndarray, dsm, dop_georef, gamma: float = 1.0, mode: str = "bilinear"):
    """Geometry-aware confidence ``exp(-gamma * d)`` of world points.

    ``d`` is the distance between each point and its orthographic
    round trip (project to the DOP, lift back with the DSM height).
    Returns ``(dop_px, confidence, lifted_ok)``.
    """
    dop_px = project_ortho(points, OrthoCamera(dop_georef))
    lifted, ok = lift_points(dop_px, dsm, dop_georef, mode)
    d = np.linalg.norm(points - lifted, axis=1)
    conf = np.where(ok, np.exp(-gamma * np.where(ok, d, 0.0)), 0.0)
    return dop_px, conf, ok


def stratified_pixels(valid: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``n`` valid pixels (x, y) drawn on a jittered grid covering the image."""
    H, W = valid.shape
    cells = max(1, int(np.ceil(np.sqrt(n * W / H))))
    rows_n = max(1, int(np.ceil(n / cells)))
    xs = (np.arange(cells) + rng.random(cells * rows_n).reshape(rows_n, cells)) * (W / cells)
    ys = (np.arange(rows_n)[:, None] + rng.random((rows_n, cells))) * (H / rows_n)
    px = np.column_stack([np.floor(xs.ravel()), np.floor(ys.ravel())]).astype(int)
    px[:, 0] = np.clip(px[:, 0], 0, W - 1)
    px[:, 1] = np.clip(px[:, 1], 0, H - 1)
    keep = valid[px[:, 1], px[:, 0]]
    return px[keep][:n]


def gt_match(sample, n: int = 500, gamma: float = 1.0, tau: float = 0.0, rng_seed: int = 0) -> CorrespondenceSet:
    """Ground-truth correspondences with geometry-aware confidences."""
    if sample.gt_pose is None:
        raise InsufficientValidPoints("sample has no ground-truth pose")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not 0 <= tau < 1:
        raise ValueError("tau must lie in [0, 1)")
    rng = np.random.default_rng(rng_seed)
    px = stratified_pixels(sample.point_valid, n, rng)
    P = sample.point_map[px[:, 1], px[:, 0]].astype(float)
    dop_px, conf, ok = gt_confidences(P, sample.dsm, sample.dop.georef, gamma)
    H, W = sample.dop.data.shape[:2]
    inside = (dop_px[:, 0] >= -0.5) & (dop_px[:, 0] <= W - 0.5) & (dop_px[:, 1] >= -0.5) & (dop_px[:, 1] <= H - 0.5)
    keep = ok & inside & (conf > tau)
    if keep.sum() < 4:
        raise InsufficientValidPoints(f"only {int(keep.sum())} correspondences survive tau={tau}")
    return CorrespondenceSet(px[keep].astype(float), dop_px[keep], conf[keep])


@dataclass
class GTMatcher(Matcher):
    """Oracle matcher backed by a sample's point map (images are ignored)."""

    sample: object = None
    n: int = 500
    gamma: float = 1.0
    tau: float = 0.0
    rng_seed: int = 0
    name: str = "gt"

    def match(self, query, reference):
        return gt_match(self.sample, self.n, self.gamma, self.tau, self.rng_seed)

    def match_warped(self, query, warped, H):
        c = self.match(query, warped)
        ph = np.column_stack([c.dop_pts, np.ones(len(c))]) @ np.asarray(H).T
        return CorrespondenceSet(c.query_pts, ph[:, :2] / ph[:, 2:], c.confidence)


@dataclass
class CSVMatcher(Matcher):
    """Correspondences read from ``qx,qy,dx,dy,conf`` files.

    ``rematch_path`` optionally supplies the second-round matches against the
    warped DOP (coordinates in the warped frame).
    """

    path: str | Path = ""
    rematch_path: str | Path | None = None
    name: str = "csv"

    def match(self, query, reference):
        return read_correspondences(self.path)

    def match_warped(self, query, warped, H):
        if self.rematch_path is not None:
            return read_correspondences(self.rematch_path)
        c = self.match(query, warped)
        ph = np.column_stack([c.dop_pts, np.ones(len(c))]) @ np.asarray(H).T
        return CorrespondenceSet(c.query_pts, ph[:, :2] / ph[:, 2:], c.confidence)


@dataclass
class RandomMatcher(Matcher):
    """Uniformly random pairs; an adversarial stub for failure handling."""

    n: int = 100
    rng_seed: int = 0
    name: str = "random"

    def match(self, query, reference):
        rng = np.random.default_rng(self.rng_seed)
        qh, qw = query.shape[:2]
        rh, rw = reference.shape[:2]
        q = rng.random((self.n, 2)) * [qw - 1, qh - 1]
        r = rng.random((self.n, 2)) * [rw - 1, rh - 1]
        return CorrespondenceSet(q, r, np.ones(self.n))


def filter_matches(
    corrs: CorrespondenceSet,
    min_conf: float = 0.5,
    dsm=None,
    dop_georef=None,
    fov_check: tuple[CameraIntrinsics, CameraPose] | None = None,
    query_shape=None,
) -> CorrespondenceSet:
    """Drop low-confidence pairs, pairs lifting to no-data, and pairs outside the view.

    Order is preserved and the operation is idempotent.
    """
    keep = corrs.confidence >= min_conf
    if query_shape is not None:
        h, w = query_shape[:2]
        q = corrs.query_pts
        keep &= (q[:, 0] >= -0.5) & (q[:, 0] <= w - 0.5) & (q[:, 1] >= -0.5) & (q[:, 1] <= h - 0.5)
    if dsm is not None:
        georef = dsm.georef if dop_georef is None else dop_georef
        P, ok = lift_points(corrs.dop_pts, dsm, georef)
        keep &= ok
        if fov_check is not None:
            K, T = fov_check
            uv, z = project_points(np.where(ok[:, None], P, 0.0), K, T)
            keep &= (z > 0) & K.contains(uv)
    return corrs.subset(keep)
