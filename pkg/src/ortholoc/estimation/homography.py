"""Normalised-DLT homography with RANSAC, and inverse-mapping image warps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateSample, NoConsensus, SingularHomography
from ..geometry import sample_grid
from .pnp import RansacConfig


@dataclass
class Homography:
    """3x3 projective map ``dst ~ H @ src``, scaled so that h33 = 1 when possible."""

    matrix: np.ndarray
    inlier_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    def __post_init__(self):
        H = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        if abs(H[2, 2]) > 1e-12:
            H = H / H[2, 2]
        if not np.all(np.isfinite(H)) or abs(np.linalg.det(H)) < 1e-14 * max(1.0, np.abs(H).max() ** 3):
            raise SingularHomography("homography is singular")
        self.matrix = H
        self.inlier_mask = np.asarray(self.inlier_mask, bool)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())

    @property
    def inlier_ratio(self) -> float:
        return float(self.inlier_mask.mean()) if self.inlier_mask.size else 0.0

    @property
    def inverse(self) -> np.ndarray:
        Hi = np.linalg.inv(self.matrix)
        return Hi / Hi[2, 2] if abs(Hi[2, 2]) > 1e-12 else Hi

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return apply_homography(self.matrix, pts)

    def apply_inverse(self, pts: np.ndarray) -> np.ndarray:
        return apply_homography(np.linalg.inv(self.matrix), pts)


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ph = pts @ H[:, :2].T + H[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return ph[:, :2] / ph[:, 2:3]


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(0)
    d = np.sqrt(((pts - c) ** 2).sum(1)).mean()
    s = np.sqrt(2) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Hartley-normalised DLT over >= 4 point pairs (raw 3x3, not rescaled)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    Ts, Td = _normalizer(src), _normalizer(dst)
    a = src @ Ts[:2, :2].T + Ts[:2, 2]
    b = dst @ Td[:2, :2].T + Td[:2, 2]
    n = len(a)
    A = np.zeros((2 * n, 9))
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    one, zero = np.ones(n), np.zeros(n)
    A[0::2] = np.column_stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u])
    A[1::2] = np.column_stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v])
    _, _, Vt = np.linalg.svd(A)
    Hn = Vt[-1].reshape(3, 3)
    return np.linalg.inv(Td) @ Hn @ Ts


def _has_collinear_triple(pts: np.ndarray, tol: float = 1e-6) -> bool:
    scale = max(1.0, float(np.ptp(pts, axis=0).max()))
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            for k in range(j + 1, len(pts)):
                d1, d2 = pts[j] - pts[i], pts[k] - pts[i]
                if abs(d1[0] * d2[1] - d1[1] * d2[0]) < tol * scale * scale:
                    return True
    return False


def symmetric_transfer_error(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """sqrt(|dst - H src|^2 + |src - H^-1 dst|^2) per pair; inf where undefined."""
    try:
        Hi = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(len(src), np.inf)
    e1 = np.sum((apply_homography(H, src) - dst) ** 2, 1)
    e2 = np.sum((apply_homography(Hi, dst) - src) ** 2, 1)
    e = np.sqrt(e1 + e2)
    return np.where(np.isfinite(e), e, np.inf)


def homography_dlt_ransac(src: np.ndarray, dst: np.ndarray, cfg: RansacConfig | None = None) -> Homography:
    """Robust ``dst ~ H src`` from 4-point DLT hypotheses; refit on all inliers."""
    cfg = cfg or RansacConfig()
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise NoConsensus(f"only {n} correspondences")
    rng = np.random.default_rng(cfg.rng_seed)
    thr = cfg.inlier_threshold
    best_mask, best_key = None, (0, -np.inf)
    needed, it, degenerate_run = cfg.max_iterations, 0, 0
    while it < min(needed, cfg.max_iterations):
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        if _has_collinear_triple(src[idx]) or _has_collinear_triple(dst[idx]):
            degenerate_run += 1
            if degenerate_run >= 100:
                raise DegenerateSample("samples keep containing collinear points")
            continue
        degenerate_run = 0
        H = dlt_homography(src[idx], dst[idx])
        e = symmetric_transfer_error(H, src, dst)
        inl = e < thr
        key = (int(inl.sum()), -float(e[inl].sum()))
        if key > best_key:
            best_mask, best_key = inl, key
            # local optimisation on the consensus set
            for _ in range(cfg.local_opt_rounds):
                if inl.sum() < 4:
                    break
                H2 = dlt_homography(src[best_mask], dst[best_mask])
                e2 = symmetric_transfer_error(H2, src, dst)
                m2 = e2 < thr
                k2 = (int(m2.sum()), -float(e2[m2].sum()))
                if k2 <= best_key:
                    break
                best_mask, best_key = m2, k2
            w = (best_key[0] / n) ** 4
            needed = cfg.max_iterations if w <= 0 else (1 if w >= 1 else int(min(cfg.max_iterations, np.ceil(np.log(1 - cfg.confidence) / np.log(1 - w)))))
    if best_mask is None or best_key[0] < 4:
        raise NoConsensus(f"best homography has {best_key[0]} inliers")
    H = dlt_homography(src[best_mask], dst[best_mask])
    mask = symmetric_transfer_error(H, src, dst) < thr
    if mask.sum() >= 4 and not np.array_equal(mask, best_mask):
        H2 = dlt_homography(src[mask], dst[mask])
        m2 = symmetric_transfer_error(H2, src, dst) < thr
        if m2.sum() >= mask.sum():
            H, mask = H2, m2
    return Homography(H, mask)


def warp_by_homography(image: np.ndarray, H: np.ndarray, out_dims: tuple[int, int], fill=None, mode: str = "bilinear"):
    """Inverse-mapping warp: ``out(x) = image(H^-1 x)``.

    ``out_dims`` is (width, height). Pixels whose source falls outside the
    image are set to ``fill`` (default: per-channel mean) and flagged False in
    the returned validity mask.
    """
    H = np.asarray(getattr(H, "matrix", H), dtype=float)
    try:
        Hi = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise SingularHomography("homography is not invertible") from exc
    if not np.all(np.isfinite(Hi)) or abs(np.linalg.det(H)) < 1e-300:
        raise SingularHomography("homography is not invertible")
    W, Hh = out_dims
    xs, ys = np.meshgrid(np.arange(W, dtype=float), np.arange(Hh, dtype=float))
    src = apply_homography(Hi, np.column_stack([xs.ravel(), ys.ravel()]))
    img = np.asarray(image)
    chans = img[..., None] if img.ndim == 2 else img
    if fill is None:
        fill = chans.reshape(-1, chans.shape[-1]).mean(0)
    fill = np.broadcast_to(np.asarray(fill, dtype=float), (chans.shape[-1],))
    out = np.empty((Hh * W, chans.shape[-1]))
    valid = None
    for c in range(chans.shape[-1]):
        vals, inb, _ = sample_grid(chans[..., c], src, mode)
        out[:, c] = np.where(inb, vals, fill[c])
        valid = inb
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        out = np.clip(np.round(out), info.min, info.max)
    out = out.astype(img.dtype).reshape(Hh, W, chans.shape[-1])
    if img.ndim == 2:
        out = out[..., 0]
    return out, valid.reshape(Hh, W)
