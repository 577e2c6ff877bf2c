"""EPnP and an LO-RANSAC wrapper around it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateConfiguration, NoConsensus
from ..geometry import CameraIntrinsics, CameraPose, nearest_rotation, project_points

_PLANAR_TOL = 1e-8
_COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 5.0
    max_iterations: int = 10000
    confidence: float = 0.99
    local_opt_rounds: int = 3
    rng_seed: int = 0
    sample_size: int = 5

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.max_iterations < 1 or self.sample_size < 4:
            raise ValueError("need max_iterations >= 1 and sample_size >= 4")


@dataclass
class PoseEstimate:
    pose: CameraPose
    inlier_mask: np.ndarray
    mean_reproj_px: float
    n_inliers: int = field(init=False)
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self):
        self.inlier_mask = np.asarray(self.inlier_mask, bool)
        self.n_inliers = int(self.inlier_mask.sum())


def _control_points(P: np.ndarray):
    """Centroid plus principal axes; three points for planar sets, four otherwise."""
    c0 = P.mean(0)
    A = P - c0
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[0] <= 0 or s[1] < _COLLINEAR_TOL * s[0]:
        raise DegenerateConfiguration("3D points are collinear or coincident")
    planar = len(s) < 3 or s[2] < _PLANAR_TOL * s[0]
    n_axes = 2 if planar else 3
    scale = s[:n_axes] / np.sqrt(len(P))
    ctrl = np.vstack([c0, c0 + scale[:, None] * Vt[:n_axes]])
    # barycentric weights: P - c0 = sum_j a_j (c_j - c0)
    basis = (ctrl[1:] - c0).T
    a = np.linalg.lstsq(basis, A.T, rcond=None)[0].T
    alphas = np.column_stack([1.0 - a.sum(1), a])
    return ctrl, alphas


def _rigid_from_camera_points(Pw: np.ndarray, Pc: np.ndarray):
    """Kabsch: (R, t) with Pc ~ R Pw + t."""
    mw, mc = Pw.mean(0), Pc.mean(0)
    Hm = (Pc - mc).T @ (Pw - mw)
    U, _, Vt = np.linalg.svd(Hm)
    if np.linalg.det(U @ Vt) < 0:
        U = U * np.array([1.0, 1.0, -1.0])
    R = U @ Vt
    return R, mc - R @ mw


def _beta_residuals(betas, dvecs, rho):
    # dvecs: (pairs, N, 3) null-space differences; rho: squared control distances
    comb = np.einsum("a,kad->kd", betas, dvecs)
    r = (comb * comb).sum(1) - rho
    J = 2.0 * np.einsum("kd,kad->ka", comb, dvecs)
    return r, J


def _refine_betas(betas, dvecs, rho, iters=10):
    for _ in range(iters):
        r, J = _beta_residuals(betas, dvecs, rho)
        JtJ = J.T @ J
        try:
            step = np.linalg.solve(JtJ + 1e-14 * np.trace(JtJ) * np.eye(len(betas)), -(J.T @ r))
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        betas = betas + step
        if np.linalg.norm(step) < 1e-15 * max(1.0, np.linalg.norm(betas)):
            break
    return betas


def _initial_betas(dvecs, rho, N):
    """Linearised distance constraints on the products beta_a * beta_b."""
    pairs = [(a, b) for a in range(N) for b in range(a, N)]
    L = np.stack([(2.0 - (a == b)) * np.einsum("kd,kd->k", dvecs[:, a], dvecs[:, b]) for a, b in pairs], 1)
    if L.shape[1] > L.shape[0]:
        return None
    prod = np.linalg.lstsq(L, rho, rcond=None)[0]
    bb = dict(zip(pairs, prod))
    b0 = np.sqrt(abs(bb[(0, 0)]))
    if b0 == 0:
        return None
    betas = np.zeros(N)
    betas[0] = b0
    for a in range(1, N):
        betas[a] = bb[(0, a)] / b0
    return betas


def epnp(P: np.ndarray, p: np.ndarray, K: CameraIntrinsics) -> CameraPose:
    """Pose from >= 4 3D-2D correspondences via EPnP (planar sets use 3 control points)."""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    n = len(P)
    if n < 4:
        raise DegenerateConfiguration("EPnP needs at least 4 correspondences")
    ctrl, alphas = _control_points(P)
    nc = len(ctrl)
    u = (p[:, 0] - K.cx) / K.fx
    v = (p[:, 1] - K.cy) / K.fy
    M = np.zeros((2 * n, 3 * nc))
    M[0::2, 0::3] = alphas
    M[0::2, 2::3] = -alphas * u[:, None]
    M[1::2, 1::3] = alphas
    M[1::2, 2::3] = -alphas * v[:, None]
    _, _, Vt = np.linalg.svd(M, full_matrices=True)
    null = Vt[::-1][: min(4, 3 * nc)]  # smallest singular vectors first

    I, J = np.triu_indices(nc, 1)
    rho = np.sum((ctrl[I] - ctrl[J]) ** 2, axis=1)

    best, best_err, prev = None, np.inf, None
    for N in range(1, min(4, len(null)) + 1 if nc == 4 else 4):
        vecs = null[:N].reshape(N, nc, 3)
        dvecs = (vecs[:, I] - vecs[:, J]).transpose(1, 0, 2)
        betas = _initial_betas(dvecs, rho, N)
        if betas is None:
            if prev is None or len(prev) != N - 1:
                continue
            betas = np.append(prev, 0.0)
        betas = _refine_betas(betas, dvecs, rho)
        prev = betas
        Cc = np.einsum("a,acd->cd", betas, vecs)
        Pc = alphas @ Cc
        if np.mean(Pc[:, 2]) < 0:
            Cc, Pc, betas = -Cc, -Pc, -betas
        try:
            R, t = _rigid_from_camera_points(P, Pc)
        except np.linalg.LinAlgError:
            continue
        Xc = P @ R.T + t
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.mean(np.hypot(Xc[:, 0] / Xc[:, 2] - u, Xc[:, 1] / Xc[:, 2] - v))
        if not np.isfinite(err):
            err = np.inf
        if best is None or err < best_err:
            best, best_err = (R, t), err
    if best is None or not np.all(np.isfinite(best[0])):
        raise DegenerateConfiguration("EPnP found no valid solution")
    return CameraPose(nearest_rotation(best[0]), best[1])


def reprojection_errors(P, p, K, pose) -> np.ndarray:
    uv, _ = project_points(P, K, pose)
    e = np.linalg.norm(uv - p, axis=1)
    return np.where(np.isfinite(e), e, np.inf)


def _needed_iterations(inlier_ratio: float, s: int, conf: float, cap: int) -> int:
    w = inlier_ratio ** s
    if w <= 0:
        return cap
    if w >= 1:
        return 1
    return int(min(cap, np.ceil(np.log(1 - conf) / np.log(1 - w))))


def _fit(P, p, K, mask):
    try:
        return epnp(P[mask], p[mask], K)
    except (DegenerateConfiguration, ValueError, np.linalg.LinAlgError):
        return None


def ransac_pnp(P: np.ndarray, p: np.ndarray, K: CameraIntrinsics, cfg: RansacConfig | None = None) -> PoseEstimate:
    """LO-RANSAC around EPnP; inliers have reprojection error below the threshold."""
    cfg = cfg or RansacConfig()
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    n = len(P)
    if n < 4:
        raise NoConsensus(f"only {n} correspondences")
    rng = np.random.default_rng(cfg.rng_seed)
    s = min(cfg.sample_size, n)
    thr = cfg.inlier_threshold

    def score(pose):
        # truncated quadratic (MSAC) cost: tight fits beat loose ones with equal support
        e = reprojection_errors(P, p, K, pose)
        inl = e < thr
        return inl, -float(np.minimum(e, thr) @ np.minimum(e, thr))

    def local_opt(mask, key):
        best_mask, best_key, best_pose = mask, key, None
        for _ in range(cfg.local_opt_rounds):
            if best_mask.sum() < 4:
                break
            pose = _fit(P, p, K, best_mask)
            if pose is None:
                break
            m, k = score(pose)
            if k <= best_key:
                break
            best_mask, best_key, best_pose = m, k, pose
        return best_mask, best_key, best_pose

    best_pose, best_mask, best_key = None, np.zeros(n, bool), -np.inf
    needed, it = cfg.max_iterations, 0
    while it < min(needed, cfg.max_iterations):
        it += 1
        idx = rng.choice(n, size=s, replace=False)
        mask = np.zeros(n, bool)
        mask[idx] = True
        pose = _fit(P, p, K, mask)
        if pose is None:
            continue
        inl, key = score(pose)
        if key > best_key:
            best_pose, best_mask, best_key = pose, inl, key
            lo_mask, lo_key, lo_pose = local_opt(inl, key)
            if lo_pose is not None:
                best_pose, best_mask, best_key = lo_pose, lo_mask, lo_key
            needed = _needed_iterations(best_mask.sum() / n, s, cfg.confidence, cfg.max_iterations)

    if best_pose is None or best_mask.sum() < 4:
        raise NoConsensus(f"best model has {int(best_mask.sum())} inliers")
    # final polish: refit on the consensus set until it stops changing
    for _ in range(max(1, cfg.local_opt_rounds)):
        pose = _fit(P, p, K, best_mask)
        if pose is None:
            break
        m, k = score(pose)
        if m.sum() < 4:
            break
        if k < best_key:
            break
        changed = not np.array_equal(m, best_mask)
        best_pose, best_mask, best_key = pose, m, k
        if not changed:
            break
    err = reprojection_errors(P, p, K, best_pose)
    if best_mask.sum() < 4:
        raise NoConsensus("consensus set collapsed")
    return PoseEstimate(best_pose, best_mask, float(err[best_mask].mean()))
