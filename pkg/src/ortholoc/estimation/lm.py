"""Levenberg-Marquardt refinement of pose and (optionally) intrinsics under a Huber loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import Diverged, SingularNormalEquations
from ..geometry import EPS_DEPTH, CameraIntrinsics, CameraPose, nearest_rotation, so3_exp

# residual magnitude assigned to points behind the camera; constant so it carries no gradient
_BEHIND_PX = 1e6


@dataclass(frozen=True)
class LMOptions:
    optimize_focal: bool = False
    full_k: bool = False
    huber_delta: float = 5.0
    max_iter: int = 100
    grad_tol: float = 1e-10
    lambda0: float = 1e-3
    lambda_max: float = 1e16


@dataclass
class CalibEstimate:
    pose: CameraPose
    intrinsics: CameraIntrinsics
    mean_reproj_px: float
    converged: bool
    iterations: int
    cost: float = np.nan
    inlier_mask: np.ndarray | None = None

    @property
    def n_inliers(self) -> int:
        return -1 if self.inlier_mask is None else int(np.sum(self.inlier_mask))


def huber(s: np.ndarray, delta: float) -> np.ndarray:
    """Robust cost of residual norms: s^2 inside delta, 2*delta*s - delta^2 beyond."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= delta, s * s, 2 * delta * s - delta * delta)


def huber_weights(s: np.ndarray, delta: float) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(s <= delta, 1.0, delta / s)


def _n_intr(opts: LMOptions) -> int:
    if opts.full_k:
        return 4
    return 1 if opts.optimize_focal else 0


def residuals(R, t, K: CameraIntrinsics, P, p):
    """Stacked pixel residuals (N, 2) and a front-of-camera mask."""
    Xc = P @ R.T + t
    z = Xc[:, 2]
    front = z > EPS_DEPTH
    zs = np.where(front, z, 1.0)
    r = np.column_stack([K.fx * Xc[:, 0] / zs + K.cx, K.fy * Xc[:, 1] / zs + K.cy]) - p
    r[~front] = 0.0
    return r, front


def jacobian(R, t, K: CameraIntrinsics, P, opts: LMOptions):
    """d residual / d (omega, t, intrinsics) for the left increment R <- exp(omega) R.

    Intrinsic columns: none, the shared focal f (fx = fy = f), or
    (fx, fy, cx, cy) when ``opts.full_k``. Shape (N, 2, 6 + k).
    """
    RP = P @ R.T
    Xc = RP + t
    X, Y, Z = Xc.T
    front = Z > EPS_DEPTH
    Zs = np.where(front, Z, 1.0)
    n = len(P)
    duv = np.zeros((n, 2, 3))
    duv[:, 0, 0] = K.fx / Zs
    duv[:, 0, 2] = -K.fx * X / Zs**2
    duv[:, 1, 1] = K.fy / Zs
    duv[:, 1, 2] = -K.fy * Y / Zs**2
    # d(exp(w) RP)/dw at w = 0 is -[RP]_x
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1], skew[:, 0, 2] = -RP[:, 2], RP[:, 1]
    skew[:, 1, 0], skew[:, 1, 2] = RP[:, 2], -RP[:, 0]
    skew[:, 2, 0], skew[:, 2, 1] = -RP[:, 1], RP[:, 0]
    cols = [np.einsum("nij,njk->nik", duv, -skew), duv]
    if opts.full_k:
        Jk = np.zeros((n, 2, 4))
        Jk[:, 0, 0] = X / Zs
        Jk[:, 1, 1] = Y / Zs
        Jk[:, 0, 2] = 1.0
        Jk[:, 1, 3] = 1.0
        cols.append(Jk)
    elif opts.optimize_focal:
        cols.append(np.stack([X / Zs, Y / Zs], 1)[:, :, None])
    J = np.concatenate(cols, axis=2)
    J[~front] = 0.0
    return J


def apply_update(R, t, K: CameraIntrinsics, delta, opts: LMOptions):
    R2 = nearest_rotation(so3_exp(delta[:3]) @ R)
    t2 = t + delta[3:6]
    if opts.full_k:
        fx, fy, cx, cy = K.fx + delta[6], K.fy + delta[7], K.cx + delta[8], K.cy + delta[9]
    elif opts.optimize_focal:
        fx = fy = K.fx + delta[6]
        cx, cy = K.cx, K.cy
    else:
        return R2, t2, K
    return R2, t2, CameraIntrinsics.unchecked(fx, fy, cx, cy, K.width, K.height)


def robust_cost(R, t, K, P, p, delta):
    r, front = residuals(R, t, K, P, p)
    s = np.where(front, np.linalg.norm(r, axis=1), _BEHIND_PX)
    return float(huber(s, delta).sum())


def refine_lm(P, p, K0: CameraIntrinsics, T0: CameraPose, opts: LMOptions | None = None) -> CalibEstimate:
    """Minimise the Huber reprojection cost over (so(3) increment, t[, focal])."""
    opts = opts or LMOptions()
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    k = _n_intr(opts)
    if len(P) < (6 if k else 3):
        raise SingularNormalEquations(f"{len(P)} correspondences are too few for {6 + k} parameters")
    if opts.optimize_focal and not opts.full_k and K0.fx != K0.fy:
        K0 = CameraIntrinsics.unchecked(K0.fx, K0.fx, K0.cx, K0.cy, K0.width, K0.height)
    R, t, K = T0.rotation.copy(), T0.translation.copy(), K0
    delta_h = opts.huber_delta
    cost = robust_cost(R, t, K, P, p, delta_h)
    if not np.isfinite(cost):
        raise Diverged("initial cost is not finite")
    lam = opts.lambda0
    converged, it = False, 0
    while it < opts.max_iter:
        it += 1
        r, front = residuals(R, t, K, P, p)
        s = np.linalg.norm(r, axis=1)
        w = np.where(front, huber_weights(s, delta_h), 0.0)
        J = jacobian(R, t, K, P, opts).reshape(-1, 6 + k)
        wr = np.repeat(w, 2)
        A = J.T @ (J * wr[:, None])
        g = J.T @ (wr * r.ravel())
        if np.max(np.abs(g)) < opts.grad_tol:
            converged = True
            break
        accepted = False
        while lam <= opts.lambda_max:
            Ad = A + lam * np.diag(np.diag(A) + 1e-12)
            try:
                step = np.linalg.solve(Ad, -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            if not np.all(np.isfinite(step)):
                lam *= 10
                continue
            R2, t2, K2 = apply_update(R, t, K, step, opts)
            if K2.fx <= 0 or K2.fy <= 0:
                lam *= 10
                continue
            c2 = robust_cost(R2, t2, K2, P, p, delta_h)
            if c2 < cost:
                R, t, K, cost = R2, t2, K2, c2
                lam = max(lam / 10, 1e-12)
                accepted = True
                break
            if np.linalg.norm(step) < 1e-12 * (1 + np.linalg.norm(t)):
                break
            lam *= 10
        if not accepted:
            # no descent direction left at any damping: we are at a minimum
            converged = True
            break
        if np.linalg.norm(step) < 1e-12 * (1 + np.linalg.norm(t)):
            converged = True
            break
    if not np.all(np.isfinite(t)) or not np.isfinite(cost):
        raise Diverged("parameters left the finite range")
    r, front = residuals(R, t, K, P, p)
    mean = float(np.mean(np.where(front, np.linalg.norm(r, axis=1), np.inf)))
    if K.fx != K0.fx or K.fy != K0.fy or K.cx != K0.cx or K.cy != K0.cy:
        try:
            K = CameraIntrinsics(K.fx, K.fy, K.cx, K.cy, K.width, K.height)
        except ValueError as exc:
            raise Diverged(str(exc)) from exc
    return CalibEstimate(CameraPose(R, t), K, mean, converged, it, cost)


def valley_profile(P, K: CameraIntrinsics, T: CameraPose, alphas, pivot=None) -> np.ndarray:
    """Mean reprojection change when focal and camera-frame depth t_z are scaled together.

    Observations are the exact projections under (K, T); for each alpha the
    focal length and the camera-frame depth of ``pivot`` (a world point,
    default the point centroid; pass the ground plane point to scale the
    depth of a base plane) are multiplied by alpha and the mean pixel
    displacement is returned. Fronto-parallel flat scenes give ~0.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    # measure depth from the scene: shift the world origin to the pivot
    c = P.mean(0) if pivot is None else np.asarray(pivot, dtype=float)
    P = P - c
    t = T.translation + T.rotation @ c
    p, _ = residuals(T.rotation, t, K, P, np.zeros((len(P), 2)))
    out = []
    for a in np.atleast_1d(alphas):
        Ka = CameraIntrinsics.unchecked(K.fx * a, K.fy * a, K.cx, K.cy, K.width, K.height)
        ta = t * np.array([1.0, 1.0, a])
        r, front = residuals(T.rotation, ta, Ka, P, p)
        out.append(float(np.mean(np.where(front, np.linalg.norm(r, axis=1), np.inf))))
    return np.array(out)
