"""Rasterise DSM/DOP from a scene and ray-cast perspective query views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CameraInsideGeometry
from ..geometry import CameraIntrinsics, CameraPose, GeoRef, look_at_rotation
from ..raster import DEFAULT_NODATA, Raster
from .scene import SceneSpec, quantize


@dataclass(frozen=True)
class ViewSpec:
    """Camera looking at ``look_at`` (XY) from ``altitude`` metres above it.

    ``obliqueness`` tilts the optical axis away from nadir towards the
    azimuth direction; azimuth 0 keeps image rows aligned with north-up rasters.
    """

    altitude: float
    obliqueness: float
    azimuth: float
    intrinsics: CameraIntrinsics
    look_at: tuple[float, float]

    def __post_init__(self):
        if not 0 <= self.obliqueness <= 85:
            raise ValueError("obliqueness must lie in [0, 85] degrees")
        if not self.altitude > 0:
            raise ValueError("altitude must be positive")

    def pose(self, scene: SceneSpec) -> CameraPose:
        th, az = np.deg2rad(self.obliqueness), np.deg2rad(self.azimuth)
        right = np.array([np.cos(az), np.sin(az), 0.0])
        fwd = np.cos(th) * np.array([0.0, 0.0, -1.0]) + np.sin(th) * np.array([-np.sin(az), np.cos(az), 0.0])
        R = look_at_rotation(fwd, right)
        L = np.array([self.look_at[0], self.look_at[1], float(scene.height(*self.look_at))])
        C = L - (self.altitude / np.cos(th)) * fwd
        return CameraPose.from_center(R, C)


def raster_georef(scene: SceneSpec, scale: float | None = None) -> tuple[GeoRef, int, int]:
    s = scene.raster_scale if scale is None else scale
    x0, y0, x1, y1 = scene.bounds
    W = int(np.ceil(round((x1 - x0) / s, 9)))
    H = int(np.ceil(round((y1 - y0) / s, 9)))
    return GeoRef(x0 + 0.5 * s, y1 - 0.5 * s, s, -s), W, H


def _cell_centers(scene: SceneSpec, scale):
    g, W, H = raster_georef(scene, scale)
    cc, rr = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    XY = g.pixel_to_world(np.column_stack([cc.ravel(), rr.ravel()]))
    return g, W, H, XY[:, 0], XY[:, 1]


def rasterize_dsm(scene: SceneSpec, scale: float | None = None) -> Raster:
    """Top-surface elevation at every cell centre; centres outside the extent are no-data."""
    g, W, H, X, Y = _cell_centers(scene, scale)
    z = quantize(scene.height(X, Y))
    z = np.where(scene.inside(X, Y), z, DEFAULT_NODATA)
    return Raster(z.reshape(H, W).astype(np.float32), g, DEFAULT_NODATA)


def render_dop(scene: SceneSpec, scale: float | None = None) -> Raster:
    """Orthographic nadir colour of the top surface at every cell centre (same georef as the DSM)."""
    g, W, H, X, Y = _cell_centers(scene, scale)
    _, sid = scene.surface(X, Y)
    col = scene.albedo(X, Y, sid)
    col = np.where(scene.inside(X, Y)[:, None], col, 0.0)
    return Raster(np.clip(np.round(col), 0, 255).astype(np.uint8).reshape(H, W, 3), g)


def camera_rays(K: CameraIntrinsics, T: CameraPose):
    """World-frame unit ray directions through every pixel centre (row-major)."""
    uu, vv = np.meshgrid(np.arange(K.width, dtype=float), np.arange(K.height, dtype=float))
    d_cam = np.column_stack([(uu.ravel() - K.cx) / K.fx, (vv.ravel() - K.cy) / K.fy, np.ones(uu.size)])
    d = d_cam @ T.rotation  # R^T applied row-wise
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _terrain_hits(scene: SceneSpec, C: np.ndarray, d: np.ndarray, iters: int = 400) -> np.ndarray:
    """First intersection distance with the terrain (inf for misses), conservative marching."""
    zmin, zmax = scene.terrain_range
    n = len(d)
    t_hit = np.full(n, np.inf)
    down = d[:, 2] < -1e-12
    if zmax == zmin:
        t = np.where(down, (zmin - C[2]) / np.where(down, d[:, 2], -1.0), np.inf)
        t_hit = np.where(down & (t > 0), t, np.inf)
        return t_hit
    L = scene.terrain.lipschitz
    bound = np.abs(d[:, 2]) + L * np.hypot(d[:, 0], d[:, 1]) + 1e-12
    t = np.where(down & (C[2] > zmax), (zmax - C[2]) / np.where(down, d[:, 2], -1.0), 0.0)
    t_end = np.where(down, (zmin - 1e-6 - C[2]) / np.where(down, d[:, 2], -1.0), 0.0)
    active = down.copy()
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        P = C + t[idx, None] * d[idx]
        f = P[:, 2] - scene.terrain_height(P[:, 0], P[:, 1])
        done = f < 1e-9
        t_hit[idx[done]] = t[idx[done]]
        t[idx] = t[idx] + np.maximum(f, 0.0) / bound[idx]
        over = t[idx] > t_end[idx]
        active[idx[done | over]] = False
    # rays still active after the budget are polished from where they stopped
    t_hit[active] = t[active]
    return t_hit


def _box_hits(scene: SceneSpec, C: np.ndarray, d: np.ndarray):
    """Nearest box entry distance, box index and entry face (0: x wall, 1: y wall, 2: roof)."""
    n = len(d)
    best_t = np.full(n, np.inf)
    best_id = np.full(n, -1, int)
    best_face = np.full(n, -1, int)
    zlow = scene.terrain_range[0] - 50.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    for i, b in enumerate(scene.buildings):
        lo = np.array([b.x0, b.y0, zlow])
        hi = np.array([b.x1, b.y1, scene.box_top(b)])
        with np.errstate(invalid="ignore"):
            t1 = (lo - C) * inv
            t2 = (hi - C) * inv
        # axis-parallel rays: inside the slab means unbounded, outside means miss
        par = d == 0
        inside = (C >= lo) & (C <= hi)
        tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        t_near = tmin.max(1)
        face = tmin.argmax(1)
        t_far = tmax.min(1)
        hit = (t_near <= t_far) & (t_near > 0)
        better = hit & (t_near < best_t)
        best_t = np.where(better, t_near, best_t)
        best_id = np.where(better, i, best_id)
        best_face = np.where(better, face, best_face)
    return best_t, best_id, best_face


def render_query(scene: SceneSpec, view: ViewSpec, pose: CameraPose | None = None):
    """Ray-cast the view. Returns ``(image uint8 HxWx3, point_map float32 HxWx3 with NaN misses)``."""
    K = view.intrinsics
    T = view.pose(scene) if pose is None else pose
    C = T.camera_center()
    if C[2] <= float(scene.height(C[0], C[1])) + 1e-6:
        raise CameraInsideGeometry("camera centre is below the scene surface")
    for b in scene.buildings:
        if b.x0 <= C[0] <= b.x1 and b.y0 <= C[1] <= b.y1 and C[2] <= scene.box_top(b):
            raise CameraInsideGeometry("camera centre is inside a building")
    d = camera_rays(K, T)
    t_ter = _terrain_hits(scene, C, d)
    t_box, box_id, face = _box_hits(scene, C, d)
    use_box = t_box < t_ter
    t = np.where(use_box, t_box, t_ter)
    hit = np.isfinite(t)
    P = C + np.where(hit, t, 0.0)[:, None] * d
    hit &= scene.inside(P[:, 0], P[:, 1])

    n = len(d)
    col = np.zeros((n, 3))
    ter = hit & ~use_box
    if ter.any():
        col[ter] = scene.ground_albedo(P[ter, 0], P[ter, 1])
    roof = hit & use_box & (face == 2)
    if roof.any():
        col[roof] = scene.roof_albedo(P[roof, 0], P[roof, 1], box_id[roof])
    wall = hit & use_box & (face != 2)
    if wall.any():
        along = np.where(face[wall] == 0, P[wall, 1], P[wall, 0])
        col[wall] = scene.facade_albedo(along, P[wall, 2], box_id[wall])
    col[~hit] = 0.0
    img = np.clip(np.round(col), 0, 255).astype(np.uint8).reshape(K.height, K.width, 3)

    pm = np.where(hit[:, None], quantize(P), np.nan).astype(np.float32)
    return img, pm.reshape(K.height, K.width, 3)
