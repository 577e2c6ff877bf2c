"""Camera models, projections and DOP -> DSM lifting.

Conventions used throughout the package:

* Poses are world-to-camera: ``X_cam = R @ X_world + t``.
* Camera frame is x right, y down, z forward (optical axis).
* Raster pixel coordinates are pixel-centred: ``(0, 0)`` is the centre of the
  top-left cell and the georeferenced origin ``(o_x, o_y)`` is the world XY of
  that centre. A raster of width ``W`` therefore covers ``x in [-0.5, W - 0.5]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, EmptyCorrespondences, NoData, NonPositiveDepth, OutOfBounds

EPS_DEPTH = 1e-9
ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics (no distortion)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not self.checked:
            return
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def unchecked(cls, fx, fy, cx, cy, width=0, height=0) -> "CameraIntrinsics":
        """Build intrinsics without the principal-point/focal checks (test fixtures)."""
        return cls(fx, fy, cx, cy, width, height, checked=False)

    @classmethod
    def centered(cls, focal: float, width: int, height: int) -> "CameraIntrinsics":
        """Shared focal length with the principal point at the image centre."""
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @classmethod
    def from_matrix(cls, K: np.ndarray, width: int, height: int) -> "CameraIntrinsics":
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def with_focal(self, fx: float, fy: float | None = None) -> "CameraIntrinsics":
        fy = fx if fy is None else fy
        return CameraIntrinsics(fx, fy, self.cx, self.cy, self.width, self.height, checked=self.checked)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics of the same camera after resizing the image by ``factor``."""
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        sx, sy = w / self.width, h / self.height
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy,
            (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5,
            w, h, checked=self.checked,
        )

    def contains(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(uv)
        return (
            (uv[:, 0] >= -0.5) & (uv[:, 0] <= self.width - 0.5)
            & (uv[:, 1] >= -0.5) & (uv[:, 1] <= self.height - 0.5)
        )


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (Frobenius-nearest)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    W = np.array([[0.0, -omega[2], omega[1]], [omega[2], 0.0, -omega[0]], [-omega[1], omega[0], 0.0]])
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + np.sin(theta) / theta * W + (1.0 - np.cos(theta)) / theta**2 * W @ W


def rotation_angle_deg(R1: np.ndarray, R2: np.ndarray) -> float:
    """Angle of the relative rotation ``R1 @ R2.T`` in degrees.

    Uses ``||R1 - R2||_F = 2 sqrt(2) sin(theta / 2)`` which, unlike the trace
    formula, keeps full precision for tiny angles.
    """
    d = np.linalg.norm(np.asarray(R1) - np.asarray(R2))
    s = np.clip(d / (2.0 * np.sqrt(2.0)), 0.0, 1.0)
    return float(np.degrees(2.0 * np.arcsin(s)))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose contains non-finite values")
        if np.abs(R @ R.T - np.eye(3)).max() > ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_center(cls, rotation: np.ndarray, center: np.ndarray) -> "CameraPose":
        R = np.asarray(rotation, dtype=float)
        return cls(R, -R @ np.asarray(center, dtype=float))

    @classmethod
    def from_quaternion(cls, q_wxyz, translation) -> "CameraPose":
        w, x, y, z = q_wxyz
        R = Rotation.from_quat([x, y, z, w]).as_matrix()
        return cls(nearest_rotation(R), translation)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "CameraPose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def quaternion(self) -> np.ndarray:
        """Rotation as (w, x, y, z) with w >= 0."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return q if w >= 0 else -q

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def transform(self, points: np.ndarray) -> np.ndarray:
        """World points (N, 3) or (3,) into the camera frame."""
        P = np.asarray(points, dtype=float)
        return P @ self.rotation.T + self.translation

    def shifted(self, v: np.ndarray) -> "CameraPose":
        """Pose expressed in a world frame translated by ``-v`` (t' = t + R v)."""
        return CameraPose(self.rotation, self.translation + self.rotation @ np.asarray(v, dtype=float))

    def allclose(self, other: "CameraPose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )


@dataclass(frozen=True)
class GeoRef:
    """Affine pixel <-> world XY mapping of a north-up raster."""

    origin_x: float
    origin_y: float
    scale_x: float
    scale_y: float

    def __post_init__(self):
        if self.scale_x == 0 or self.scale_y == 0:
            raise ValueError("raster scales must be non-zero")
        if self.scale_x < 0 or self.scale_y > 0:
            warnings.warn(
                "GeoRef deviates from the usual geodata convention (scale_x > 0, scale_y < 0)",
                stacklevel=3,
            )

    def pixel_to_world(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([xy[..., 0] * self.scale_x + self.origin_x, xy[..., 1] * self.scale_y + self.origin_y], -1)

    def world_to_pixel(self, XY: np.ndarray) -> np.ndarray:
        XY = np.asarray(XY, dtype=float)
        return np.stack(
            [(XY[..., 0] - self.origin_x) / self.scale_x, (XY[..., 1] - self.origin_y) / self.scale_y], -1
        )

    def shifted(self, dx: float, dy: float) -> "GeoRef":
        return GeoRef(self.origin_x + dx, self.origin_y + dy, self.scale_x, self.scale_y)

    def cropped(self, col0: int, row0: int) -> "GeoRef":
        return GeoRef(
            self.origin_x + col0 * self.scale_x, self.origin_y + row0 * self.scale_y, self.scale_x, self.scale_y
        )


@dataclass(frozen=True)
class OrthoCamera:
    """Nadir orthographic camera of a georeferenced raster.

    ``K @ Pi @ T`` reproduces ``x = (X - o_x) / s_x``, ``y = (Y - o_y) / s_y``
    with ``f = 1 / s``, zero principal point, identity rotation, and a
    projection matrix that drops Z.
    """

    georef: GeoRef

    @property
    def K(self) -> np.ndarray:
        return np.diag([1.0 / self.georef.scale_x, 1.0 / self.georef.scale_y, 1.0])

    @property
    def Pi(self) -> np.ndarray:
        return np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 0, 1.0]])

    @property
    def T(self) -> np.ndarray:
        T = np.eye(4)
        T[0, 3] = -self.georef.origin_x
        T[1, 3] = -self.georef.origin_y
        return T

    @property
    def projection_matrix(self) -> np.ndarray:
        return self.K @ self.Pi @ self.T


def project_points(P: np.ndarray, K: CameraIntrinsics, T: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Batch perspective projection.

    Returns ``(uv, depth)`` for ``P`` of shape (N, 3). Points with depth
    <= ``EPS_DEPTH`` get ``uv = inf`` instead of raising.
    """
    Xc = T.transform(np.atleast_2d(P))
    z = Xc[:, 2]
    front = z > EPS_DEPTH
    uv = np.full((len(Xc), 2), np.inf)
    zf = z[front]
    uv[front, 0] = K.fx * Xc[front, 0] / zf + K.cx
    uv[front, 1] = K.fy * Xc[front, 1] / zf + K.cy
    return uv, z


def project_perspective(P: np.ndarray, K: CameraIntrinsics, T: CameraPose) -> tuple[np.ndarray, float]:
    """Project a single world point; raises :class:`BehindCamera` for depth <= 1e-9 m."""
    uv, z = project_points(np.asarray(P, dtype=float).reshape(1, 3), K, T)
    if not z[0] > EPS_DEPTH:
        raise BehindCamera(f"point depth {z[0]:.3g} m is not in front of the camera")
    return uv[0], float(z[0])


def unproject_perspective(p: np.ndarray, depth, K: CameraIntrinsics, T: CameraPose) -> np.ndarray:
    """Back-project pixel(s) at the given camera depth(s) into world coordinates."""
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    d = np.broadcast_to(np.asarray(depth, dtype=float), (len(p),))
    if np.any(~(d > 0)):
        raise NonPositiveDepth("depth must be positive")
    Xc = np.stack([(p[:, 0] - K.cx) / K.fx * d, (p[:, 1] - K.cy) / K.fy * d, d], -1)
    Pw = (Xc - T.translation) @ T.rotation
    return Pw[0] if single else Pw


def project_ortho(P: np.ndarray, cam: OrthoCamera) -> np.ndarray:
    """Nadir orthographic projection into raster pixels. Z is ignored."""
    P = np.asarray(P, dtype=float)
    return cam.georef.world_to_pixel(P[..., :2])


def raster_map_matrix(src: GeoRef, dst: GeoRef) -> np.ndarray:
    """Homogeneous 3x3 map from ``src`` raster pixels to ``dst`` raster pixels."""
    return np.array([
        [src.scale_x / dst.scale_x, 0.0, (src.origin_x - dst.origin_x) / dst.scale_x],
        [0.0, src.scale_y / dst.scale_y, (src.origin_y - dst.origin_y) / dst.scale_y],
        [0.0, 0.0, 1.0],
    ])


def sample_grid(
    data: np.ndarray, xy: np.ndarray, mode: str = "bilinear", nodata: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample a single-channel grid at pixel-centred coordinates.

    Returns ``(values, in_bounds, has_data)``. In bilinear mode a sample is
    marked as no-data when any neighbour with non-zero weight holds the
    sentinel; edges are clamped within the half-pixel border.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    H, W = data.shape[:2]
    x, y = xy[:, 0], xy[:, 1]
    inb = np.isfinite(x) & np.isfinite(y) & (x >= -0.5) & (x <= W - 0.5) & (y >= -0.5) & (y <= H - 0.5)
    xs = np.where(inb, np.clip(x, 0, W - 1), 0.0)
    ys = np.where(inb, np.clip(y, 0, H - 1), 0.0)
    if mode == "nearest":
        c = np.minimum(np.floor(xs + 0.5).astype(int), W - 1)
        r = np.minimum(np.floor(ys + 0.5).astype(int), H - 1)
        vals = data[r, c].astype(float)
        ok = np.ones(len(xs), bool) if nodata is None else data[r, c] != nodata
    elif mode == "bilinear":
        c0 = np.minimum(np.floor(xs).astype(int), W - 1)
        r0 = np.minimum(np.floor(ys).astype(int), H - 1)
        c1 = np.minimum(c0 + 1, W - 1)
        r1 = np.minimum(r0 + 1, H - 1)
        wx = xs - c0
        wy = ys - r0
        v00, v01 = data[r0, c0].astype(float), data[r0, c1].astype(float)
        v10, v11 = data[r1, c0].astype(float), data[r1, c1].astype(float)
        top = v00 + wx * (v01 - v00)
        bot = v10 + wx * (v11 - v10)
        vals = top + wy * (bot - top)
        if nodata is None:
            ok = np.ones(len(xs), bool)
        else:
            ok = (
                (v00 != nodata)
                & ((wx == 0) | (v01 != nodata))
                & ((wy == 0) | (v10 != nodata))
                & ((wx == 0) | (wy == 0) | (v11 != nodata))
            )
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    ok = ok & inb
    return vals, inb, ok


def lift_points(
    p_dop: np.ndarray, dsm, dop_georef: GeoRef, mode: str = "bilinear"
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised DOP pixel -> world lifting.

    Returns ``(points, valid)`` where invalid rows (out of bounds or no-data)
    hold NaN.
    """
    p = np.atleast_2d(np.asarray(p_dop, dtype=float))
    XY = dop_georef.pixel_to_world(p)
    M = raster_map_matrix(dop_georef, dsm.georef)
    q = p @ M[:2, :2].T + M[:2, 2]
    z, _, ok = sample_grid(dsm.data, q, mode, dsm.nodata)
    P = np.column_stack([XY, z])
    P[~ok] = np.nan
    return P, ok


def lift_dop_to_3d(p_dop: np.ndarray, dsm, dop_georef: GeoRef, mode: str = "bilinear") -> np.ndarray:
    """Lift one DOP pixel to a world point using the co-registered DSM."""
    p = np.asarray(p_dop, dtype=float).reshape(1, 2)
    M = raster_map_matrix(dop_georef, dsm.georef)
    q = p @ M[:2, :2].T + M[:2, 2]
    _, inb, ok = sample_grid(dsm.data, q, mode, dsm.nodata)
    if not inb[0]:
        raise OutOfBounds(f"DOP pixel {p[0]} maps outside the DSM")
    if not ok[0]:
        raise NoData(f"DOP pixel {p[0]} maps to a no-data DSM cell")
    P, _ = lift_points(p, dsm, dop_georef, mode)
    return P[0]


def reprojection_residuals(P: np.ndarray, p: np.ndarray, K: CameraIntrinsics, T: CameraPose) -> np.ndarray:
    """Per-correspondence ``project(P_i) - p_i``; behind-camera rows are ``inf``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if len(P) == 0:
        raise EmptyCorrespondences("no correspondences")
    uv, _ = project_points(P, K, T)
    return uv - np.atleast_2d(np.asarray(p, dtype=float))


def look_at_rotation(forward: np.ndarray, right_hint: np.ndarray) -> np.ndarray:
    """World-to-camera rotation with z along ``forward`` and x close to ``right_hint``."""
    z = np.asarray(forward, dtype=float)
    z = z / np.linalg.norm(z)
    x = np.asarray(right_hint, dtype=float)
    x = x - z * (x @ z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])
