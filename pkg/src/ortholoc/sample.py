"""The dataset sample tuple and its on-disk directory layout."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InconsistentDims, MissingComponent, Unachievable
from .geometry import CameraIntrinsics, CameraPose, GeoRef, project_points
from .raster import DEFAULT_NODATA, Raster, read_raster, write_raster

_QUERY_GEOREF = GeoRef(0.0, 0.0, 1.0, -1.0)
POINTMAP_FILES = ("pm_x.orlr", "pm_y.orlr", "pm_z.orlr")


@dataclass(eq=False)
class Sample:
    """Query image, its point map, the paired DOP/DSM crops and the camera.

    ``point_map`` is (H, W, 3) float32 world coordinates with NaN rows for
    pixels without a surface hit. ``gt_pose`` may be ``None`` at inference.
    """

    query_image: np.ndarray
    point_map: np.ndarray
    dop: Raster
    dsm: Raster
    intrinsics: CameraIntrinsics
    gt_pose: CameraPose | None = None
    keypoints3d: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.keypoints3d = np.asarray(self.keypoints3d, dtype=float).reshape(-1, 3)
        if self.query_image.shape[:2] != self.point_map.shape[:2]:
            raise InconsistentDims(
                f"point map {self.point_map.shape[:2]} does not match query {self.query_image.shape[:2]}"
            )
        H, W = self.query_image.shape[:2]
        if (self.intrinsics.width, self.intrinsics.height) != (W, H):
            raise InconsistentDims("camera size does not match the query image")

    @property
    def sample_id(self) -> str:
        return self.meta.get("id", "sample")

    @property
    def point_valid(self) -> np.ndarray:
        return np.all(np.isfinite(self.point_map), axis=-1)

    def replace(self, **changes) -> "Sample":
        return replace(self, **changes)

    def equals(self, other: "Sample") -> bool:
        same_pose = (self.gt_pose is None and other.gt_pose is None) or (
            self.gt_pose is not None and other.gt_pose is not None
            and np.array_equal(self.gt_pose.rotation, other.gt_pose.rotation)
            and np.array_equal(self.gt_pose.translation, other.gt_pose.translation)
        )
        return (
            np.array_equal(self.query_image, other.query_image)
            and self.point_map.dtype == other.point_map.dtype
            and np.array_equal(self.point_map, other.point_map, equal_nan=True)
            and self.dop.equals(other.dop)
            and self.dsm.equals(other.dsm)
            and self.intrinsics == other.intrinsics
            and same_pose
            and np.array_equal(self.keypoints3d, other.keypoints3d)
            and self.meta == other.meta
        )


def validate_sample(sample: Sample, max_residual_px: float = 0.5) -> None:
    """Raise ``ValueError`` if the point map does not reproject onto its own pixels."""
    if sample.gt_pose is None:
        return
    valid = sample.point_valid
    if not valid.any():
        return
    rows, cols = np.nonzero(valid)
    uv, _ = project_points(sample.point_map[valid].astype(float), sample.intrinsics, sample.gt_pose)
    err = np.linalg.norm(uv - np.column_stack([cols, rows]), axis=1)
    if not np.all(err < max_residual_px):
        raise ValueError(f"point map reprojects with max residual {err.max():.3f} px")


def save_sample(sample: Sample, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_raster(Raster(sample.query_image, _QUERY_GEOREF), d / "query.orlr")
    pm = sample.point_map.astype(np.float32)
    invalid = ~sample.point_valid
    for c, name in enumerate(POINTMAP_FILES):
        chan = pm[..., c].copy()
        chan[invalid] = DEFAULT_NODATA
        write_raster(Raster(chan, _QUERY_GEOREF, DEFAULT_NODATA), d / name)
    write_raster(sample.dop, d / "dop.orlr")
    write_raster(sample.dsm, d / "dsm.orlr")
    K = sample.intrinsics
    cam = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height}
    if sample.gt_pose is not None:
        qw, qx, qy, qz = sample.gt_pose.quaternion
        tx, ty, tz = sample.gt_pose.translation
        cam.update(qw=qw, qx=qx, qy=qy, qz=qz, tx=tx, ty=ty, tz=tz)
        # exact matrix alongside the quaternion so round trips are lossless
        cam["R"] = sample.gt_pose.rotation.tolist()
    (d / "camera.json").write_text(json.dumps(cam, indent=2))
    with open(d / "keypoints.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for x, y, z in sample.keypoints3d:
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z))])
    (d / "meta.json").write_text(json.dumps(dict(sample.meta), indent=2, sort_keys=True))


def load_sample(directory) -> Sample:
    d = Path(directory)
    required = {
        "query": [d / "query.orlr"],
        "pointmap": [d / n for n in POINTMAP_FILES],
        "dop": [d / "dop.orlr"],
        "dsm": [d / "dsm.orlr"],
        "camera": [d / "camera.json"],
    }
    for name, paths in required.items():
        if not all(p.exists() for p in paths):
            raise MissingComponent(name)
    query = read_raster(d / "query.orlr").data
    chans = [read_raster(d / n) for n in POINTMAP_FILES]
    if any(c.data.shape != query.shape[:2] for c in chans):
        raise InconsistentDims("point map size differs from the query image")
    invalid = np.zeros(query.shape[:2], bool)
    for c in chans:
        invalid |= c.data == c.nodata
    pm = np.stack([c.data for c in chans], -1).astype(np.float32)
    pm[invalid] = np.nan
    cam = json.loads((d / "camera.json").read_text())
    K = CameraIntrinsics(cam["fx"], cam["fy"], cam["cx"], cam["cy"], cam["width"], cam["height"])
    pose = None
    if "R" in cam:
        pose = CameraPose(np.array(cam["R"]), [cam["tx"], cam["ty"], cam["tz"]])
    elif "qw" in cam:
        pose = CameraPose.from_quaternion([cam["qw"], cam["qx"], cam["qy"], cam["qz"]], [cam["tx"], cam["ty"], cam["tz"]])
    kp = np.zeros((0, 3))
    if (d / "keypoints.csv").exists():
        with open(d / "keypoints.csv", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if rows and rows[0] == ["x", "y", "z"]:
            rows = rows[1:]
        kp = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(-1, 3)
    meta = {}
    if (d / "meta.json").exists():
        meta = {str(k): str(v) for k, v in json.loads((d / "meta.json").read_text()).items()}
    return Sample(query, pm, read_raster(d / "dop.orlr"), read_raster(d / "dsm.orlr"), K, pose, kp, meta)


def list_sample_dirs(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "camera.json").exists())


def covisible_mask(sample: Sample, raster: Raster | None = None) -> np.ndarray:
    """Per valid point-map entry: does its XY fall inside the (DOP) raster?"""
    raster = sample.dop if raster is None else raster
    XY = sample.point_map[sample.point_valid][:, :2].astype(float)
    xmin, ymin, xmax, ymax = raster.world_bounds()
    return (XY[:, 0] >= xmin) & (XY[:, 0] <= xmax) & (XY[:, 1] >= ymin) & (XY[:, 1] <= ymax)


def covisibility(sample: Sample, raster: Raster | None = None) -> float:
    m = covisible_mask(sample, raster)
    return float(m.mean()) if m.size else 0.0


def _crop_dsm_like(dsm: Raster, dop_crop: Raster) -> Raster:
    xmin, ymin, xmax, ymax = dop_crop.world_bounds()
    g = dsm.georef
    px = sorted([(xmin - g.origin_x) / g.scale_x, (xmax - g.origin_x) / g.scale_x])
    py = sorted([(ymin - g.origin_y) / g.scale_y, (ymax - g.origin_y) / g.scale_y])
    c0 = max(0, int(np.floor(px[0] + 0.5)))
    c1 = min(dsm.width, int(np.ceil(px[1] - 0.5)))
    r0 = max(0, int(np.floor(py[0] + 0.5)))
    r1 = min(dsm.height, int(np.ceil(py[1] - 0.5)))
    return dsm.crop(c0, r0, max(c1, c0 + 1), max(r1, r0 + 1))


def crop_covis(sample: Sample, covis_ratio: float, rng_seed: int = 0, tol: float = 0.02) -> Sample:
    """Crop DOP/DSM so that ``covis_ratio`` of the query's valid points stay covered.

    The crop is a box around a seeded random covisible anchor; its size is
    found by bisection, so for a fixed seed smaller ratios give nested crops.
    """
    if not 0 < covis_ratio <= 1:
        raise ValueError("covis_ratio must be in (0, 1]")
    if covis_ratio == 1:
        return sample
    XY = sample.point_map[sample.point_valid][:, :2].astype(float)
    inside = covisible_mask(sample)
    if XY.size == 0 or inside.mean() < covis_ratio - tol:
        raise Unachievable(f"base covisibility {inside.mean() if XY.size else 0:.3f} < {covis_ratio}")
    dop = sample.dop
    pix = dop.georef.world_to_pixel(XY)
    rng = np.random.default_rng(rng_seed)
    anchor = pix[rng.choice(np.flatnonzero(inside))]
    W, H = dop.width, dop.height

    def box(r: float):
        c0 = int(np.clip(np.floor(anchor[0] - r * W + 0.5), 0, W - 1))
        c1 = int(np.clip(np.ceil(anchor[0] + r * W + 0.5), c0 + 1, W))
        r0 = int(np.clip(np.floor(anchor[1] - r * H + 0.5), 0, H - 1))
        r1 = int(np.clip(np.ceil(anchor[1] + r * H + 0.5), r0 + 1, H))
        return c0, r0, c1, r1

    n = len(XY)

    def frac(b) -> float:
        c0, r0, c1, r1 = b
        ok = (pix[:, 0] >= c0 - 0.5) & (pix[:, 0] <= c1 - 0.5) & (pix[:, 1] >= r0 - 0.5) & (pix[:, 1] <= r1 - 0.5)
        return ok.sum() / n

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if frac(box(mid)) >= covis_ratio:
            hi = mid
        else:
            lo = mid
    best = min((box(hi), box(lo)), key=lambda b: abs(frac(b) - covis_ratio))
    if abs(frac(best) - covis_ratio) > tol:
        raise Unachievable(f"closest achievable covisibility is {frac(best):.3f}")
    c0, r0, c1, r1 = best
    dop_c = dop.crop(c0, r0, c1, r1)
    dsm_c = sample.dsm.crop(c0, r0, c1, r1) if sample.dsm.georef == dop.georef else _crop_dsm_like(sample.dsm, dop_c)
    meta = dict(sample.meta, covis_ratio=repr(covis_ratio))
    return sample.replace(dop=dop_c, dsm=dsm_c, meta=meta)
