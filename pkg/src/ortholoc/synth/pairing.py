"""Pair rendered views with raster crops, anonymise them and simulate domain shift."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from ..errors import FootprintOutsideScene, OrthoLocError
from ..geometry import CameraIntrinsics, CameraPose
from ..raster import Raster
from ..sample import Sample, save_sample
from .render import ViewSpec, render_dop, render_query, rasterize_dsm
from .scene import LATTICE, SceneSpec, quantize, random_scene

# vertex perturbation ranges (metres) for the footprint quadrilateral
PERTURBATION_PRESETS = {
    "appendix": (-20.0, 20.0),
    "main": (0.0, 10.0),
    "none": (0.0, 0.0),
}


@dataclass
class SceneRasters:
    """Full-scene DSM and DOP sharing one georef."""

    dsm: Raster
    dop: Raster

    @classmethod
    def build(cls, scene: SceneSpec) -> "SceneRasters":
        return cls(rasterize_dsm(scene), render_dop(scene))


def footprint_quad(points_xy: np.ndarray) -> np.ndarray:
    """Minimum-area rectangle enclosing the visible ground points, as 4 XY vertices."""
    rect = cv2.minAreaRect(points_xy.astype(np.float32))
    quad = cv2.boxPoints(rect).astype(float)
    # cv2 works in float32; push vertices out so every point stays enclosed
    c = quad.mean(0)
    return quad + np.sign(quad - c) * 1e-3


def _crop_box(raster: Raster, xmin, ymin, xmax, ymax):
    g = raster.georef
    px = sorted([(xmin - g.origin_x) / g.scale_x, (xmax - g.origin_x) / g.scale_x])
    py = sorted([(ymin - g.origin_y) / g.scale_y, (ymax - g.origin_y) / g.scale_y])
    c0 = max(0, int(np.floor(px[0] + 0.5)))
    c1 = min(raster.width, int(np.ceil(px[1] + 0.5)))
    r0 = max(0, int(np.floor(py[0] + 0.5)))
    r1 = min(raster.height, int(np.ceil(py[1] + 0.5)))
    return c0, r0, c1, r1


def pair_sample(
    scene: SceneSpec,
    view: ViewSpec,
    expansion: float = 0.0,
    rng_seed: int = 0,
    preset: str = "appendix",
    rasters: SceneRasters | None = None,
    n_keypoints: int = 64,
    sample_id: str = "sample",
) -> Sample:
    """Render ``view`` and crop the scene rasters around its perturbed footprint quadrilateral."""
    if expansion < 0:
        raise ValueError("expansion must be >= 0")
    lo, hi = PERTURBATION_PRESETS[preset]
    rng = np.random.default_rng(rng_seed)
    rasters = rasters or SceneRasters.build(scene)
    pose = view.pose(scene)
    img, pm = render_query(scene, view, pose)
    valid = np.all(np.isfinite(pm), -1)
    if valid.sum() < 4:
        raise FootprintOutsideScene("the view sees (almost) none of the scene")
    XY = pm[valid][:, :2].astype(float)
    quad = footprint_quad(XY)
    c = quad.mean(0)
    eps = rng.uniform(lo, hi, size=(4, 2))
    quad = quad + np.sign(quad - c) * (expansion + eps)
    xmin, ymin = quad.min(0)
    xmax, ymax = quad.max(0)
    c0, r0, c1, r1 = _crop_box(rasters.dop, xmin, ymin, xmax, ymax)
    if c1 - c0 < 2 or r1 - r0 < 2:
        raise FootprintOutsideScene("perturbed footprint does not overlap the scene rasters")
    dop = rasters.dop.crop(c0, r0, c1, r1)
    dsm = rasters.dsm.crop(c0, r0, c1, r1)

    rows, cols = np.nonzero(valid)
    pick = np.linspace(0, len(rows) - 1, min(n_keypoints, len(rows))).round().astype(int)
    kp = pm[rows[pick], cols[pick]].astype(float)
    meta = {
        "id": sample_id,
        "obliqueness_deg": repr(float(view.obliqueness)),
        "azimuth_deg": repr(float(view.azimuth)),
        "altitude_m": repr(float(view.altitude)),
        "preset": preset,
        "expansion_m": repr(float(expansion)),
    }
    return Sample(img, pm, dop, dsm, view.intrinsics, pose, kp, meta)


def draw_anonymization_offset(sample: Sample, rng_seed: int) -> np.ndarray:
    """A visible scene point (a valid point-map entry), on the storage lattice."""
    rng = np.random.default_rng(rng_seed)
    pts = sample.point_map[sample.point_valid].astype(float)
    return quantize(pts[rng.integers(len(pts))])


def anonymize(sample: Sample, rng_seed: int = 0, offset=None) -> Sample:
    """Shift every geometric quantity by ``-v`` so the sample lives in a local frame.

    Point map, keypoints and DSM heights move by ``-v``; raster origins by
    ``-v_xy``; the translation becomes ``t + R v``; the rotation is untouched.
    """
    v = draw_anonymization_offset(sample, rng_seed) if offset is None else np.asarray(offset, dtype=float)
    if not np.any(v):
        return sample
    pm = (sample.point_map - v.astype(np.float32)).astype(np.float32)
    dsm = sample.dsm
    dsm_data = np.where(dsm.valid_mask, dsm.data - np.float32(v[2]), dsm.data).astype(np.float32)
    dsm2 = Raster(dsm_data, dsm.georef.shifted(-v[0], -v[1]), dsm.nodata)
    dop2 = Raster(sample.dop.data, sample.dop.georef.shifted(-v[0], -v[1]), sample.dop.nodata)
    pose = None if sample.gt_pose is None else sample.gt_pose.shifted(v)
    meta = dict(sample.meta, anonymized="1")
    return sample.replace(point_map=pm, dsm=dsm2, dop=dop2, gt_pose=pose, keypoints3d=sample.keypoints3d - v, meta=meta)


def _smooth_field(shape, rng, cells=4):
    coarse = rng.uniform(-1, 1, (cells, cells)).astype(np.float32)
    return cv2.resize(coarse, (shape[1], shape[0]), interpolation=cv2.INTER_CUBIC)


def domain_shift(sample: Sample, kind: str = "photometric", strength: float = 0.5, rng_seed: int = 0) -> Sample:
    """Simulated reference-data change: appearance (DOP), structure (DSM) or both."""
    if kind not in ("photometric", "geometric", "both"):
        raise ValueError(f"unknown domain shift {kind!r}")
    if not 0 <= strength <= 1:
        raise ValueError("strength must lie in [0, 1]")
    if strength == 0:
        return sample
    rng = np.random.default_rng(rng_seed)
    dop = sample.dop.data.astype(np.float32)
    dsm = sample.dsm.data.copy()
    H, W = dsm.shape
    if kind in ("geometric", "both"):
        s = abs(sample.dsm.georef.scale_x)
        valid = sample.dsm.valid_mask
        n_new = max(1, int(round(8 * strength)))
        for _ in range(n_new):
            w, h = (rng.uniform(4, 12, 2) / s).astype(int) + 1
            c0, r0 = rng.integers(0, max(1, W - w)), rng.integers(0, max(1, H - h))
            box = (slice(r0, r0 + h), slice(c0, c0 + w))
            height = rng.uniform(3, 12) * strength
            region = valid[box]
            base = float(dsm[box][region].max()) if region.any() else 0.0
            dsm[box] = np.where(region, np.float32(quantize(base + height)), dsm[box])
            if kind == "both":
                dop[box] = rng.uniform(60, 200, 3).astype(np.float32)
        # vegetation-like bumps
        yy, xx = np.mgrid[0:H, 0:W]
        for _ in range(max(1, int(round(12 * strength)))):
            cx, cy = rng.uniform(0, W), rng.uniform(0, H)
            rad = rng.uniform(1.5, 4.0) / s
            bump = (2.5 * strength * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * rad**2))).astype(np.float32)
            dsm = np.where(valid, quantize(dsm + bump), dsm).astype(np.float32)
            if kind == "both":
                m = bump > 0.3 * strength
                dop[m] = dop[m] * 0.5 + np.array([40, 90, 35], np.float32) * 0.5
    if kind in ("photometric", "both"):
        gain = 1 + strength * rng.uniform(-0.35, 0.35, 3)
        bias = strength * rng.uniform(-30, 30, 3)
        illum = 1 + 0.4 * strength * _smooth_field((H, W), rng)
        dop = dop * gain * illum[..., None] + bias
        # seasonal tint: pull green towards ochre
        g = dop[..., 1].copy()
        dop[..., 0] += 0.25 * strength * g
        dop[..., 1] -= 0.15 * strength * g
    dop_r = Raster(np.clip(np.round(dop), 0, 255).astype(np.uint8), sample.dop.georef)
    dsm_r = sample.dsm if kind == "photometric" else Raster(dsm.astype(np.float32), sample.dsm.georef, sample.dsm.nodata)
    meta = dict(sample.meta, domain_shift=kind, domain_strength=repr(float(strength)))
    return sample.replace(dop=dop_r, dsm=dsm_r, meta=meta)


def random_view(
    scene: SceneSpec,
    rng: np.random.Generator,
    intrinsics: CameraIntrinsics,
    obliqueness=(0.0, 20.0),
    azimuth=(-10.0, 10.0),
    altitude=(45.0, 55.0),
    margin: float = 45.0,
) -> ViewSpec:
    x0, y0, x1, y1 = scene.bounds
    look = (float(rng.uniform(x0 + margin, x1 - margin)), float(rng.uniform(y0 + margin, y1 - margin)))
    return ViewSpec(
        float(rng.uniform(*altitude)), float(rng.uniform(*obliqueness)), float(rng.uniform(*azimuth)), intrinsics, look
    )


DEFAULT_INTRINSICS = CameraIntrinsics.centered(200.0, 192, 144)


def generate_samples(
    n: int,
    seed: int = 0,
    scene: SceneSpec | None = None,
    views_per_scene: int = 10,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
    obliqueness=(0.0, 20.0),
    azimuth=(-10.0, 10.0),
    altitude=(45.0, 55.0),
    preset: str = "main",
    expansion: float = 0.0,
    scene_kwargs: dict | None = None,
):
    """Yield ``n`` samples; a fresh random scene every ``views_per_scene`` views unless ``scene`` is given."""
    rng = np.random.default_rng(seed)
    cur = scene
    rasters = SceneRasters.build(cur) if cur is not None else None
    used, made, attempts = 0, 0, 0
    while made < n:
        attempts += 1
        if attempts > 20 * n + 20:
            raise FootprintOutsideScene("could not place enough valid views")
        if scene is None and (cur is None or used >= views_per_scene):
            cur = random_scene(int(rng.integers(1 << 31)), **(scene_kwargs or {}))
            rasters = SceneRasters.build(cur)
            used = 0
        used += 1
        view = random_view(cur, rng, intrinsics, obliqueness, azimuth, altitude)
        try:
            s = pair_sample(cur, view, expansion, int(rng.integers(1 << 31)), preset, rasters, sample_id=f"s{made:04d}")
        except OrthoLocError:
            # views inside buildings or off the scene are simply redrawn
            continue
        if s.point_valid.mean() < 0.98:
            continue
        made += 1
        yield s


def generate_dataset(out_dir, n: int, seed: int = 0, scene: SceneSpec | None = None, **kw) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in generate_samples(n, seed, scene, **kw):
        p = out / s.sample_id
        save_sample(s, p)
        paths.append(p)
    return paths


__all__ = [
    "LATTICE", "PERTURBATION_PRESETS", "SceneRasters", "anonymize", "domain_shift", "draw_anonymization_offset",
    "footprint_quad", "generate_dataset", "generate_samples", "pair_sample", "random_view",
]
