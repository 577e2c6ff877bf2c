"""Parametric scenes: sinusoidal terrain, box buildings and procedural albedo.

Every surface is analytic, so DSM cells, DOP colours and query rays can be
evaluated exactly. World coordinates stay below 2**13 m and heights are
snapped to a 2**-10 m lattice, which keeps float32 storage and rigid shifts
by lattice vectors exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

LATTICE = 2.0 ** -10


def quantize(x):
    return np.round(np.asarray(x, dtype=float) / LATTICE) * LATTICE


@dataclass(frozen=True)
class TerrainSpec:
    amplitude: float = 0.0
    min_wavelength: float = 40.0
    max_wavelength: float = 120.0
    n_waves: int = 4
    seed: int = 0

    def waves(self):
        """(kx, ky, phase, amplitude) per sinusoid."""
        if self.amplitude == 0 or self.n_waves == 0:
            return np.zeros((0, 4))
        rng = np.random.default_rng(self.seed)
        lam = rng.uniform(self.min_wavelength, self.max_wavelength, self.n_waves)
        ang = rng.uniform(0, np.pi, self.n_waves)
        k = 2 * np.pi / lam
        amp = np.full(self.n_waves, self.amplitude / self.n_waves)
        return np.column_stack([k * np.cos(ang), k * np.sin(ang), rng.uniform(0, 2 * np.pi, self.n_waves), amp])

    @property
    def lipschitz(self) -> float:
        w = self.waves()
        return float(np.sum(np.hypot(w[:, 0], w[:, 1]) * w[:, 3]))


@dataclass(frozen=True)
class Box:
    """Axis-aligned building; the roof sits at ``base + height``."""

    x0: float
    y0: float
    x1: float
    y1: float
    height: float
    base: float | None = None


@dataclass(frozen=True)
class TextureSpec:
    kind: str = "noise"  # "noise" or "checker"
    seed: int = 0
    checker_size: float = 4.0
    roads: bool = True
    road_spacing: float = 40.0
    road_width: float = 5.0


@dataclass(frozen=True)
class SceneSpec:
    extent: tuple[float, float] = (160.0, 160.0)
    origin: tuple[float, float] = (512.0, 1024.0)
    base_elevation: float = 100.0
    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    buildings: tuple[Box, ...] = ()
    texture: TextureSpec = field(default_factory=TextureSpec)
    raster_scale: float = 0.05

    def __post_init__(self):
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ValueError("extent must be positive")
        if not self.raster_scale > 0:
            raise ValueError("raster_scale must be positive")
        x0, y0 = self.origin
        for b in self.buildings:
            if b.height < 0:
                raise ValueError("building heights must be >= 0")
            if not (x0 <= b.x0 < b.x1 <= x0 + self.extent[0] and y0 <= b.y0 < b.y1 <= y0 + self.extent[1]):
                raise ValueError(f"building {b} lies outside the scene extent")

    # -- geometry -------------------------------------------------------
    @property
    def bounds(self):
        x0, y0 = self.origin
        return x0, y0, x0 + self.extent[0], y0 + self.extent[1]

    def inside(self, X, Y) -> np.ndarray:
        x0, y0, x1, y1 = self.bounds
        return (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)

    def terrain_height(self, X, Y) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        z = np.full(np.broadcast(X, Y).shape, float(self.base_elevation))
        for kx, ky, ph, a in self.terrain.waves():
            z = z + a * np.sin(kx * (X - self.origin[0]) + ky * (Y - self.origin[1]) + ph)
        return z

    @property
    def terrain_range(self) -> tuple[float, float]:
        a = float(np.sum(self.terrain.waves()[:, 3]))
        return self.base_elevation - a, self.base_elevation + a

    def box_top(self, b: Box) -> float:
        return (self.base_elevation if b.base is None else b.base) + b.height

    def surface(self, X, Y):
        """Height of the top surface and the id of the box providing it (-1 for terrain)."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        z = self.terrain_height(X, Y)
        sid = np.full(z.shape, -1, int)
        for i, b in enumerate(self.buildings):
            top = self.box_top(b)
            m = (X >= b.x0) & (X < b.x1) & (Y >= b.y0) & (Y < b.y1) & (top >= z)
            z = np.where(m, top, z)
            sid = np.where(m, i, sid)
        return z, sid

    def height(self, X, Y) -> np.ndarray:
        return self.surface(X, Y)[0]

    @property
    def max_height(self) -> float:
        tops = [self.box_top(b) for b in self.buildings]
        return max([self.terrain_range[1], *tops])

    # -- appearance -----------------------------------------------------
    def ground_albedo(self, X, Y) -> np.ndarray:
        t = self.texture
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if t.kind == "checker":
            k = (np.floor((X - self.origin[0]) / t.checker_size) + np.floor((Y - self.origin[1]) / t.checker_size)) % 2
            g = np.where(k == 0, 40.0, 215.0)
            return np.stack([g, g, g], -1)
        n = fractal_noise(X, Y, t.seed, (16.0, 6.0, 2.0, 0.75), (0.3, 0.3, 0.22, 0.18))
        m = fractal_noise(X, Y, t.seed + 7, (24.0, 3.0), (0.6, 0.4))
        green = np.array([70.0, 115.0, 55.0])
        soil = np.array([150.0, 125.0, 90.0])
        col = green + (soil - green) * m[..., None]
        col = col * (0.55 + 0.9 * n[..., None])
        if t.roads:
            u = np.mod(X - self.origin[0], t.road_spacing)
            v = np.mod(Y - self.origin[1], t.road_spacing)
            road = (u < t.road_width) | (v < t.road_width)
            dash = ((u > 0.45 * t.road_width) & (u < 0.55 * t.road_width) & (np.mod(Y, 6.0) < 3.0)) | (
                (v > 0.45 * t.road_width) & (v < 0.55 * t.road_width) & (np.mod(X, 6.0) < 3.0)
            )
            asphalt = (70.0 + 40.0 * n)[..., None] * np.ones(3)
            col = np.where(road[..., None], asphalt, col)
            col = np.where((road & dash)[..., None], 230.0, col)
        return col

    def roof_albedo(self, X, Y, box_id) -> np.ndarray:
        box_id = np.asarray(box_id)
        base = _hash_color(box_id, self.texture.seed)
        n = fractal_noise(X, Y, self.texture.seed + 13, (3.0, 1.0, 0.5), (0.4, 0.35, 0.25))
        return base * (0.6 + 0.8 * n[..., None])

    def facade_albedo(self, along, Z, box_id) -> np.ndarray:
        base = 0.6 * _hash_color(np.asarray(box_id), self.texture.seed + 1)
        win = (np.mod(along, 3.0) < 1.5) & (np.mod(Z, 3.0) < 1.8)
        shade = np.where(win, 0.45, 1.0)
        return base * shade[..., None]

    def albedo(self, X, Y, sid) -> np.ndarray:
        """Top-surface colour: roof of box ``sid`` or terrain where ``sid < 0``."""
        col = self.ground_albedo(X, Y)
        if np.any(sid >= 0):
            col = np.where((sid >= 0)[..., None], self.roof_albedo(X, Y, np.maximum(sid, 0)), col)
        return col

    # -- serialisation --------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["buildings"] = [asdict(b) for b in self.buildings]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["terrain"] = TerrainSpec(**d.get("terrain", {}))
        d["texture"] = TextureSpec(**d.get("texture", {}))
        d["buildings"] = tuple(Box(**b) for b in d.get("buildings", ()))
        for k in ("extent", "origin"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _hash_u01(ix, iy, seed) -> np.ndarray:
    """Deterministic uniform [0, 1) per integer lattice node (splitmix-style mixing)."""
    with np.errstate(over="ignore"):
        h = (np.asarray(ix, np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)) ^ (
            np.asarray(iy, np.int64).astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        ) ^ np.uint64((seed * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF)
        h ^= h >> np.uint64(31)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(27)
        h *= np.uint64(0x94D049BB133111EB)
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(X, Y, spacing: float, seed: int) -> np.ndarray:
    x = np.asarray(X, dtype=float) / spacing
    y = np.asarray(Y, dtype=float) / spacing
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = x - x0, y - y0
    sx, sy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
    ix, iy = x0.astype(np.int64), y0.astype(np.int64)
    v00, v10 = _hash_u01(ix, iy, seed), _hash_u01(ix + 1, iy, seed)
    v01, v11 = _hash_u01(ix, iy + 1, seed), _hash_u01(ix + 1, iy + 1, seed)
    top = v00 + sx * (v10 - v00)
    bot = v01 + sx * (v11 - v01)
    return top + sy * (bot - top)


def fractal_noise(X, Y, seed, spacings, weights) -> np.ndarray:
    out = 0.0
    for i, (s, w) in enumerate(zip(spacings, weights)):
        out = out + w * value_noise(X, Y, s, seed * 31 + i)
    return out / float(sum(weights))


def _hash_color(box_id, seed) -> np.ndarray:
    r = _hash_u01(box_id, 1, seed)
    g = _hash_u01(box_id, 2, seed)
    b = _hash_u01(box_id, 3, seed)
    return np.stack([90 + 140 * r, 70 + 120 * g, 60 + 130 * b], -1)


def random_scene(
    seed: int,
    extent: float = 160.0,
    n_buildings: int = 30,
    height_range: tuple[float, float] = (4.0, 18.0),
    terrain_amplitude: float = 2.0,
    raster_scale: float = 0.25,
    origin: tuple[float, float] = (512.0, 1024.0),
) -> SceneSpec:
    """A small town: rolling terrain, a road grid and non-overlapping box buildings."""
    rng = np.random.default_rng(seed)
    terrain = TerrainSpec(amplitude=terrain_amplitude, seed=int(rng.integers(1 << 31)))
    proto = SceneSpec((extent, extent), origin, 100.0, terrain, (), TextureSpec(seed=int(rng.integers(1 << 31))), raster_scale)
    boxes: list[Box] = []
    tries = 0
    margin = 8.0
    while len(boxes) < n_buildings and tries < 50 * n_buildings:
        tries += 1
        w, d = rng.uniform(6.0, 16.0, 2)
        # snap edges to the raster grid so footprints are cell-exact
        x0 = quantize_to(origin[0] + rng.uniform(margin, extent - margin - w), raster_scale)
        y0 = quantize_to(origin[1] + rng.uniform(margin, extent - margin - d), raster_scale)
        x1 = quantize_to(x0 + w, raster_scale)
        y1 = quantize_to(y0 + d, raster_scale)
        if any(x0 < b.x1 + 3 and b.x0 < x1 + 3 and y0 < b.y1 + 3 and b.y0 < y1 + 3 for b in boxes):
            continue
        xs, ys = np.meshgrid(np.linspace(x0, x1, 9), np.linspace(y0, y1, 9))
        base = float(quantize(proto.terrain_height(xs, ys).max() + 0.1))
        h = float(quantize(rng.uniform(*height_range)))
        boxes.append(Box(x0, y0, x1, y1, h, base))
    return SceneSpec(proto.extent, proto.origin, proto.base_elevation, terrain, tuple(boxes), proto.texture, raster_scale)


def quantize_to(x: float, step: float) -> float:
    return float(np.round(x / step) * step)
