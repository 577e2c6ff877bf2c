"""Georeferenced raster container, resampling and the ORLR binary format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BadMagic, DegenerateOutput, TruncatedFile, UnsupportedChannelCount
from .geometry import GeoRef, sample_grid

DEFAULT_NODATA = -10000.0

MAGIC = b"ORLR"
VERSION = 1
DTYPE_F32 = 0
DTYPE_U8 = 1
# magic, version, channels, dtype, pad, width, height, origin_x, origin_y, scale_x, scale_y, nodata
_HEADER = struct.Struct("<4sBBBBII5d")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True, eq=False)
class Raster:
    """A north-up grid: DSM (H, W) float32 or DOP (H, W, 3) uint8."""

    data: np.ndarray
    georef: GeoRef
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data.astype(np.float32, copy=False)
            valid = data != self.nodata
            if not np.all(np.isfinite(data[valid])):
                raise ValueError("DSM holds non-finite values outside the no-data sentinel")
        elif data.ndim == 3 and data.shape[2] in (1, 3):
            if data.shape[2] == 1:
                data = data[..., 0].astype(np.float32, copy=False)
            elif data.dtype != np.uint8:
                raise ValueError("3-channel rasters must be uint8")
        else:
            raise UnsupportedChannelCount(f"unsupported raster shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def valid_mask(self) -> np.ndarray:
        if self.channels != 1:
            return np.ones(self.data.shape[:2], bool)
        return self.data != self.nodata

    def with_data(self, data: np.ndarray) -> "Raster":
        return replace(self, data=data)

    def crop(self, col0: int, row0: int, col1: int, row1: int) -> "Raster":
        """Crop to the half-open pixel box ``[col0, col1) x [row0, row1)``."""
        return Raster(self.data[row0:row1, col0:col1].copy(), self.georef.cropped(col0, row0), self.nodata)

    def world_bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the raster's cell edges."""
        g = self.georef
        xs = [g.origin_x - 0.5 * g.scale_x, g.origin_x + (self.width - 0.5) * g.scale_x]
        ys = [g.origin_y - 0.5 * g.scale_y, g.origin_y + (self.height - 0.5) * g.scale_y]
        return min(xs), min(ys), max(xs), max(ys)

    def equals(self, other: "Raster") -> bool:
        return (
            self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
            and self.georef == other.georef
            and (self.nodata == other.nodata or (np.isnan(self.nodata) and np.isnan(other.nodata)))
        )


def resample(raster: Raster, factor: float, mode: str = "bilinear") -> Raster:
    """Resize by ``factor`` keeping the world footprint.

    Scales are divided by ``factor``; the origin moves so that the outer cell
    edges stay put under the pixel-centred convention.
    """
    if not factor > 0:
        raise ValueError("factor must be positive")
    if factor == 1:
        return Raster(raster.data.copy(), raster.georef, raster.nodata)
    W = int(round(raster.width * factor))
    H = int(round(raster.height * factor))
    if W < 1 or H < 1:
        raise DegenerateOutput(f"resampling by {factor} gives a {W}x{H} raster")
    fx, fy = W / raster.width, H / raster.height
    g = raster.georef
    sx, sy = g.scale_x / fx, g.scale_y / fy
    georef = GeoRef(g.origin_x - 0.5 * g.scale_x + 0.5 * sx, g.origin_y - 0.5 * g.scale_y + 0.5 * sy, sx, sy)

    cols = (np.arange(W) + 0.5) / fx - 0.5
    rows = (np.arange(H) + 0.5) / fy - 0.5
    cc, rr = np.meshgrid(cols, rows)
    xy = np.column_stack([cc.ravel(), rr.ravel()])
    if raster.channels == 1:
        vals, _, ok = sample_grid(raster.data, xy, mode, raster.nodata)
        out = np.where(ok, vals, raster.nodata).astype(np.float32).reshape(H, W)
    else:
        chans = []
        for c in range(raster.channels):
            vals, _, _ = sample_grid(raster.data[..., c], xy, mode)
            chans.append(np.clip(np.round(vals), 0, 255).astype(np.uint8).reshape(H, W))
        out = np.stack(chans, -1)
    return Raster(out, georef, raster.nodata)


def write_raster(raster: Raster, path) -> None:
    path = Path(path)
    if raster.channels == 1:
        payload = np.ascontiguousarray(raster.data, dtype="<f4")
        dtype = DTYPE_F32
    else:
        payload = np.ascontiguousarray(raster.data, dtype=np.uint8)
        dtype = DTYPE_U8
    g = raster.georef
    header = _HEADER.pack(
        MAGIC, VERSION, raster.channels, dtype, 0, raster.width, raster.height,
        g.origin_x, g.origin_y, g.scale_x, g.scale_y, raster.nodata,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_raster(path) -> Raster:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"{path}: not an ORLR raster")
    if len(buf) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: header is truncated")
    _, version, channels, dtype, _, width, height, ox, oy, sx, sy, nodata = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    if channels not in (1, 3):
        raise UnsupportedChannelCount(f"{path}: {channels} channels")
    np_dtype = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype(np.uint8)}.get(dtype)
    if np_dtype is None:
        raise BadMagic(f"{path}: unknown dtype code {dtype}")
    n = width * height * channels
    if len(buf) < HEADER_SIZE + n * np_dtype.itemsize:
        raise TruncatedFile(f"{path}: payload is truncated")
    data = np.frombuffer(buf, dtype=np_dtype, count=n, offset=HEADER_SIZE)
    shape = (height, width) if channels == 1 else (height, width, channels)
    data = data.reshape(shape).astype(np.float32 if channels == 1 else np.uint8)
    return Raster(data, GeoRef(ox, oy, sx, sy), nodata)


def _read_pnm(path: Path) -> np.ndarray:
    buf = path.read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1
    kind, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    channels = {b"P5": 1, b"P6": 3}.get(kind)
    if channels is None:
        raise BadMagic(f"{path}: only binary PGM/PPM (P5/P6) is supported")
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = width * height * channels
    if len(buf) - pos < n * dt.itemsize:
        raise TruncatedFile(f"{path}: payload is truncated")
    data = np.frombuffer(buf, dtype=dt, count=n, offset=pos)
    return data.reshape((height, width) if channels == 1 else (height, width, 3))


def import_pnm(path, georef_path) -> Raster:
    """Import a binary PGM (DSM) or PPM (DOP) plus a sidecar georef text file.

    The sidecar holds whitespace-separated ``key value`` lines: ``origin_x``,
    ``origin_y``, ``scale_x``, ``scale_y`` and, for PGM elevations, optional
    ``z_scale`` / ``z_offset`` (elevation = raw * z_scale + z_offset) and
    ``nodata_raw`` (raw value marking missing cells).
    """
    path = Path(path)
    meta = {}
    for line in Path(georef_path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, value = line.split()[:2]
            meta[key] = float(value)
    georef = GeoRef(meta["origin_x"], meta["origin_y"], meta["scale_x"], meta["scale_y"])
    raw = _read_pnm(path)
    if raw.ndim == 3:
        return Raster(raw.astype(np.uint8), georef)
    z = raw.astype(np.float64) * meta.get("z_scale", 1.0) + meta.get("z_offset", 0.0)
    z = z.astype(np.float32)
    if "nodata_raw" in meta:
        z[raw == meta["nodata_raw"]] = DEFAULT_NODATA
    return Raster(z, georef, DEFAULT_NODATA)
