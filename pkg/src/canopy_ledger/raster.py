"""
Georeferenced grids and the CGRD container format.

A :class:`RasterGrid` holds band-major, row-major float32 data plus a
north-up affine :class:`GeoTransform`. Grids are immutable: every operation
returns a new grid. No reprojection is performed anywhere; the CRS label is an
opaque tag carried through unchanged.

CGRD layout (little-endian)::

    b"CGRD" | u16 version=1 | u16 flags=0 | u32 width | u32 height
    u16 bands | u16 dtype (0 = float32) | 6 x f64 geotransform
    f32 nodata | u16 label length | UTF-8 label | float32 payload
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, BoundsError, EmptyExtentError, FormatError, LengthError

DEFAULT_NODATA = -9999.0
CGRD_MAGIC = b"CGRD"
CGRD_VERSION = 1
_HEAD = struct.Struct("<4sHHIIHH6dfH")


@dataclass(frozen=True)
class GeoTransform:
    """North-up affine mapping from (col, row) pixel corners to planar metres."""

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float

    def __post_init__(self):
        if not self.pixel_size_x > 0:
            raise ValueError("pixel_size_x must be positive")
        if self.pixel_size_y == 0:
            raise ValueError("pixel_size_y must be non-zero")

    def to_gdal(self) -> tuple[float, ...]:
        return (self.origin_x, self.pixel_size_x, 0.0, self.origin_y, 0.0, self.pixel_size_y)

    @classmethod
    def from_gdal(cls, t) -> "GeoTransform":
        if t[2] != 0.0 or t[4] != 0.0:
            raise FormatError("rotated geotransforms are not supported")
        return cls(t[0], t[3], t[1], t[5])

    def xy(self, col, row):
        """Planar coordinates of fractional pixel position (corner convention)."""
        return self.origin_x + np.asarray(col) * self.pixel_size_x, self.origin_y + np.asarray(row) * self.pixel_size_y

    def center_xy(self, col, row):
        return self.xy(np.asarray(col) + 0.5, np.asarray(row) + 0.5)

    def pixel(self, x, y):
        """Fractional (col, row) of planar coordinates."""
        return (np.asarray(x) - self.origin_x) / self.pixel_size_x, (np.asarray(y) - self.origin_y) / self.pixel_size_y

    def index(self, x, y):
        """Integer (col, row) of the pixel containing (x, y)."""
        c, r = self.pixel(x, y)
        return np.floor(c).astype(np.int64), np.floor(r).astype(np.int64)

    def scaled(self, factor: float) -> "GeoTransform":
        return GeoTransform(self.origin_x, self.origin_y, self.pixel_size_x * factor, self.pixel_size_y * factor)

    @property
    def cell_area(self) -> float:
        return abs(self.pixel_size_x * self.pixel_size_y)


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Immutable multi-band float32 grid.

    ``data`` has shape ``(bands, height, width)``. Values equal to ``nodata``
    or non-finite values are treated as missing.
    """

    data: np.ndarray
    transform: GeoTransform
    nodata: float = DEFAULT_NODATA
    crs_label: str = ""

    def __post_init__(self):
        arr = self.data
        frozen = (
            isinstance(arr, np.ndarray) and arr.dtype == np.float32 and arr.ndim == 3
            and arr.flags.c_contiguous and not arr.flags.writeable
        )
        if not frozen:
            arr = np.array(arr, dtype=np.float32, order="C", copy=True)
            if arr.ndim == 2:
                arr = arr[None]
            if arr.ndim != 3 or arr.shape[0] < 1:
                raise ValueError(f"grid data must be (bands, height, width), got {arr.shape}")
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "nodata", float(np.float32(self.nodata)))
        if math.isfinite(self.nodata) is False:
            raise ValueError("nodata must be a finite sentinel")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def band(self, i: int) -> np.ndarray:
        return self.data[i]

    def valid(self, band: int | None = None) -> np.ndarray:
        """Boolean validity; with ``band=None`` a pixel must be valid in every band."""
        d = self.data if band is None else self.data[band : band + 1]
        ok = (d != np.float32(self.nodata)) & np.isfinite(d)
        return ok.all(axis=0)

    def with_data(self, data, nodata: float | None = None) -> "RasterGrid":
        return RasterGrid(data, self.transform, self.nodata if nodata is None else nodata, self.crs_label)

    def same_geometry(self, other: "RasterGrid") -> bool:
        return self.shape == other.shape and self.transform == other.transform

    def require_alignment(self, other: "RasterGrid", what: str = "grids"):
        if not self.same_geometry(other):
            raise AlignmentError(
                f"{what} differ in geometry: {self.shape} {self.transform} vs {other.shape} {other.transform}"
            )

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        x0, y0 = self.transform.xy(0, 0)
        x1, y1 = self.transform.xy(self.width, self.height)
        return float(min(x0, x1)), float(min(y0, y1)), float(max(x0, x1)), float(max(y0, y1))


@dataclass
class GridStats:
    n_valid: int
    mean: float
    sd: float
    min: float
    max: float
    bin_edges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


# ---------------------------------------------------------------- CGRD I/O


def encode_grid(grid: RasterGrid) -> bytes:
    label = grid.crs_label.encode("utf-8")
    if len(label) > 0xFFFF:
        raise ValueError("CRS label too long")
    head = _HEAD.pack(
        CGRD_MAGIC, CGRD_VERSION, 0, grid.width, grid.height, grid.bands, 0,
        *grid.transform.to_gdal(), grid.nodata, len(label),
    )
    return head + label + grid.data.astype("<f4", copy=False).tobytes()


def decode_grid(buf: bytes) -> RasterGrid:
    if len(buf) < 4 or buf[:4] != CGRD_MAGIC:
        raise FormatError(f"not a CGRD file (magic {bytes(buf[:4])!r})")
    if len(buf) < _HEAD.size:
        raise LengthError("truncated CGRD header")
    magic, version, flags, w, h, bands, dtype, *rest = _HEAD.unpack_from(buf, 0)
    gt, nodata, label_len = rest[:6], rest[6], rest[7]
    if version != CGRD_VERSION:
        raise FormatError(f"unsupported CGRD version {version}")
    if dtype != 0:
        raise FormatError(f"unsupported CGRD dtype code {dtype}")
    off = _HEAD.size
    if len(buf) < off + label_len:
        raise LengthError("truncated CGRD label")
    label = bytes(buf[off : off + label_len]).decode("utf-8")
    off += label_len
    n = w * h * bands
    if len(buf) - off < 4 * n:
        raise LengthError(f"CGRD payload has {len(buf) - off} bytes, expected {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(bands, h, w)
    return RasterGrid(data, GeoTransform.from_gdal(gt), nodata, label)


def read_grid(path) -> RasterGrid:
    return decode_grid(Path(path).read_bytes())


def write_grid(path, grid: RasterGrid) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_grid(grid))
    return path


def read_header(path) -> tuple[int, int, int, GeoTransform, float, str]:
    """(width, height, bands, transform, nodata, crs_label) without reading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(_HEAD.size)
        if head[:4] != CGRD_MAGIC:
            raise FormatError(f"not a CGRD file: {path}")
        if len(head) < _HEAD.size:
            raise LengthError("truncated CGRD header")
        _, version, _, w, h, bands, dtype, *rest = _HEAD.unpack(head)
        label = fh.read(rest[7]).decode("utf-8")
    if version != CGRD_VERSION or dtype != 0:
        raise FormatError(f"unsupported CGRD version/dtype in {path}")
    return w, h, bands, GeoTransform.from_gdal(rest[:6]), rest[6], label


def grid_io(path, grid: RasterGrid | None = None):
    """Read a grid from ``path``, or write ``grid`` to it when given."""
    if grid is None:
        return read_grid(path)
    return write_grid(path, grid)


# ---------------------------------------------------------------- resampling


def resample_bilinear(grid: RasterGrid, target: GeoTransform, width: int, height: int) -> RasterGrid:
    """Bilinear resampling evaluated at target cell centres.

    A target cell becomes nodata when its centre lies outside the source
    extent or when any of its four interpolation neighbours is nodata. Near
    the source edge, neighbour indices are clamped.
    """
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    tx, _ = target.xy(cols, 0)
    _, ty = target.xy(0, rows)
    fc, _ = grid.transform.pixel(tx, grid.transform.origin_y)
    _, fr = grid.transform.pixel(grid.transform.origin_x, ty)
    inside_c = (fc >= 0) & (fc <= grid.width)
    inside_r = (fr >= 0) & (fr <= grid.height)
    if not inside_c.any() or not inside_r.any():
        raise EmptyExtentError("target grid does not overlap the source extent")

    # neighbour positions relative to pixel centres
    pc = fc - 0.5
    pr = fr - 0.5
    c0 = np.floor(pc).astype(np.int64)
    r0 = np.floor(pr).astype(np.int64)
    wc = (pc - c0)[None, :]
    wr = (pr - r0)[:, None]
    c0c = np.clip(c0, 0, grid.width - 1)
    c1c = np.clip(c0 + 1, 0, grid.width - 1)
    r0c = np.clip(r0, 0, grid.height - 1)
    r1c = np.clip(r0 + 1, 0, grid.height - 1)

    out = np.empty((grid.bands, height, width), dtype=np.float32)
    outside = ~(inside_r[:, None] & inside_c[None, :])
    for b in range(grid.bands):
        d = grid.data[b].astype(np.float64)
        ok = grid.valid(b)
        v00 = d[np.ix_(r0c, c0c)]
        v01 = d[np.ix_(r0c, c1c)]
        v10 = d[np.ix_(r1c, c0c)]
        v11 = d[np.ix_(r1c, c1c)]
        good = ok[np.ix_(r0c, c0c)] & ok[np.ix_(r0c, c1c)] & ok[np.ix_(r1c, c0c)] & ok[np.ix_(r1c, c1c)]
        val = (v00 * (1 - wc) + v01 * wc) * (1 - wr) + (v10 * (1 - wc) + v11 * wc) * wr
        val = np.where(good & ~outside, val, grid.nodata)
        out[b] = val
    return RasterGrid(out, target, grid.nodata, grid.crs_label)


def upsample_nearest(grid: RasterGrid, factor: int) -> RasterGrid:
    """Replicate each pixel into a ``factor`` x ``factor`` block."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsampling factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        return grid
    data = np.repeat(np.repeat(grid.data, factor, axis=1), factor, axis=2)
    return RasterGrid(data, grid.transform.scaled(1.0 / factor), grid.nodata, grid.crs_label)


def window(grid: RasterGrid, center_col: int, center_row: int, radius: int) -> np.ndarray:
    """(bands, 2r+1, 2r+1) patch with replicate-edge padding."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if not (0 <= center_col < grid.width and 0 <= center_row < grid.height):
        raise BoundsError(f"centre ({center_col}, {center_row}) outside {grid.width}x{grid.height} grid")
    off = np.arange(-radius, radius + 1)
    rows = np.clip(center_row + off, 0, grid.height - 1)
    cols = np.clip(center_col + off, 0, grid.width - 1)
    return grid.data[:, rows[:, None], cols[None, :]]


def grid_stats(grid: RasterGrid, band: int = 0, mask=None, bins=None) -> GridStats:
    """Population statistics over valid, mask-true pixels of one band.

    ``bins`` is passed to :func:`numpy.histogram`; by default 1-unit bins
    spanning the valid range.
    """
    if not 0 <= band < grid.bands:
        raise IndexError(f"band {band} out of range")
    ok = grid.valid(band)
    if mask is not None:
        m = mask.data[0] if isinstance(mask, RasterGrid) else np.asarray(mask)
        if m.shape != ok.shape:
            raise AlignmentError("mask geometry differs from grid")
        ok &= m.astype(bool)
    v = grid.data[band][ok].astype(np.float64)
    if v.size == 0:
        return GridStats(0, math.nan, math.nan, math.nan, math.nan)
    lo, hi = float(v.min()), float(v.max())
    if bins is None:
        bins = np.arange(math.floor(lo), math.floor(hi) + 2, dtype=np.float64)
    counts, edges = np.histogram(v, bins=bins)
    return GridStats(int(v.size), float(v.mean()), float(v.std()), lo, hi, edges, counts)


def mosaic(grids) -> RasterGrid:
    """Paste same-resolution grids onto their union extent; later grids win overlaps, gaps are nodata."""
    grids = list(grids)
    if not grids:
        raise EmptyExtentError("nothing to mosaic")
    g0 = grids[0]
    px, py = g0.transform.pixel_size_x, g0.transform.pixel_size_y
    for g in grids[1:]:
        if (g.transform.pixel_size_x, g.transform.pixel_size_y) != (px, py) or g.bands != g0.bands:
            raise AlignmentError("mosaic inputs must share pixel size and band count")
    x0 = min(g.transform.origin_x for g in grids)
    y0 = max(g.transform.origin_y for g in grids) if py < 0 else min(g.transform.origin_y for g in grids)
    t = GeoTransform(x0, y0, px, py)
    offs = []
    for g in grids:
        c, r = t.pixel(g.transform.origin_x, g.transform.origin_y)
        ci, ri = int(round(float(c))), int(round(float(r)))
        if abs(c - ci) > 1e-6 or abs(r - ri) > 1e-6:
            raise AlignmentError("mosaic inputs are not on a common pixel lattice")
        offs.append((ci, ri))
    w = max(c + g.width for (c, _), g in zip(offs, grids))
    h = max(r + g.height for (_, r), g in zip(offs, grids))
    out = np.full((g0.bands, h, w), np.float32(g0.nodata), dtype=np.float32)
    for (c, r), g in zip(offs, grids):
        ok = g.valid()
        src = np.where(ok, g.data, np.float32(g0.nodata))
        out[:, r : r + g.height, c : c + g.width] = src
    return RasterGrid(out, t, g0.nodata, g0.crs_label)
