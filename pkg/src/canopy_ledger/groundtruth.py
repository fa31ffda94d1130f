"""Drone-derived ground truth: canopy height, shade masks and per-cell shade fractions."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDataError, GeometryError
from .raster import GeoTransform, RasterGrid

log = logging.getLogger(__name__)

SHADE_THRESHOLD_M = 8.0
FARM_FIELDS = ("farm_id", "gt_date", "dsm_path", "dtm_path", "boundary_wkt")


# ---------------------------------------------------------------- polygons


@dataclass(frozen=True)
class Polygon:
    """Closed planar ring (first vertex not repeated), optionally with holes."""

    exterior: tuple[tuple[float, float], ...]
    holes: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self):
        for ring in (self.exterior, *self.holes):
            if len(ring) < 3:
                raise GeometryError("polygon ring needs at least 3 distinct vertices")
            if _ring_self_intersects(ring):
                raise GeometryError("polygon ring is self-intersecting")
        if self.area <= 0:
            raise GeometryError("polygon has zero area")

    @property
    def area(self) -> float:
        a = abs(_signed_area(self.exterior))
        return a - sum(abs(_signed_area(h)) for h in self.holes)

    def bounds(self):
        xs = [p[0] for p in self.exterior]
        ys = [p[1] for p in self.exterior]
        return min(xs), min(ys), max(xs), max(ys)

    def contains(self, x, y) -> np.ndarray:
        """Even-odd containment over all rings; points on an edge or vertex count as inside."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        on_edge = np.zeros_like(inside)
        for ring in (self.exterior, *self.holes):
            r_in, r_edge = _ring_test(ring, x, y)
            inside ^= r_in
            on_edge |= r_edge
        return inside | on_edge

    def to_wkt(self) -> str:
        def ring(r):
            pts = list(r) + [r[0]]
            return "(" + ", ".join(f"{px!r} {py!r}" for px, py in pts) + ")"
        return "POLYGON (" + ", ".join(ring(r) for r in (self.exterior, *self.holes)) + ")"

    @classmethod
    def from_wkt(cls, text: str) -> "Polygon":
        m = re.fullmatch(r"\s*POLYGON\s*\((.*)\)\s*", text, flags=re.IGNORECASE | re.DOTALL)
        if not m:
            raise GeometryError(f"unsupported WKT: {text[:40]!r}")
        rings = re.findall(r"\(([^()]*)\)", m.group(1))
        if not rings:
            raise GeometryError("WKT polygon has no rings")
        parsed = []
        for r in rings:
            pts = [tuple(float(v) for v in p.split()) for p in r.split(",")]
            if len(pts) > 1 and pts[0] == pts[-1]:
                pts = pts[:-1]
            parsed.append(tuple((p[0], p[1]) for p in pts))
        return cls(parsed[0], tuple(parsed[1:]))

    @classmethod
    def rectangle(cls, x0, y0, x1, y1) -> "Polygon":
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


def _signed_area(ring) -> float:
    s = 0.0
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2, o3, o4 = orient(p1, p2, p3), orient(p1, p2, p4), orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (o1 == 0 and on_seg(p1, p2, p3)) or (o2 == 0 and on_seg(p1, p2, p4)) or \
        (o3 == 0 and on_seg(p3, p4, p1)) or (o4 == 0 and on_seg(p3, p4, p2))


def _ring_self_intersects(ring) -> bool:
    n = len(ring)
    for i in range(n):
        a1, a2 = ring[i], ring[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_cross(a1, a2, ring[j], ring[(j + 1) % n]):
                return True
    return False


def _ring_test(ring, x, y):
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    edge = np.zeros_like(inside)
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        # on-segment test
        cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        within = (np.minimum(x0, x1) <= x) & (x <= np.maximum(x0, x1)) & \
                 (np.minimum(y0, y1) <= y) & (y <= np.maximum(y0, y1))
        scale = max(abs(x1 - x0), abs(y1 - y0), 1.0)
        edge |= within & (np.abs(cross) <= 1e-9 * scale * scale)
        # half-open crossing rule
        straddle = (y0 > y) != (y1 > y)
        if y1 != y0:
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= straddle & (x < xint)
    return inside, edge


# ---------------------------------------------------------------- farms


@dataclass(frozen=True)
class FarmRecord:
    farm_id: str
    boundary: Polygon
    gt_date: dt.date
    dsm_path: Path
    dtm_path: Path


def read_farms(path) -> list[FarmRecord]:
    path = Path(path)
    farms = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            dsm, dtm = Path(row["dsm_path"]), Path(row["dtm_path"])
            farms.append(FarmRecord(
                row["farm_id"], Polygon.from_wkt(row["boundary_wkt"]),
                dt.date.fromisoformat(row["gt_date"]),
                dsm if dsm.is_absolute() else path.parent / dsm,
                dtm if dtm.is_absolute() else path.parent / dtm,
            ))
    return farms


def write_farms(path, farms: Sequence[FarmRecord], root=None):
    path = Path(path)
    root = Path(root) if root is not None else path.parent

    def rel(p):
        try:
            return Path(p).relative_to(root).as_posix()
        except ValueError:
            return Path(p).as_posix()

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FARM_FIELDS)
        for f in farms:
            w.writerow([f.farm_id, f.gt_date.isoformat(), rel(f.dsm_path), rel(f.dtm_path), f.boundary.to_wkt()])


# ---------------------------------------------------------------- height and masks


def canopy_height(dsm: RasterGrid, dtm: RasterGrid) -> RasterGrid:
    """DSM minus DTM, negative heights clamped to zero, nodata propagated."""
    dsm.require_alignment(dtm, "DSM and DTM")
    ok = dsm.valid(0) & dtm.valid(0)
    chm = np.maximum(dsm.data[0].astype(np.float64) - dtm.data[0], 0.0)
    return dsm.with_data(np.where(ok, chm, dsm.nodata)[None])


def shade_mask(chm: RasterGrid, threshold: float = SHADE_THRESHOLD_M) -> RasterGrid:
    """1 above ``threshold``, 0 at or below it (cocoa side), nodata passed through."""
    ok = chm.valid(0)
    m = (chm.data[0] > threshold).astype(np.float32)
    return chm.with_data(np.where(ok, m, chm.nodata)[None])


@dataclass(frozen=True)
class ShadeTargetCell:
    col: int
    row: int
    fraction: float
    n_drone_pixels: int


def cell_shade_fraction(mask: RasterGrid, boundary: Polygon, grid10: GeoTransform,
                        width: int, height: int) -> list[ShadeTargetCell]:
    """Shade fraction of each analysis cell whose centre lies inside ``boundary``.

    Drone pixels are binned into analysis cells by their centres. Cells
    without valid drone pixels are omitted. Output is ordered by (row, col).
    """
    if mask.transform.pixel_size_x >= grid10.pixel_size_x:
        raise ValueError("drone mask must be finer than the analysis grid")
    rows, cols = np.nonzero(mask.valid(0))
    xs, ys = mask.transform.center_xy(cols, rows)
    gc, gr = grid10.index(xs, ys)
    inside = (gc >= 0) & (gc < width) & (gr >= 0) & (gr < height)
    shade = mask.data[0][rows, cols][inside] == 1
    flat = gr[inside] * width + gc[inside]
    n_pix = np.bincount(flat, minlength=width * height)
    n_shade = np.bincount(flat, weights=shade, minlength=width * height)
    cand = np.nonzero(n_pix)[0]
    cr, cc = np.divmod(cand, width)
    cx, cy = grid10.center_xy(cc, cr)
    keep = boundary.contains(cx, cy)
    return [
        ShadeTargetCell(int(c), int(r), float(n_shade[i] / n_pix[i]), int(n_pix[i]))
        for i, c, r in zip(cand[keep], cc[keep], cr[keep])
    ]


def nearest_rank(values, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise EmptyDataError("quantile of empty data")
    k = max(1, math.ceil(q * v.size))
    return float(v[min(k, v.size) - 1])


@dataclass(frozen=True)
class ThresholdCalibration:
    quantile: float
    height_at_quantile: float
    fraction_below_threshold: float
    n_pixels: int
    threshold: float


def monoculture_heights(chm: RasterGrid, polygons: Sequence[Polygon]) -> np.ndarray:
    """Valid canopy heights of pixels whose centres fall inside any of ``polygons``."""
    ok = chm.valid(0)
    rows, cols = np.nonzero(ok)
    xs, ys = chm.transform.center_xy(cols, rows)
    sel = np.zeros(rows.size, dtype=bool)
    for poly in polygons:
        x0, y0, x1, y1 = poly.bounds()
        box = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        idx = np.nonzero(box & ~sel)[0]
        sel[idx] |= poly.contains(xs[idx], ys[idx])
    return chm.data[0][rows[sel], cols[sel]].astype(np.float64)


def calibrate_heights(values, quantile: float = 0.997,
                      threshold: float = SHADE_THRESHOLD_M) -> ThresholdCalibration:
    """Quantile and at-or-below-threshold fraction of monoculture heights.

    The "below" fraction counts heights at or below ``threshold``, matching
    the side :func:`shade_mask` assigns to cocoa.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyDataError("monoculture polygons cover no valid canopy-height pixels")
    return ThresholdCalibration(
        quantile, nearest_rank(v, quantile), float(np.mean(v <= threshold)), int(v.size), threshold
    )


def threshold_calibration(chm: RasterGrid, polygons: Sequence[Polygon], quantile: float = 0.997,
                          threshold: float = SHADE_THRESHOLD_M) -> ThresholdCalibration:
    """Height distribution of labelled cocoa-monoculture pixels in one canopy-height raster."""
    return calibrate_heights(monoculture_heights(chm, polygons), quantile, threshold)
