"""Per-pixel feature vectors: 12 bands + 5 vegetation indices over a 5x5 neighbourhood.

Column ``pos * 17 + ch`` holds channel ``ch`` at neighbourhood position
``pos`` (row-major over offsets -2..2). Channels 0..11 are the band slots of
:data:`canopy_ledger.ingest.BAND_NAMES`; channels 12..16 are
:data:`INDEX_NAMES`.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import BoundsError, FormatError, LengthError
from .groundtruth import ShadeTargetCell
from .raster import RasterGrid

log = logging.getLogger(__name__)

INDEX_NAMES = ("NDVI", "GRVI", "RVI", "GNDVI", "NDMI")
N_CHANNELS = 17
RADIUS = 2
N_NEIGHBOURS = (2 * RADIUS + 1) ** 2
N_FEATURES = N_CHANNELS * N_NEIGHBOURS
FEATURE_ORDER_TAG = "pos-major:5x5x17;bands=B01,B02,B03,B04,B05,B06,B07,B08,B8A,B09,B11,B12;idx=NDVI,GRVI,RVI,GNDVI,NDMI;ndmi_swir=B11"

# zero-based band slots
GREEN, RED, NIR, SWIR1 = 2, 3, 7, 10


def _ratio(num, den):
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def spectral_indices(bands12: RasterGrid) -> RasterGrid:
    """NDVI, GRVI, RVI, GNDVI and NDMI; zero denominators give 0, invalid inputs give nodata."""
    if bands12.bands != 12:
        raise ValueError(f"need 12 band slots, got {bands12.bands}")
    d = bands12.data.astype(np.float64)
    g, r, n, s = d[GREEN], d[RED], d[NIR], d[SWIR1]
    idx = np.stack([
        _ratio(n - r, n + r),
        _ratio(g - r, g + r),
        _ratio(n, r),
        _ratio(n - g, n + g),
        _ratio(n - s, n + s),
    ])
    ok = bands12.valid()
    return bands12.with_data(np.where(ok[None], idx, bands12.nodata))


def channel_stack(bands12: RasterGrid) -> RasterGrid:
    """The 17 input channels on the 10 m grid."""
    idx = spectral_indices(bands12)
    return bands12.with_data(np.concatenate([bands12.data, idx.data]))


def feature_valid_mask(validity: RasterGrid, radius: int = RADIUS) -> np.ndarray:
    """Pixels whose whole clamped neighbourhood is valid."""
    v = validity.data[0] == 1
    if radius == 0:
        return v
    return ndimage.minimum_filter(v.astype(np.uint8), size=2 * radius + 1, mode="nearest").astype(bool)


@dataclass
class FeatureMatrix:
    values: np.ndarray          # (n_rows, 425) float32
    tiles: np.ndarray           # (n_rows,) str
    cols: np.ndarray            # (n_rows,) int
    rows: np.ndarray            # (n_rows,) int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[1] != N_FEATURES:
            raise ValueError(f"feature matrix must have {N_FEATURES} columns, got {self.values.shape}")
        self.tiles = np.asarray(self.tiles, dtype=str)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.int64)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def take(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.values[idx], self.tiles[idx], self.cols[idx], self.rows[idx])

    @staticmethod
    def concat(parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            return FeatureMatrix(np.zeros((0, N_FEATURES), np.float32), [], [], [])
        return FeatureMatrix(
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.tiles for p in parts]),
            np.concatenate([p.cols for p in parts]),
            np.concatenate([p.rows for p in parts]),
        )


def gather(channels: np.ndarray, cols, rows, radius: int = RADIUS) -> np.ndarray:
    """(n, (2r+1)^2 * C) clamped-neighbourhood gather from a (C, H, W) array, position-major."""
    c, h, w = channels.shape
    off = np.arange(-radius, radius + 1)
    dy = np.repeat(off, off.size)
    dx = np.tile(off, off.size)
    rr = np.clip(np.asarray(rows)[:, None] + dy[None, :], 0, h - 1)
    cc = np.clip(np.asarray(cols)[:, None] + dx[None, :], 0, w - 1)
    g = channels[:, rr, cc]                       # (C, n, P)
    return np.ascontiguousarray(g.transpose(1, 2, 0)).reshape(len(rows), -1)


def build_features(scene_bands: RasterGrid, validity: RasterGrid, pixel_set, tile_id: str = "",
                   channels: RasterGrid | None = None) -> FeatureMatrix:
    """Feature rows for ``pixel_set`` (an (n, 2) array of (col, row)), in the given order.

    Every pixel must have a fully valid neighbourhood; see :func:`feature_valid_mask`.
    Pass a precomputed ``channels`` stack to avoid recomputing indices per call.
    """
    px = np.asarray(pixel_set, dtype=np.int64).reshape(-1, 2)
    cols, rows = px[:, 0], px[:, 1]
    h, w = scene_bands.shape
    if px.size and ((cols < 0).any() or (cols >= w).any() or (rows < 0).any() or (rows >= h).any()):
        raise BoundsError("pixel outside the scene grid")
    if channels is None:
        channels = channel_stack(scene_bands)
    ok = feature_valid_mask(validity)
    if px.size and not ok[rows, cols].all():
        raise ValueError("pixel_set contains pixels without a fully valid neighbourhood")
    vals = gather(channels.data, cols, rows)
    return FeatureMatrix(vals, np.full(len(cols), tile_id), cols, rows)


def build_targets(shade_cells: Sequence[ShadeTargetCell], pixel_set):
    """Targets aligned with ``pixel_set``; pixels without ground truth are dropped.

    Returns ``(targets, keep)`` where ``keep`` indexes the retained rows of
    ``pixel_set``.
    """
    lookup = {(c.col, c.row): c.fraction for c in shade_cells}
    px = np.asarray(pixel_set, dtype=np.int64).reshape(-1, 2)
    keep, targets = [], []
    for i, (c, r) in enumerate(px):
        f = lookup.get((int(c), int(r)))
        if f is None:
            continue
        keep.append(i)
        targets.append(f)
    dropped = len(px) - len(keep)
    if dropped:
        log.info("dropped %d pixels without ground truth", dropped)
    return np.asarray(targets, dtype=np.float64), np.asarray(keep, dtype=np.int64)


# ---------------------------------------------------------------- CFMX cache

CFMX_MAGIC = b"CFMX"


def write_cfmx(path, fm: FeatureMatrix) -> Path:
    parts = [CFMX_MAGIC, struct.pack("<QI", fm.n_rows, fm.n_cols), fm.values.astype("<f4").tobytes()]
    for t, c, r in zip(fm.tiles, fm.cols, fm.rows):
        tb = str(t).encode("utf-8")
        parts.append(struct.pack("<H", len(tb)) + tb + struct.pack("<ii", int(c), int(r)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def read_cfmx(path) -> FeatureMatrix:
    buf = Path(path).read_bytes()
    if buf[:4] != CFMX_MAGIC:
        raise FormatError(f"not a CFMX file: {path}")
    if len(buf) < 16:
        raise LengthError("truncated CFMX header")
    n, m = struct.unpack_from("<QI", buf, 4)
    off = 16
    if len(buf) < off + 4 * n * m:
        raise LengthError("truncated CFMX payload")
    vals = np.frombuffer(buf, dtype="<f4", count=n * m, offset=off).reshape(n, m)
    off += 4 * n * m
    tiles, cols, rows = [], [], []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        tiles.append(buf[off : off + ln].decode("utf-8"))
        off += ln
        c, r = struct.unpack_from("<ii", buf, off)
        off += 8
        cols.append(c)
        rows.append(r)
    return FeatureMatrix(vals.copy(), tiles, cols, rows)
