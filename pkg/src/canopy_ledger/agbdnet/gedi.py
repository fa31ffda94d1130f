"""Spaceborne-LiDAR biomass footprints, stripe splits and frequency reweighting."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import EmptyDataError
from ..ingest import MAP_WINDOW_2022, SelectionWindow

log = logging.getLogger(__name__)

FOOTPRINT_FIELDS = ("id", "date", "lon", "lat", "x", "y", "agbd", "quality_ok", "beam")
BEAMS = ("power", "coverage")


@dataclass(frozen=True)
class GediFootprint:
    id: str
    acquisition_date: dt.date
    lon: float
    lat: float
    x: float
    y: float
    agbd: float
    quality_ok: bool
    beam: str

    def __post_init__(self):
        if not self.agbd >= 0:
            raise ValueError(f"footprint {self.id}: agbd {self.agbd} must be >= 0")
        if not all(math.isfinite(v) for v in (self.lon, self.lat, self.x, self.y)):
            raise ValueError(f"footprint {self.id}: non-finite coordinates")
        if self.beam not in BEAMS:
            raise ValueError(f"footprint {self.id}: unknown beam {self.beam!r}")


def read_footprints(path) -> list[GediFootprint]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append(GediFootprint(
                r["id"], dt.date.fromisoformat(r["date"]), float(r["lon"]), float(r["lat"]),
                float(r["x"]), float(r["y"]), float(r["agbd"]),
                r["quality_ok"].strip().lower() in ("1", "true", "yes"), r["beam"],
            ))
    return out


def write_footprints(path, footprints: Iterable[GediFootprint]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FOOTPRINT_FIELDS)
        for f in footprints:
            w.writerow([f.id, f.acquisition_date.isoformat(), repr(f.lon), repr(f.lat), repr(f.x), repr(f.y),
                        repr(f.agbd), int(f.quality_ok), f.beam])


def filter_gedi(footprints: Iterable[GediFootprint], window: SelectionWindow = MAP_WINDOW_2022) -> list[GediFootprint]:
    """Quality-flagged power-beam footprints acquired inside ``window``."""
    return [f for f in footprints if f.quality_ok and f.beam == "power" and window.contains(f.acquisition_date)]


# ---------------------------------------------------------------- stripes

ROLE_PATTERN = ("train", "val", "train", "test", "train")


@dataclass(frozen=True)
class StripeSplit:
    tile_id: str
    width: int                       # pixels
    boundaries: tuple[int, ...]      # 6 column edges
    roles: tuple[str, ...]           # per stripe, west to east

    def stripe_of(self, col) -> np.ndarray:
        col = np.asarray(col)
        return np.clip(np.searchsorted(np.asarray(self.boundaries[1:-1]), col, side="right"), 0, 4)

    def role_of(self, col) -> np.ndarray:
        return np.asarray(self.roles)[self.stripe_of(col)]


def _rotation(tile_id: str) -> int:
    return int.from_bytes(hashlib.sha256(tile_id.encode("utf-8")).digest()[:8], "big") % 5


def make_stripe_split(tile_id: str, width: int, pixel_size: float | None = None) -> StripeSplit:
    """Five equal vertical stripes with three training, one validation and one test role.

    Edges sit at ``round(i * width / 5)``; the fixed role pattern is rotated
    by a hash of the tile id.
    """
    if width < 5:
        raise ValueError(f"tile {tile_id} is {width} px wide; stripes need at least 5")
    edges = tuple(int(round(i * width / 5)) for i in range(6))
    k = _rotation(tile_id)
    roles = tuple(ROLE_PATTERN[(i + k) % 5] for i in range(5))
    if pixel_size is not None:
        log.info("tile %s: stripe width %.1f km", tile_id, width * pixel_size / 5 / 1000)
    return StripeSplit(tile_id, int(width), edges, roles)


# ---------------------------------------------------------------- reweighting

N_BINS = 20
BIN_MAX = 200.0


@dataclass(frozen=True)
class BinWeights:
    edges: np.ndarray
    counts: np.ndarray
    bins: np.ndarray        # bin index per sample
    weights: np.ndarray     # per sample, mean 1


def agbd_bin(values, n_bins: int = N_BINS, vmax: float = BIN_MAX) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.clip(np.floor(v / (vmax / n_bins)).astype(np.int64), 0, n_bins - 1)


def compute_bin_weights(values, n_bins: int = N_BINS, vmax: float = BIN_MAX) -> BinWeights:
    """Weights proportional to 1/sqrt(bin count), normalised to mean 1; values above ``vmax`` use the last bin."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("no biomass values to weight")
    if (v < 0).any():
        raise ValueError("biomass values must be >= 0")
    b = agbd_bin(v, n_bins, vmax)
    counts = np.bincount(b, minlength=n_bins)
    raw = 1.0 / np.sqrt(counts[b].astype(np.float64))
    w = raw / raw.mean()
    return BinWeights(np.linspace(0.0, vmax, n_bins + 1), counts, b, w)


# ---------------------------------------------------------------- reference comparison


def sample_map(grid, xs, ys, band: int = 0):
    """Map values at points; returns (values, valid) with out-of-extent points invalid."""
    c, r = grid.transform.index(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64))
    inside = (c >= 0) & (c < grid.width) & (r >= 0) & (r < grid.height)
    vals = np.full(c.shape, np.nan)
    ok = np.zeros(c.shape, dtype=bool)
    vals[inside] = grid.data[band][r[inside], c[inside]]
    ok[inside] = grid.valid(band)[r[inside], c[inside]]
    return vals, ok


def compare_to_reference(agbd_map, footprints: Sequence[GediFootprint], bin_width: float = 15.0):
    """Error summary of the map at footprint cells against their reference biomass."""
    from ..shademap import evaluate

    if not footprints:
        raise EmptyDataError("no reference footprints")
    xs = [f.x for f in footprints]
    ys = [f.y for f in footprints]
    ref = np.array([f.agbd for f in footprints])
    vals, ok = sample_map(agbd_map, xs, ys)
    if not ok.any():
        raise EmptyDataError("no footprint falls on a valid map cell")
    return evaluate(vals[ok], ref[ok], bin_width=bin_width, upper=None)
