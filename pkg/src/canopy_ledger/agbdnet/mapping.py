"""Patch extraction around 50 m cells, training-set assembly and dense biomass mapping.

Output cell ``(i, j)`` of a 10 m height tile is centred on pixel
``(5j + 2, 5i + 2)``; its input patch spans 7 pixels either side. Pixels
outside the tile count as nodata.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..raster import GeoTransform, RasterGrid
from .gedi import GediFootprint, compute_bin_weights, make_stripe_split
from .net import PATCH
from .train import Ensemble, ensemble_predict

log = logging.getLogger(__name__)

STRIDE = 5
HALF = PATCH // 2
METRES_PER_DEG_LAT = 110574.0
AGBD_NODATA = -9999.0
MAX_NODATA_FRACTION = 0.5


def latitude_of(y) -> np.ndarray:
    """Latitude in degrees from planar northing."""
    return np.asarray(y, dtype=np.float64) / METRES_PER_DEG_LAT


def lat_channels(lat) -> tuple[np.ndarray, np.ndarray]:
    a = 2.0 * np.pi * np.asarray(lat, dtype=np.float64) / 180.0
    return np.sin(a), np.cos(a)


def output_shape(height: int, width: int) -> tuple[int, int]:
    return math.ceil(height / STRIDE), math.ceil(width / STRIDE)


def output_transform(t: GeoTransform) -> GeoTransform:
    return t.scaled(STRIDE)


def extract_patches(heights: RasterGrid, cells_i, cells_j, max_nodata: float = MAX_NODATA_FRACTION):
    """Input patches (n, 15, 15, 4) for output cells and a flag for cells kept.

    A cell is dropped when more than ``max_nodata`` of its patch lacks a
    height; other gaps take the patch mean of each band.
    """
    ci = np.asarray(cells_i, dtype=np.int64)
    cj = np.asarray(cells_j, dtype=np.int64)
    h, w = heights.shape
    off = np.arange(-HALF, HALF + 1)
    rr = (STRIDE * ci + 2)[:, None] + off[None, :]
    cc = (STRIDE * cj + 2)[:, None] + off[None, :]
    inside = ((rr >= 0) & (rr < h))[:, :, None] & ((cc >= 0) & (cc < w))[:, None, :]
    rcl = np.clip(rr, 0, h - 1)
    ccl = np.clip(cc, 0, w - 1)
    data = heights.data[:2][:, rcl[:, :, None], ccl[:, None, :]].astype(np.float64)   # (2, n, 15, 15)
    valid = heights.valid()[rcl[:, :, None], ccl[:, None, :]] & inside
    frac_bad = 1.0 - valid.mean(axis=(1, 2))
    keep = frac_bad <= max_nodata
    cnt = valid.sum(axis=(1, 2))
    for b in range(2):
        s = np.where(valid, data[b], 0.0).sum(axis=(1, 2))
        m = np.divide(s, cnt, out=np.zeros_like(s), where=cnt > 0)
        data[b] = np.where(valid, data[b], m[:, None, None])
    _, yc = heights.transform.center_xy(STRIDE * cj + 2, STRIDE * ci + 2)
    sn, cs = lat_channels(latitude_of(yc))
    n = ci.size
    out = np.empty((n, PATCH, PATCH, 4), dtype=np.float64)
    out[..., 0] = data[0]
    out[..., 1] = data[1]
    out[..., 2] = sn[:, None, None]
    out[..., 3] = cs[:, None, None]
    return out, keep


@dataclass
class AgbdSamples:
    patches: np.ndarray
    agbd: np.ndarray
    roles: np.ndarray
    tiles: np.ndarray
    weights: np.ndarray | None = None

    def subset(self, role: str):
        m = self.roles == role
        return self.patches[m], self.agbd[m], (None if self.weights is None else self.weights[m])


def build_samples(height_tiles: dict, footprints: Sequence[GediFootprint],
                  splits: dict | None = None) -> AgbdSamples:
    """One sample per footprint landing on a usable cell of some height tile.

    Roles follow the stripe of the patch-centre pixel. Bin weights are
    computed on the training portion only; other roles get weight 1.
    """
    patches, targets, roles, tiles = [], [], [], []
    splits = dict(splits or {})
    xs = np.array([f.x for f in footprints])
    ys = np.array([f.y for f in footprints])
    agbd = np.array([f.agbd for f in footprints])
    taken = np.zeros(len(footprints), dtype=bool)
    for tid in sorted(height_tiles):
        g = height_tiles[tid]
        if tid not in splits:
            splits[tid] = make_stripe_split(tid, g.width, g.transform.pixel_size_x)
        c, r = g.transform.index(xs, ys)
        on = (~taken) & (c >= 0) & (c < g.width) & (r >= 0) & (r < g.height)
        idx = np.nonzero(on)[0]
        if idx.size == 0:
            continue
        taken[idx] = True
        ci, cj = r[idx] // STRIDE, c[idx] // STRIDE
        p, keep = extract_patches(g, ci, cj)
        patches.append(p[keep])
        targets.append(agbd[idx][keep])
        roles.append(splits[tid].role_of(STRIDE * cj[keep] + 2))
        tiles.append(np.full(int(keep.sum()), tid))
    if not patches:
        return AgbdSamples(np.zeros((0, PATCH, PATCH, 4)), np.zeros(0), np.zeros(0, str), np.zeros(0, str))
    s = AgbdSamples(np.concatenate(patches), np.concatenate(targets), np.concatenate(roles), np.concatenate(tiles))
    w = np.ones(s.agbd.size)
    tr = s.roles == "train"
    if tr.any():
        w[tr] = compute_bin_weights(s.agbd[tr]).weights
    s.weights = w
    log.info("biomass samples: %s", {k: int((s.roles == k).sum()) for k in ("train", "val", "test")})
    return s


def predict_agbd_map(ensemble: Ensemble, heights: RasterGrid, batch: int = 1024):
    """Mean and standard-deviation maps on the 50 m grid of a height tile."""
    oh, ow = output_shape(*heights.shape)
    ii, jj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    mu = np.full(ii.size, AGBD_NODATA, dtype=np.float64)
    sd = np.full(ii.size, AGBD_NODATA, dtype=np.float64)
    for s in range(0, ii.size, batch):
        sl = slice(s, s + batch)
        p, keep = extract_patches(heights, ii[sl], jj[sl])
        if not keep.any():
            continue
        m, v = ensemble_predict(ensemble, p[keep])
        k = np.nonzero(keep)[0] + s
        mu[k] = m
        sd[k] = v
    t = output_transform(heights.transform)
    mk = lambda a: RasterGrid(a.reshape(1, oh, ow).astype(np.float32), t, AGBD_NODATA, heights.crs_label)
    return mk(mu), mk(sd)
