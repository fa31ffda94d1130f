"""Bringing shade, biomass and class maps onto the 50 m biomass grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..raster import RasterGrid, resample_bilinear

CATEGORY_NODATA = -1.0


def to_grid(src: RasterGrid, like: RasterGrid) -> RasterGrid:
    """Bilinear resample of a continuous map onto ``like``'s geometry (no-op if already aligned)."""
    if src.same_geometry(like):
        return src
    return resample_bilinear(src, like.transform, like.width, like.height)


def categorical_to_grid(src: RasterGrid, like: RasterGrid, classes=None) -> RasterGrid:
    """Class map onto ``like``: each class indicator is resampled bilinearly and kept where it reaches 0.5.

    Where several classes pass, the first in ``classes`` order wins; cells
    passing none, or touching nodata, become nodata.
    """
    if src.same_geometry(like):
        return src
    ok = src.valid(0)
    if classes is None:
        classes = np.unique(src.data[0][ok])
    out = np.full((like.height, like.width), CATEGORY_NODATA, dtype=np.float32)
    done = np.zeros_like(out, dtype=bool)
    for c in classes:
        ind = np.where(ok, (src.data[0] == c).astype(np.float32), np.float32(src.nodata))
        r = resample_bilinear(src.with_data(ind[None]), like.transform, like.width, like.height)
        hit = r.valid(0) & (r.data[0] >= 0.5) & ~done
        out[hit] = c
        done |= hit
    return RasterGrid(out[None], like.transform, CATEGORY_NODATA, like.crs_label)


@dataclass
class PairedPixels:
    cover: np.ndarray        # percent on the 50 m grid
    agb: np.ndarray          # tonnes per pixel
    rows: np.ndarray
    cols: np.ndarray
    cell_area_ha: float
    country: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.cover.size


def pair_maps(shade10: RasterGrid, agbd50: RasterGrid, cocoa_mask: RasterGrid,
              country: RasterGrid | None = None) -> PairedPixels:
    """Per-pixel (cover, AGB) on the biomass grid where shade, biomass and cocoa are all present."""
    shade = to_grid(shade10, agbd50)
    cocoa = categorical_to_grid(cocoa_mask, agbd50, classes=(1, 0))
    ok = shade.valid(0) & agbd50.valid(0) & cocoa.valid(0) & (cocoa.data[0] == 1)
    rows, cols = np.nonzero(ok)
    cell_ha = agbd50.transform.cell_area / 1e4
    cover = np.clip(shade.data[0][rows, cols].astype(np.float64), 0.0, 100.0)
    agb = np.maximum(agbd50.data[0][rows, cols].astype(np.float64), 0.0) * cell_ha
    cid = None
    if country is not None:
        cg = categorical_to_grid(country, agbd50)
        cid = np.where(cg.valid(0)[rows, cols], cg.data[0][rows, cols], CATEGORY_NODATA).astype(np.int64)
    return PairedPixels(cover, agb, rows, cols, cell_ha, cid)
