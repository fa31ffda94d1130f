"""Deterministic synthetic world with known shade cover, biomass and climate.

Everything is a pure function of :class:`WorldSpec`. Each component draws
from its own ``numpy`` generator seeded with ``[seed, component, index]``,
so adding a farm never perturbs the scenes of another tile.

Units: cover is a fraction in [0, 1] on disk and in percent inside the
biomass relation ``agbd = b0 + b1*c + b2*c^2`` (t/ha).
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import beta as beta_dist
from scipy.stats import norm

from .agbdnet.gedi import GediFootprint, write_footprints
from .agbdnet.mapping import METRES_PER_DEG_LAT
from .groundtruth import FarmRecord, Polygon, write_farms
from .ingest import BAND_FILES, CLOUD_FILE, SceneRecord, write_catalog
from .raster import GeoTransform, RasterGrid, write_grid

log = logging.getLogger(__name__)

NODATA = -9999.0
CRS = "synthetic-planar-m"
DRONE_PX = 0.5
CELLS_PER_DRONE_SIDE = 20          # 10 m / 0.5 m

# 10 m analysis grid: slots 1,2,3,7 native; 4,5,6,8,10,11 at 20 m; 0,9 at 60 m
BAND_RES = (60, 10, 10, 10, 20, 20, 20, 10, 20, 60, 20, 20)
BAND_BASE = np.array([0.030, 0.040, 0.070, 0.050, 0.110, 0.250, 0.300, 0.330, 0.340, 0.330, 0.200, 0.100])
BAND_COVER = np.array([-0.005, -0.010, -0.012, -0.030, -0.020, 0.030, 0.060, 0.100, 0.100, 0.050, -0.050, -0.040])
BAND_SOIL = np.array([0.060, 0.080, 0.110, 0.140, 0.170, 0.200, 0.220, 0.240, 0.250, 0.240, 0.300, 0.250])
BAND_CLOUD = np.array([0.45, 0.48, 0.50, 0.52, 0.53, 0.54, 0.55, 0.56, 0.56, 0.50, 0.40, 0.30])

SCENE_DATES = (
    dt.date(2020, 11, 10), dt.date(2021, 10, 5),
    dt.date(2022, 4, 10), dt.date(2022, 5, 2), dt.date(2022, 5, 25), dt.date(2022, 6, 16),
    dt.date(2022, 7, 9), dt.date(2022, 8, 1), dt.date(2022, 8, 24), dt.date(2022, 9, 16),
    dt.date(2022, 10, 9), dt.date(2022, 11, 1), dt.date(2022, 11, 24),
)

LAND_OTHER, LAND_COCOA, LAND_FOREST, LAND_DISTURBED = 0, 1, 2, 3
TMF_CODE = {LAND_FOREST: 1, LAND_DISTURBED: 2}
COUNTRY_IDS = {1: "Ghana", 2: "Cote d'Ivoire"}

# component ids for seeding
_LAND, _COVER, _FARMS, _DRONE, _SCENE, _GEDI, _CLIM, _OCC, _HEIGHT = range(9)


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    tiles_x: int = 2
    tiles_y: int = 2
    tile_size: int = 600                 # pixels of 10 m
    origin_x: float = 500000.0
    origin_y: float = 700000.0           # northing of the top edge, about 6.3 degrees
    n_farms: int = 40
    farm_area_ha: tuple = (0.5, 1.2)
    shade_mean: float = 0.13
    shade_sd: float = 0.09
    shade_smooth_px: float = 2.0
    beta: tuple = (20.0, 8.0, -0.05)
    agbd_noise: float = 10.0
    cloud_fraction: float = 0.15
    band_noise: float = 0.004
    n_footprints: int = 6000
    n_occurrences: int = 300
    n_monoculture: int = 5
    climate_cell_m: float = 200.0

    @classmethod
    def reduced(cls, seed: int = 0) -> "WorldSpec":
        """Small world for quick end-to-end runs."""
        return cls(seed=seed, tile_size=300, n_farms=16, n_footprints=2500, n_occurrences=120)

    def to_json(self) -> dict:
        d = asdict(self)
        d["farm_area_ha"] = list(self.farm_area_ha)
        d["beta"] = list(self.beta)
        return d

    @classmethod
    def from_json(cls, d) -> "WorldSpec":
        d = dict(d)
        d["farm_area_ha"] = tuple(d.get("farm_area_ha", (0.5, 1.2)))
        d["beta"] = tuple(d.get("beta", (20.0, 8.0, -0.05)))
        return cls(**d)


def _rng(spec: WorldSpec, *key) -> np.random.Generator:
    return np.random.default_rng([spec.seed, *key])


def _smooth_field(rng, shape, sigma) -> np.ndarray:
    """Zero-mean unit-variance Gaussian random field."""
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    s = f.std()
    return (f - f.mean()) / (s if s > 0 else 1.0)


def true_agbd(cover_pct, beta) -> np.ndarray:
    c = np.asarray(cover_pct, dtype=np.float64)
    return beta[0] + beta[1] * c + beta[2] * c * c


def canopy_height_from_agbd(agbd) -> np.ndarray:
    return 30.0 * (1.0 - np.exp(-np.asarray(agbd, dtype=np.float64) / 150.0))


# ---------------------------------------------------------------- tiles


@dataclass
class TileTruth:
    tile_id: str
    transform: GeoTransform
    land: np.ndarray            # land class per 10 m pixel
    cover: np.ndarray           # shade fraction per 10 m pixel (cocoa), canopy fraction elsewhere
    agbd: np.ndarray            # t/ha per 10 m pixel
    country: int


def tile_ids(spec: WorldSpec) -> list[tuple[str, int, int]]:
    return [(f"T{ty}{tx}", tx, ty) for ty in range(spec.tiles_y) for tx in range(spec.tiles_x)]


def make_tile(spec: WorldSpec, tid: str, tx: int, ty: int) -> TileTruth:
    n = spec.tile_size
    t = GeoTransform(spec.origin_x + tx * n * 10.0, spec.origin_y - ty * n * 10.0, 10.0, -10.0)
    k = tx + spec.tiles_x * ty
    rng = _rng(spec, _LAND, k)
    f_cocoa = _smooth_field(rng, (n, n), 25)
    f_forest = _smooth_field(rng, (n, n), 20)
    f_dist = _smooth_field(rng, (n, n), 10)
    land = np.full((n, n), LAND_OTHER, dtype=np.int64)
    cocoa = f_cocoa > -0.2                           # about 58% cocoa
    forest = ~cocoa & (f_forest > -0.3)
    land[forest] = LAND_FOREST
    land[forest & (f_dist > 0.3)] = LAND_DISTURBED
    land[cocoa] = LAND_COCOA

    rc = _rng(spec, _COVER, k)
    z = _smooth_field(rc, (n, n), spec.shade_smooth_px)
    if spec.shade_mean <= 0:
        shade = np.zeros((n, n))
    else:
        m, v = spec.shade_mean, spec.shade_sd ** 2
        ab = m * (1 - m) / v - 1.0
        shade = beta_dist.ppf(norm.cdf(z), m * ab, (1 - m) * ab)
    # quantised to whole drone pixels so drone-derived fractions match exactly
    shade = np.round(shade * CELLS_PER_DRONE_SIDE ** 2) / CELLS_PER_DRONE_SIDE ** 2
    cover = np.where(cocoa, shade, 0.0)
    cover = np.where(land == LAND_FOREST, 0.85 + 0.05 * np.tanh(z), cover)
    cover = np.where(land == LAND_DISTURBED, 0.55 + 0.10 * np.tanh(z), cover)

    agbd = np.where(cocoa, true_agbd(100.0 * cover, spec.beta), 0.0)
    agbd = np.where(land == LAND_FOREST, 280.0 + 30.0 * f_dist, agbd)
    agbd = np.where(land == LAND_DISTURBED, 150.0 + 25.0 * f_dist, agbd)
    agbd = np.where(land == LAND_OTHER, 8.0 + 2.0 * np.abs(f_dist), agbd)
    agbd = np.maximum(agbd, 0.0)
    country = 2 if tx < max(1, spec.tiles_x // 2) else 1
    return TileTruth(tid, t, land, cover, agbd, country)


def _grid(a, t: GeoTransform, nodata=NODATA) -> RasterGrid:
    a = np.asarray(a, dtype=np.float32)
    return RasterGrid(a if a.ndim == 3 else a[None], t, nodata, CRS)


def _block_mean(a: np.ndarray, f: int) -> np.ndarray:
    h, w = a.shape
    return a.reshape(h // f, f, w // f, f).mean(axis=(1, 3))


# ---------------------------------------------------------------- farms and drone data


@dataclass
class FarmTruth:
    farm_id: str
    tile_id: str
    polygon: Polygon
    gt_date: dt.date
    monoculture: Polygon | None = None


def place_farms(spec: WorldSpec, tiles: list[TileTruth]) -> list[FarmTruth]:
    rng = _rng(spec, _FARMS)
    farms = []
    taken = {t.tile_id: np.zeros(t.land.shape, dtype=bool) for t in tiles}
    attempts = 0
    while len(farms) < spec.n_farms and attempts < 200 * max(1, spec.n_farms):
        attempts += 1
        tile = tiles[len(farms) % len(tiles)]
        n = spec.tile_size
        area = rng.uniform(*spec.farm_area_ha) * 1e4
        aspect = rng.uniform(0.7, 1.4)
        w = math.sqrt(area * aspect)
        h = area / w
        ang = math.radians(rng.uniform(-15, 15))
        half = 0.5 * math.hypot(w, h)
        margin = half + 60.0
        cx = rng.uniform(margin, n * 10.0 - margin)
        cy = rng.uniform(margin, n * 10.0 - margin)
        c0 = int((cx - half) // 10) - 3
        c1 = int((cx + half) // 10) + 3
        r0 = int((cy - half) // 10) - 3
        r1 = int((cy + half) // 10) + 3
        win = (slice(max(r0, 0), r1), slice(max(c0, 0), c1))
        if taken[tile.tile_id][win].any() or not (tile.land[win] == LAND_COCOA).all():
            continue
        taken[tile.tile_id][win] = True
        ca, sa = math.cos(ang), math.sin(ang)
        pts = []
        for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)):
            pts.append((tile.transform.origin_x + cx + ca * dx - sa * dy, tile.transform.origin_y - cy - (sa * dx + ca * dy)))
        poly = Polygon(tuple((round(x, 3), round(y, 3)) for x, y in pts))
        gt = dt.date(2022, 5, 1) + dt.timedelta(days=int(rng.integers(0, 168)))
        farms.append(FarmTruth(f"F{len(farms):03d}", tile.tile_id, poly, gt))
    if len(farms) < spec.n_farms:
        log.warning("placed %d of %d farms", len(farms), spec.n_farms)
    return farms


def add_monoculture_plots(spec: WorldSpec, farms: list[FarmTruth], tiles: dict) -> None:
    """Clear all shade from a 2x2-cell plot inside the first farms; recorded as calibration polygons."""
    for farm in farms[: spec.n_monoculture]:
        t = tiles[farm.tile_id]
        xs = [p[0] for p in farm.polygon.exterior]
        ys = [p[1] for p in farm.polygon.exterior]
        cx, cy = np.mean(xs), np.mean(ys)
        c, r = t.transform.index(cx, cy)
        c, r = int(c), int(r)
        t.cover[r - 1 : r + 1, c - 1 : c + 1] = 0.0
        t.agbd[r - 1 : r + 1, c - 1 : c + 1] = true_agbd(0.0, spec.beta)
        x0, y0 = t.transform.xy(c - 1, r - 1)
        x1, y1 = t.transform.xy(c + 1, r + 1)
        farm.monoculture = Polygon.rectangle(float(x0), float(y1), float(x1), float(y0))


def drone_rasters(spec: WorldSpec, farm: FarmTruth, tile: TileTruth, index: int):
    """DSM and DTM at 0.5 m over the farm's bounding box snapped to the 10 m grid."""
    x0, y0, x1, y1 = farm.polygon.bounds()
    t10 = tile.transform
    c0, r0 = t10.index(x0 - 10.0, y1 + 10.0)
    c1, r1 = t10.index(x1 + 10.0, y0 - 10.0)
    c0, r0, c1, r1 = int(c0), int(r0), int(c1) + 1, int(r1) + 1
    ncx, ncy = c1 - c0, r1 - r0
    k = CELLS_PER_DRONE_SIDE
    rng = _rng(spec, _DRONE, index)
    crown = _smooth_field(rng, (ncy * k, ncx * k), 4.0)
    hfield = ndimage.gaussian_filter(rng.random((ncy * k, ncx * k)), 6.0)
    hfield = (hfield - hfield.min()) / max(np.ptp(hfield), 1e-12)
    cover = tile.cover[r0:r1, c0:c1]
    n_shade = np.round(cover * k * k).astype(np.int64)
    blocks = crown.reshape(ncy, k, ncx, k).transpose(0, 2, 1, 3).reshape(ncy, ncx, k * k)
    rank = np.argsort(np.argsort(-blocks, axis=2, kind="stable"), axis=2, kind="stable")
    shade = rank < n_shade[:, :, None]
    shade = shade.reshape(ncy, ncx, k, k).transpose(0, 2, 1, 3).reshape(ncy * k, ncx * k)
    chm = np.where(shade, 10.0 + 20.0 * hfield, 2.0 + 4.0 * hfield)
    ox, oy = t10.xy(c0, r0)
    td = GeoTransform(float(ox), float(oy), DRONE_PX, -DRONE_PX)
    yy, xx = np.mgrid[0 : ncy * k, 0 : ncx * k]
    dtm = 150.0 + 0.004 * (ox + xx * DRONE_PX - spec.origin_x) + 0.002 * (spec.origin_y - oy + yy * DRONE_PX)
    dtm = dtm + 0.5 * _smooth_field(rng, dtm.shape, 30.0)
    return _grid(dtm + chm, td), _grid(dtm, td)


# ---------------------------------------------------------------- scenes


def _cloud_fractions(spec: WorldSpec, rng, n: int) -> np.ndarray:
    u = rng.random(n)
    f = spec.cloud_fraction * (0.2 + 1.6 * u)
    f = f - f.mean() + spec.cloud_fraction
    return np.clip(f, 0.0, 0.9)


def make_scene(spec: WorldSpec, tile: TileTruth, s: int, frac: float, rng):
    """Band grids at native resolution plus the 10 m cloud mask."""
    n = spec.tile_size
    cover = tile.cover
    other = tile.land == LAND_OTHER
    refl = BAND_BASE[:, None, None] + BAND_COVER[:, None, None] * cover[None]
    refl = np.where(other[None], BAND_SOIL[:, None, None], refl)
    gain = 1.0 + 0.02 * rng.standard_normal(12)
    offset = 0.003 * rng.standard_normal(12)
    refl = refl * gain[:, None, None] + offset[:, None, None]
    refl = refl + spec.band_noise * rng.standard_normal(refl.shape)

    cf = _smooth_field(rng, (n, n), 12.0)
    n_cloud = int(round(frac * n * n))
    cloud = np.zeros(n * n, dtype=bool)
    if n_cloud:
        cloud[np.argsort(-cf.ravel(), kind="stable")[:n_cloud]] = True
    cloud = cloud.reshape(n, n)
    shadow = np.roll(cloud, (8, 5), axis=(0, 1)) & ~cloud
    refl = np.where(shadow[None], refl * 0.97, refl)
    refl = np.where(cloud[None], BAND_CLOUD[:, None, None] + 0.02 * cf[None], refl)
    refl = np.clip(refl, 0.0, 1.0)

    bands = []
    for b in range(12):
        f = BAND_RES[b] // 10
        a = refl[b] if f == 1 else _block_mean(refl[b], f)
        bands.append(_grid(a, tile.transform.scaled(f)))
    return bands, _grid(cloud.astype(np.float32), tile.transform), float(cloud.mean())


# ---------------------------------------------------------------- footprints, climate, occurrences


def make_footprints(spec: WorldSpec, tiles: list[TileTruth]) -> list[GediFootprint]:
    rng = _rng(spec, _GEDI)
    n = spec.tile_size
    out = []
    for i in range(spec.n_footprints):
        t = tiles[int(rng.integers(0, len(tiles)))]
        x = t.transform.origin_x + rng.uniform(0, n * 10.0)
        y = t.transform.origin_y - rng.uniform(0, n * 10.0)
        c, r = t.transform.index(x, y)
        r0, r1 = max(int(r) - 1, 0), min(int(r) + 2, n)
        c0, c1 = max(int(c) - 1, 0), min(int(c) + 2, n)
        if (t.land[r0:r1, c0:c1] == LAND_COCOA).all():
            ref = float(true_agbd(100.0 * t.cover[r0:r1, c0:c1].mean(), spec.beta))
        else:
            ref = float(t.agbd[r0:r1, c0:c1].mean())
        agbd = max(0.0, ref + spec.agbd_noise * rng.standard_normal())
        date = dt.date(2022, 1, 1) + dt.timedelta(days=int(rng.integers(0, 365)))
        quality = bool(rng.random() < 0.9)
        beam = "power" if rng.random() < 0.5 else "coverage"
        lat = y / METRES_PER_DEG_LAT
        lon = -3.0 + (x - spec.origin_x) / (METRES_PER_DEG_LAT * math.cos(math.radians(lat)))
        out.append(GediFootprint(f"G{i:06d}", date, round(lon, 7), round(lat, 7), round(x, 3), round(y, 3),
                                 round(agbd, 4), quality, beam))
    return out


def extraterrestrial_radiation(lat_deg, doy) -> np.ndarray:
    """Daily top-of-atmosphere radiation (MJ/m2/day) from latitude and day of year."""
    phi = np.radians(lat_deg)
    j = np.asarray(doy, dtype=np.float64)
    dr = 1 + 0.033 * np.cos(2 * np.pi * j / 365)
    dec = 0.409 * np.sin(2 * np.pi * j / 365 - 1.39)
    ws = np.arccos(np.clip(-np.tan(phi) * np.tan(dec), -1, 1))
    return 24 * 60 / np.pi * 0.0820 * dr * (ws * np.sin(phi) * np.sin(dec) + np.cos(phi) * np.cos(dec) * np.sin(ws))


MID_MONTH_DOY = np.array([15, 46, 74, 105, 135, 166, 196, 227, 258, 288, 319, 349])


def make_climate(spec: WorldSpec) -> dict:
    size_x = spec.tiles_x * spec.tile_size * 10.0
    size_y = spec.tiles_y * spec.tile_size * 10.0
    nx = int(math.ceil(size_x / spec.climate_cell_m))
    ny = int(math.ceil(size_y / spec.climate_cell_m))
    t = GeoTransform(spec.origin_x, spec.origin_y, spec.climate_cell_m, -spec.climate_cell_m)
    rng = _rng(spec, _CLIM)
    gx = np.linspace(-1, 1, nx)[None, :]
    gy = np.linspace(-1, 1, ny)[:, None]
    wig = _smooth_field(rng, (ny, nx), 4.0)
    m = np.arange(12)[:, None, None]
    season = np.cos(2 * np.pi * (m - 2) / 12)
    tmean = 26.0 + 1.5 * season - 1.0 * gx + 0.3 * wig
    dtr = 9.0 + 1.5 * gy + 0.5 * np.sin(2 * np.pi * m / 12)
    tmin = tmean - dtr / 2
    tmax = tmean + dtr / 2
    # two rainy seasons; the dry season lengthens towards the north (gy < 0)
    wet = 140 + 80 * np.cos(2 * np.pi * (m - 5) / 6) ** 2
    dry = (m >= 11) | (m <= 1) | ((m == 2) & (gy < 0)) | ((m == 10) & (gy < -0.5))
    precip = np.where(dry, 40 + 25 * (gy + 1), wet * (1 + 0.15 * gx)) * (1 + 0.05 * wig)
    precip = np.maximum(precip, 0.0) * np.ones((12, ny, nx))
    yc = spec.origin_y - (np.arange(ny) + 0.5) * spec.climate_cell_m
    lat = yc / METRES_PER_DEG_LAT
    ra = extraterrestrial_radiation(lat[None, :, None], MID_MONTH_DOY[:, None, None]) * np.ones((12, ny, nx))
    return {k: _grid(v * np.ones((12, ny, nx)), t) for k, v in
            (("tmin", tmin), ("tmax", tmax), ("tmean", tmean), ("precip", precip), ("ra", ra))}


def make_occurrences(spec: WorldSpec, tiles: list[TileTruth]) -> list[tuple[str, float, float]]:
    rng = _rng(spec, _OCC)
    out = []
    while len(out) < spec.n_occurrences:
        t = tiles[int(rng.integers(0, len(tiles)))]
        r, c = rng.integers(0, spec.tile_size, 2)
        if t.land[r, c] != LAND_COCOA:
            continue
        x, y = t.transform.center_xy(c, r)
        out.append((f"O{len(out):05d}", round(float(x), 2), round(float(y), 2)))
    return out


# ---------------------------------------------------------------- bundle


@dataclass
class WorldBundle:
    root: Path
    spec: WorldSpec
    tiles: list = field(default_factory=list)
    files: list = field(default_factory=list)


def generate_world(spec: WorldSpec, out_dir) -> WorldBundle:
    """Write every pipeline input plus ``truth.json`` under ``out_dir``."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    files = []

    def put(rel, grid):
        files.append(write_grid(root / rel, grid))

    tiles = [make_tile(spec, tid, tx, ty) for tid, tx, ty in tile_ids(spec)]
    by_id = {t.tile_id: t for t in tiles}
    farms = place_farms(spec, tiles)
    add_monoculture_plots(spec, farms, by_id)

    tiles_meta = []
    for t in tiles:
        put(f"masks/{t.tile_id}_cocoa.cgrd", _grid((t.land == LAND_COCOA).astype(np.float32), t.transform))
        tmf = np.zeros(t.land.shape, dtype=np.float32)
        for land, code in TMF_CODE.items():
            tmf[t.land == land] = code
        put(f"masks/{t.tile_id}_tmf.cgrd", _grid(tmf, t.transform))
        put(f"masks/{t.tile_id}_country.cgrd", _grid(np.full(t.land.shape, t.country, np.float32), t.transform))
        rh = _rng(spec, _HEIGHT, tiles.index(t))
        h = canopy_height_from_agbd(t.agbd) + 0.7 * rh.standard_normal(t.agbd.shape)
        h = np.maximum(h, 0.0)
        put(f"heights/{t.tile_id}_chm.cgrd", _grid(np.stack([h, 1.0 + 0.08 * h]), t.transform))
        put(f"truth/{t.tile_id}_cover.cgrd", _grid(t.cover, t.transform))
        put(f"truth/{t.tile_id}_agbd.cgrd", _grid(t.agbd, t.transform))
        tiles_meta.append({"tile_id": t.tile_id, "width": t.land.shape[1], "height": t.land.shape[0],
                           "transform": list(t.transform.to_gdal()), "country": t.country})

    records = []
    cloud_stats = []
    for ti, t in enumerate(tiles):
        rng = _rng(spec, _SCENE, ti)
        fracs = _cloud_fractions(spec, rng, len(SCENE_DATES))
        for s, date in enumerate(SCENE_DATES):
            sid = f"S2_{t.tile_id}_{date:%Y%m%d}"
            bands, cloud, measured = make_scene(spec, t, s, fracs[s], _rng(spec, _SCENE, ti, s))
            d = f"scenes/{sid}"
            for name, g in zip(BAND_FILES, bands):
                put(f"{d}/{name}", g)
            put(f"{d}/{CLOUD_FILE}", cloud)
            cloud_stats.append(measured)
            records.append(SceneRecord(sid, t.tile_id, date, round(100.0 * measured, 4),
                                       tuple(root / d / f for f in BAND_FILES), root / d / CLOUD_FILE))
    write_catalog(root / "catalog.csv", records, root)
    files.append(root / "catalog.csv")

    farm_records = []
    farm_truth = {}
    for i, f in enumerate(farms):
        t = by_id[f.tile_id]
        dsm, dtm = drone_rasters(spec, f, t, i)
        put(f"drone/{f.farm_id}_dsm.cgrd", dsm)
        put(f"drone/{f.farm_id}_dtm.cgrd", dtm)
        farm_records.append(FarmRecord(f.farm_id, f.polygon, f.gt_date, root / f"drone/{f.farm_id}_dsm.cgrd",
                                       root / f"drone/{f.farm_id}_dtm.cgrd"))
        x0, y0, x1, y1 = f.polygon.bounds()
        c0, r0 = t.transform.index(x0, y1)
        c1, r1 = t.transform.index(x1, y0)
        rr, cc = np.mgrid[int(r0) : int(r1) + 1, int(c0) : int(c1) + 1]
        cx, cy = t.transform.center_xy(cc.ravel(), rr.ravel())
        inside = f.polygon.contains(cx, cy)
        cov = t.cover[rr.ravel()[inside], cc.ravel()[inside]]
        farm_truth[f.farm_id] = {"tile_id": f.tile_id, "n_cells": int(inside.sum()),
                                 "mean_cover": float(cov.mean()) if cov.size else None,
                                 "gt_date": f.gt_date.isoformat()}
    write_farms(root / "farms.csv", farm_records, root)
    files.append(root / "farms.csv")
    with open(root / "monoculture.csv", "w", newline="") as fh:
        fh.write("farm_id,boundary_wkt\n")
        for f in farms:
            if f.monoculture is not None:
                fh.write(f'{f.farm_id},"{f.monoculture.to_wkt()}"\n')
    files.append(root / "monoculture.csv")

    fps = make_footprints(spec, tiles)
    write_footprints(root / "gedi.csv", fps)
    files.append(root / "gedi.csv")

    for name, g in make_climate(spec).items():
        put(f"climate/{name}.cgrd", g)
    occ = make_occurrences(spec, tiles)
    with open(root / "occurrences.csv", "w", newline="") as fh:
        fh.write("id,x,y\n")
        for o in occ:
            fh.write(f"{o[0]},{o[1]!r},{o[2]!r}\n")
    files.append(root / "occurrences.csv")

    cocoa_cover = np.concatenate([t.cover[t.land == LAND_COCOA] for t in tiles])
    truth = {
        "spec": spec.to_json(),
        "beta": list(spec.beta),
        "cocoa_cover_mean": float(cocoa_cover.mean()),
        "cocoa_cover_sd": float(cocoa_cover.std()),
        "cloud_fraction_measured": float(np.mean(cloud_stats)),
        "farms": farm_truth,
        "countries": {str(k): v for k, v in COUNTRY_IDS.items()},
    }
    (root / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True))
    (root / "tiles.json").write_text(json.dumps({"tiles": tiles_meta, "crs": CRS,
                                                "countries": {str(k): v for k, v in COUNTRY_IDS.items()}},
                                               indent=2, sort_keys=True))
    (root / "world.json").write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True))
    files += [root / "truth.json", root / "tiles.json", root / "world.json"]
    log.info("synthetic world: %d tiles, %d farms, %d scenes, %d footprints", len(tiles), len(farms),
             len(records), len(fps))
    return WorldBundle(root, spec, [t.tile_id for t in tiles], files)
