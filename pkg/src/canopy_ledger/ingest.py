"""Scene catalog, image selection and per-pixel cloud exclusion.

Band files are stored per scene as ``B01.cgrd`` .. ``B12.cgrd`` plus
``cloudmask.cgrd``. The twelve files are the Sentinel-2 L2A channels in the
order given by :data:`BAND_NAMES` (B10 does not exist in L2A, so slots 9 and
10 hold B8A and B09).
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AlignmentError
from .raster import RasterGrid, read_grid, upsample_nearest

log = logging.getLogger(__name__)

BAND_NAMES = ("B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B11", "B12")
BAND_FILES = tuple(f"B{i:02d}.cgrd" for i in range(1, 13))
CLOUD_FILE = "cloudmask.cgrd"
CATALOG_FIELDS = ("scene_id", "tile_id", "date", "cloud_pct", "band_dir")


@dataclass(frozen=True)
class SelectionWindow:
    start_date: dt.date
    end_date: dt.date

    def __post_init__(self):
        if self.start_date > self.end_date:
            raise ValueError(f"window start {self.start_date} after end {self.end_date}")

    def contains(self, d: dt.date) -> bool:
        return self.start_date <= d <= self.end_date

    @classmethod
    def parse(cls, start: str, end: str) -> "SelectionWindow":
        return cls(dt.date.fromisoformat(start), dt.date.fromisoformat(end))


MAP_WINDOW_2022 = SelectionWindow(dt.date(2022, 4, 1), dt.date(2022, 11, 30))
TRAINING_WINDOWS = (
    SelectionWindow(dt.date(2020, 3, 1), dt.date(2021, 5, 31)),
    SelectionWindow(dt.date(2021, 8, 1), dt.date(2021, 12, 31)),
    SelectionWindow(dt.date(2022, 4, 1), dt.date(2022, 7, 31)),
    SelectionWindow(dt.date(2022, 8, 1), dt.date(2022, 12, 31)),
)


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    tile_id: str
    timestamp: dt.date
    cloud_pct: float
    band_paths: tuple[Path, ...]
    cloud_mask_path: Path

    def __post_init__(self):
        if not 0.0 <= self.cloud_pct <= 100.0:
            raise ValueError(f"{self.scene_id}: cloud_pct {self.cloud_pct} outside [0, 100]")
        if len(self.band_paths) != 12:
            raise ValueError(f"{self.scene_id}: expected 12 band paths, got {len(self.band_paths)}")

    @property
    def cloud_key(self):
        return (self.cloud_pct, self.timestamp, self.scene_id)

    def temporal_key(self, ref: dt.date):
        return (abs((self.timestamp - ref).days), self.timestamp, self.scene_id)


def scene_from_dir(scene_id, tile_id, date, cloud_pct, band_dir) -> SceneRecord:
    band_dir = Path(band_dir)
    return SceneRecord(
        scene_id, tile_id, date, float(cloud_pct),
        tuple(band_dir / f for f in BAND_FILES), band_dir / CLOUD_FILE,
    )


def read_catalog(path) -> list[SceneRecord]:
    """Load a catalog CSV; relative ``band_dir`` entries resolve against its folder."""
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CATALOG_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"catalog {path} lacks columns {sorted(missing)}")
        for row in reader:
            band_dir = Path(row["band_dir"])
            if not band_dir.is_absolute():
                band_dir = path.parent / band_dir
            out.append(scene_from_dir(
                row["scene_id"], row["tile_id"], dt.date.fromisoformat(row["date"]),
                row["cloud_pct"], band_dir,
            ))
    if not out:
        raise ValueError(f"catalog {path} is empty")
    return out


def write_catalog(path, scenes: Iterable[SceneRecord], root=None):
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_FIELDS)
        for s in scenes:
            band_dir = s.cloud_mask_path.parent
            try:
                band_dir = band_dir.relative_to(root)
            except ValueError:
                pass
            w.writerow([s.scene_id, s.tile_id, s.timestamp.isoformat(), repr(float(s.cloud_pct)), band_dir.as_posix()])


# ---------------------------------------------------------------- selection


def _temporal_pick(scenes, gt_date, max_days, n_keep):
    near = [s for s in scenes if abs((s.timestamp - gt_date).days) <= max_days]
    near.sort(key=lambda s: s.temporal_key(gt_date))
    return near[:n_keep]


def select_training_scenes(
    catalog: Sequence[SceneRecord],
    windows: Sequence[SelectionWindow],
    gt_date: dt.date,
    n_precull: int = 20,
    max_days: int = 120,
    n_keep: int = 10,
    tile_ids: Iterable[str] | None = None,
    reject: Callable[[SceneRecord], bool] | None = None,
) -> list[SceneRecord]:
    """Training-time scene choice for one farm.

    Per tile and per window the ``n_precull`` least cloudy scenes survive.
    Scenes for which ``reject`` is true (clouds over the farm) are dropped,
    as are scenes more than ``max_days`` from ``gt_date``. The ``n_keep``
    temporally closest remain; tiles are processed independently and their
    union is truncated again by the same rule.

    Returns an empty list (and logs why) when nothing survives.
    """
    if not catalog:
        raise ValueError("empty catalog")
    tiles = sorted({s.tile_id for s in catalog}) if tile_ids is None else sorted(set(tile_ids))
    per_tile = []
    for tile in tiles:
        pool = {}
        for win in windows:
            inwin = sorted((s for s in catalog if s.tile_id == tile and win.contains(s.timestamp)),
                           key=lambda s: s.cloud_key)
            for s in inwin[:n_precull]:
                pool[s.scene_id] = s
        cands = list(pool.values())
        if reject is not None:
            cands = [s for s in cands if not reject(s)]
        per_tile.extend(_temporal_pick(cands, gt_date, max_days, n_keep))
    chosen = _temporal_pick(per_tile, gt_date, max_days, n_keep)
    if not chosen:
        log.warning("no training scene within %d days of %s on tiles %s", max_days, gt_date, tiles)
    return chosen


def select_map_scenes(
    catalog: Sequence[SceneRecord],
    tile_id: str,
    window: SelectionWindow = MAP_WINDOW_2022,
    n_keep: int = 10,
) -> list[SceneRecord]:
    """The ``n_keep`` least cloudy scenes of a tile inside ``window``."""
    inwin = sorted((s for s in catalog if s.tile_id == tile_id and window.contains(s.timestamp)),
                   key=lambda s: s.cloud_key)
    if not inwin:
        log.warning("tile %s has no scene in %s..%s; it will be nodata", tile_id, window.start_date, window.end_date)
    return inwin[:n_keep]


# ---------------------------------------------------------------- loading


@dataclass(frozen=True)
class LoadedScene:
    """A scene with all 12 bands on the 10 m cloud-mask grid."""

    record: SceneRecord
    bands: RasterGrid
    cloud: RasterGrid


def load_bands(paths: Sequence[Path], like: RasterGrid) -> RasterGrid:
    """Read band files and bring each onto the grid of ``like`` by nearest upsampling."""
    stack = np.empty((len(paths), like.height, like.width), dtype=np.float32)
    for i, p in enumerate(paths):
        g = read_grid(p)
        factor = g.transform.pixel_size_x / like.transform.pixel_size_x
        k = int(round(factor))
        if abs(factor - k) > 1e-9 or k < 1:
            raise AlignmentError(f"{p}: pixel size {g.transform.pixel_size_x} is not a multiple of {like.transform.pixel_size_x}")
        up = upsample_nearest(g, k)
        if up.transform.origin_x != like.transform.origin_x or up.transform.origin_y != like.transform.origin_y:
            raise AlignmentError(f"{p}: origin differs from the cloud mask grid")
        d = up.data[0][: like.height, : like.width]
        if d.shape != like.shape:
            raise AlignmentError(f"{p}: upsampled extent {d.shape} smaller than {like.shape}")
        # carry each file's own nodata through as the common sentinel
        stack[i] = np.where(up.valid(0)[: like.height, : like.width], d, np.float32(like.nodata))
    return RasterGrid(stack, like.transform, like.nodata, like.crs_label)


def load_scene(record: SceneRecord) -> LoadedScene:
    cloud = read_grid(record.cloud_mask_path)
    return LoadedScene(record, load_bands(record.band_paths, cloud), cloud)


def validity_mask(scene: LoadedScene) -> RasterGrid:
    """1 where the cloud mask is 0 and all twelve bands are valid, else 0.

    Cloud shadows are never masked.
    """
    scene.bands.require_alignment(scene.cloud, "scene bands and cloud mask")
    clear = scene.cloud.valid(0) & (scene.cloud.data[0] == 0)
    ok = clear & scene.bands.valid()
    return scene.cloud.with_data(ok.astype(np.float32)[None])


def apply_validity(scene: LoadedScene, mask: RasterGrid) -> LoadedScene:
    """Scene with pixels outside ``mask`` set to nodata in every band and marked cloudy."""
    scene.bands.require_alignment(mask, "scene and mask")
    keep = mask.data[0] == 1
    bands = np.where(keep[None], scene.bands.data, np.float32(scene.bands.nodata))
    cloud = np.where(keep, scene.cloud.data[0], np.float32(1))
    return LoadedScene(scene.record, scene.bands.with_data(bands), scene.cloud.with_data(cloud[None]))
