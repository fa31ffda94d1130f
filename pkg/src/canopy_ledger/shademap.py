"""Shade-cover model training, map production and map statistics.

Targets and predictions are fractions in [0, 1] inside the model; maps and
reports are in percent.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .boosting import CvResult, GbrConfig, GbrModel, cross_validate, gbr_fit, gbr_predict
from .errors import EmptyDataError
from .features import FEATURE_ORDER_TAG, FeatureMatrix, build_features, build_targets, channel_stack, \
    feature_valid_mask, gather
from .groundtruth import ShadeTargetCell, nearest_rank
from .ingest import LoadedScene, validity_mask
from .raster import GridStats, RasterGrid, grid_stats

log = logging.getLogger(__name__)

SHADE_NODATA = -9999.0
RESIDUAL_BIN_PP = 5.0


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitAssignment:
    roles: dict          # farm_id -> "train" | "test"
    folds: dict          # train farm_id -> fold id

    def farms(self, role: str) -> list[str]:
        return sorted(f for f, r in self.roles.items() if r == role)

    def to_json(self) -> dict:
        return {"roles": dict(sorted(self.roles.items())), "folds": dict(sorted(self.folds.items()))}

    @classmethod
    def from_json(cls, d) -> "SplitAssignment":
        return cls(dict(d["roles"]), {k: int(v) for k, v in d["folds"].items()})


def make_split(farm_pixels: Mapping[str, int], seed: int = 0, k: int = 5,
               test_fraction: float = 1 / 3) -> SplitAssignment:
    """Farm-level hold-out split plus CV folds over the training farms.

    Farms are shuffled (from their sorted ids, so input order is irrelevant)
    and moved to the test set until the test pixel count first reaches
    ``test_fraction`` of all pixels. Training farms are dealt round-robin
    into ``min(k, n_train)`` folds in shuffled order.
    """
    ids = sorted(farm_pixels)
    if len(ids) < 3:
        raise ValueError(f"need at least 3 farms, got {len(ids)}")
    total = sum(int(farm_pixels[f]) for f in ids)
    perm = np.random.default_rng(seed).permutation(len(ids))
    roles, acc = {}, 0
    for i in perm:
        f = ids[i]
        if acc < test_fraction * total * (1 - 1e-12):
            roles[f] = "test"
            acc += int(farm_pixels[f])
        else:
            roles[f] = "train"
    train = [ids[i] for i in perm if roles[ids[i]] == "train"]
    if not train:
        # one very large farm can swallow the quota; keep at least one for training
        roles[ids[perm[-1]]] = "train"
        train = [ids[perm[-1]]]
    n_folds = max(1, min(k, len(train)))
    folds = {f: j % n_folds for j, f in enumerate(train)}
    return SplitAssignment(roles, folds)


# ---------------------------------------------------------------- training rows


def farm_cloud_fraction(cloud: RasterGrid, cells: Sequence[ShadeTargetCell]) -> float:
    """Fraction of a farm's target cells that are cloudy or missing in a cloud mask."""
    if not cells:
        return 0.0
    c = np.array([x.col for x in cells])
    r = np.array([x.row for x in cells])
    ok = cloud.valid(0)[r, c] & (cloud.data[0][r, c] == 0)
    return float(1.0 - ok.mean())


@dataclass
class TrainingRows:
    features: FeatureMatrix
    targets: np.ndarray      # fractions
    farm_ids: np.ndarray
    scene_ids: np.ndarray

    @staticmethod
    def concat(parts: Sequence["TrainingRows"]) -> "TrainingRows":
        return TrainingRows(
            FeatureMatrix.concat([p.features for p in parts]),
            np.concatenate([p.targets for p in parts]) if parts else np.zeros(0),
            np.concatenate([p.farm_ids for p in parts]) if parts else np.zeros(0, str),
            np.concatenate([p.scene_ids for p in parts]) if parts else np.zeros(0, str),
        )


def farm_rows(farm_id: str, cells: Sequence[ShadeTargetCell], scenes: Sequence[LoadedScene],
              tile_id: str) -> TrainingRows:
    """One row per (scene, target cell) whose whole neighbourhood is cloud-free in that scene."""
    parts, targets, sids = [], [], []
    px_all = np.array([(c.col, c.row) for c in cells], dtype=np.int64).reshape(-1, 2)
    for sc in scenes:
        valid = validity_mask(sc)
        ok = feature_valid_mask(valid)
        px = px_all[ok[px_all[:, 1], px_all[:, 0]]] if px_all.size else px_all
        if px.size == 0:
            continue
        t, keep = build_targets(cells, px)
        fm = build_features(sc.bands, valid, px[keep], tile_id)
        parts.append(fm)
        targets.append(t)
        sids.append(np.full(fm.n_rows, sc.record.scene_id))
    if not parts:
        log.warning("farm %s: no usable pixels in %d scenes", farm_id, len(scenes))
        return TrainingRows(FeatureMatrix.concat([]), np.zeros(0), np.zeros(0, str), np.zeros(0, str))
    fm = FeatureMatrix.concat(parts)
    return TrainingRows(fm, np.concatenate(targets), np.full(fm.n_rows, farm_id), np.concatenate(sids))


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    mae: float
    rmse: float
    bias: float
    n: int
    bin_width: float
    binned_residuals: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def evaluate(pred, truth, bin_width: float = RESIDUAL_BIN_PP, upper: float | None = 100.0) -> EvalReport:
    """Error summary with residuals e = pred - truth binned on truth.

    Bins are ``[k*w, (k+1)*w)``; a truth equal to ``upper`` joins the last
    bin below it. Per-bin quantiles use nearest rank.
    """
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size == 0 or p.size != t.size:
        raise EmptyDataError("evaluate needs aligned, non-empty prediction/truth pairs")
    e = p - t
    b = np.floor(t / bin_width).astype(np.int64)
    if upper is not None:
        b = np.minimum(b, int(math.ceil(upper / bin_width)) - 1)
    bins = []
    for k in np.unique(b):
        ek = e[b == k]
        bins.append({
            "lo": float(k * bin_width), "hi": float((k + 1) * bin_width), "n": int(ek.size),
            "p10": nearest_rank(ek, 0.10), "q1": nearest_rank(ek, 0.25), "median": nearest_rank(ek, 0.5),
            "q3": nearest_rank(ek, 0.75), "p90": nearest_rank(ek, 0.90),
        })
    return EvalReport(float(np.mean(np.abs(e))), float(math.sqrt(np.mean(e * e))), float(np.mean(e)),
                      int(e.size), float(bin_width), bins)


# ---------------------------------------------------------------- training


@dataclass
class ShadeTrainResult:
    model: GbrModel
    report: EvalReport
    cv: CvResult | None
    split: SplitAssignment


def train_shade_model(rows: TrainingRows, split: SplitAssignment, grid: Sequence[GbrConfig],
                      weights=None) -> ShadeTrainResult:
    """Cross-validate over training farms, refit the best config on all of them, score the test farms."""
    roles = np.array([split.roles.get(f, "unused") for f in rows.farm_ids])
    tr = np.nonzero(roles == "train")[0]
    te = np.nonzero(roles == "test")[0]
    if tr.size == 0 or te.size == 0:
        raise EmptyDataError(f"split leaves {tr.size} train and {te.size} test rows")
    X = rows.features.values
    y = rows.targets
    w = None if weights is None else np.asarray(weights, dtype=np.float64)[tr]
    Xtr = np.asarray(X[tr], dtype=np.float64)
    cv = None
    grid = list(grid)
    folds = np.array([split.folds[f] for f in rows.farm_ids[tr]])
    if len(grid) > 1 and np.unique(folds).size >= 2:
        cv = cross_validate(Xtr, y[tr], grid, weights=w, folds=folds, clamp=(0.0, 1.0))
        best = cv.best
    else:
        best = grid[0]
    log.info("final shade model: %s on %d rows", best, tr.size)
    model = gbr_fit(Xtr, y[tr], best, weights=w, feature_order_tag=FEATURE_ORDER_TAG)
    p = np.clip(gbr_predict(model, X[te]), 0.0, 1.0)
    report = evaluate(100.0 * p, 100.0 * y[te])
    log.info("test MAE %.2f pp, RMSE %.2f pp, bias %.2f pp (n=%d)", report.mae, report.rmse, report.bias, report.n)
    return ShadeTrainResult(model, report, cv, split)


# ---------------------------------------------------------------- mapping


@dataclass
class ShadeMap:
    grid: RasterGrid                 # percent, 1 band
    n_valid_scenes: RasterGrid
    scene_ids: tuple[str, ...]


def predict_map(model: GbrModel, scenes: Sequence[LoadedScene], cocoa_mask: RasterGrid,
                chunk: int = 20000) -> ShadeMap:
    """Average per-scene predictions over the scenes in which each cocoa pixel is usable.

    The mean is converted to percent and clamped to [0, 100] afterwards.
    Pixels outside the cocoa mask or without a usable scene are nodata.
    """
    cocoa = cocoa_mask.valid(0) & (cocoa_mask.data[0] == 1)
    h, w = cocoa.shape
    acc = np.zeros((h, w), dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.int64)
    ids = []
    for sc in scenes:
        sc.bands.require_alignment(cocoa_mask, "scene and cocoa mask")
        ok = feature_valid_mask(validity_mask(sc)) & cocoa
        rr, cc = np.nonzero(ok)
        if rr.size == 0:
            continue
        ch = channel_stack(sc.bands).data
        for s in range(0, rr.size, chunk):
            r, c = rr[s : s + chunk], cc[s : s + chunk]
            acc[r, c] += gbr_predict(model, gather(ch, c, r))
        cnt[ok] += 1
        ids.append(sc.record.scene_id)
    if not scenes:
        log.warning("no map scenes; shade tile is entirely nodata")
    have = cnt > 0
    mean = np.divide(acc, cnt, out=np.zeros_like(acc), where=have)
    pct = np.clip(100.0 * mean, 0.0, 100.0)
    out = np.where(have, pct, SHADE_NODATA).astype(np.float32)
    grid = RasterGrid(out[None], cocoa_mask.transform, SHADE_NODATA, cocoa_mask.crs_label)
    nvs = RasterGrid(cnt.astype(np.float32)[None], cocoa_mask.transform, SHADE_NODATA, cocoa_mask.crs_label)
    return ShadeMap(grid, nvs, tuple(ids))


# ---------------------------------------------------------------- statistics


def zonal_stats(shade_map: RasterGrid, zone_map: RasterGrid) -> dict[int, GridStats]:
    """Per-zone statistics with 1 pp histogram bins; zones without valid pixels are omitted."""
    shade_map.require_alignment(zone_map, "shade map and zone map")
    zv = zone_map.valid(0)
    zones = np.unique(zone_map.data[0][zv]).astype(np.int64)
    edges = np.arange(0.0, 101.0)
    out = {}
    for z in zones:
        st = grid_stats(shade_map, 0, mask=zv & (zone_map.data[0] == z), bins=edges)
        if st.n_valid:
            out[int(z)] = st
    return out


@dataclass(frozen=True)
class Exceedance:
    threshold: float
    count: int
    area_ha: float
    fraction: float


def cover_exceedance(shade_map: RasterGrid, thresholds: Sequence[float]) -> list[Exceedance]:
    """Area and fraction of valid pixels with shade >= each threshold (percent)."""
    v = shade_map.data[0][shade_map.valid(0)].astype(np.float64)
    n = v.size
    cell_ha = shade_map.transform.cell_area / 1e4
    out = []
    for t in thresholds:
        c = int(np.count_nonzero(v >= t))
        out.append(Exceedance(float(t), c, c * cell_ha, c / n if n else math.nan))
    return out


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True)
