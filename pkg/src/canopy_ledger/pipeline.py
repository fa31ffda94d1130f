"""Pipeline stages over a run directory, tied together by ``manifest.json``.

Each stage reads the outputs of its upstream stages from the run directory,
writes its own outputs under a stage folder, and records their SHA-256
digests in the manifest. A stage whose upstream entry is missing raises
:class:`DependencyError`.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import time
from collections import defaultdict
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np

from . import render
from .agbdnet import (NetConfig, build_samples, ensemble_predict, filter_gedi, load_ensemble, make_stripe_split,
                      net_train, predict_agbd_map, read_footprints, save_ensemble)
from .agroclim import (BIO_NAMES, CLIM_VARS, ZONE_NODATA, ZoneConfig, bioclim_grids, classify_zones, cluster_types,
                       vif, vif_select)
from .boosting import GbrConfig, load_model, save_model
from .carbon import (EmissionConfig, RegressionConfig, categorical_to_grid, draw_coefficients, fit_regression,
                     landuse_stats, offset_fraction, pair_maps, scenario, CARBON_FRACTION)
from .config import canonical_json, config_hash
from .errors import DependencyError, EmptyDataError
from .features import write_cfmx
from .groundtruth import (ShadeTargetCell, calibrate_heights, canopy_height, cell_shade_fraction,
                          monoculture_heights, read_farms, shade_mask, Polygon)
from .ingest import (TRAINING_WINDOWS, SelectionWindow, load_scene, read_catalog, select_map_scenes,
                     select_training_scenes)
from .raster import GeoTransform, RasterGrid, grid_stats, mosaic, read_grid, write_grid
from .shademap import (TrainingRows, cover_exceedance, evaluate, farm_cloud_fraction, farm_rows, make_split,
                       predict_map, train_shade_model, zonal_stats)
from .synth import WorldSpec, generate_world

log = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "groundtruth", "train-shade", "map-shade", "train-agbd", "map-agbd",
          "fit-carbon", "scenario", "zones", "landuse", "report")

DEPENDS = {
    "synth": (),
    "ingest": ("synth",),
    "groundtruth": ("synth",),
    "train-shade": ("ingest", "groundtruth"),
    "map-shade": ("ingest", "train-shade"),
    "train-agbd": ("synth",),
    "map-agbd": ("train-agbd",),
    "fit-carbon": ("map-shade", "map-agbd"),
    "scenario": ("fit-carbon",),
    "zones": ("synth",),
    "landuse": ("map-agbd",),
    "report": ("map-shade", "scenario", "landuse"),
}

MANIFEST = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (dt.date, Path)):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _finite(x):
    return x if x is None or math.isfinite(x) else None


# ---------------------------------------------------------------- run directory


class Run:
    """A run directory plus the validated configuration driving it."""

    def __init__(self, run_dir, cfg: dict):
        self.dir = Path(run_dir)
        self.cfg = cfg

    @property
    def world(self) -> Path:
        w = self.cfg.get("world_dir")
        return Path(w) if w else self.dir / "world"

    def stage_dir(self, stage: str) -> Path:
        d = self.dir / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def manifest(self) -> dict:
        p = self.dir / MANIFEST
        if p.exists():
            return json.loads(p.read_text())
        return {"version": 1, "stages": {}}

    def require(self, stage: str):
        done = self.manifest()["stages"]
        for up in DEPENDS[stage]:
            if up == "synth" and self.cfg.get("world_dir"):
                if not (self.world / "tiles.json").exists():
                    raise DependencyError(stage, "synth")
                continue
            if up not in done:
                raise DependencyError(stage, up)
            for rel in done[up]["outputs"]:
                if not (self.dir / rel).exists():
                    raise DependencyError(stage, up)

    def record(self, stage: str, outputs, seconds: float):
        m = self.manifest()
        done = m["stages"]
        inputs = {up: hashlib.sha256(canonical_json(done[up]["outputs"]).encode()).hexdigest()
                  for up in DEPENDS[stage] if up in done}
        outs = {}
        for p in sorted({Path(p) for p in outputs}):
            outs[p.relative_to(self.dir).as_posix()] = sha256_file(p)
        done[stage] = {
            "config_hash": config_hash(self.cfg),
            "seed": self.cfg["seed"],
            "inputs": inputs,
            "outputs": outs,
            "seconds": round(seconds, 3),
            "package_version": _package_version(),
        }
        m["stages"] = dict(sorted(done.items()))
        write_json(self.dir / MANIFEST, m)
        return done[stage]

    # shared inputs

    def tiles(self) -> list[dict]:
        meta = json.loads((self.world / "tiles.json").read_text())
        out = []
        for t in meta["tiles"]:
            t = dict(t)
            t["geo"] = GeoTransform.from_gdal(t["transform"])
            out.append(t)
        return out

    def countries(self) -> dict:
        meta = json.loads((self.world / "tiles.json").read_text())
        return {int(k): v for k, v in meta.get("countries", {}).items()}

    def mask(self, tile_id: str, kind: str) -> RasterGrid:
        return read_grid(self.world / "masks" / f"{tile_id}_{kind}.cgrd")


def farm_tile(farm, tiles) -> dict:
    x0, y0, x1, y1 = farm.boundary.bounds()
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    for t in tiles:
        c, r = t["geo"].index(cx, cy)
        if 0 <= c < t["width"] and 0 <= r < t["height"]:
            return t
    raise EmptyDataError(f"farm {farm.farm_id} lies outside every tile")


def polygon_cells(poly: Polygon, t: dict) -> list[ShadeTargetCell]:
    x0, y0, x1, y1 = poly.bounds()
    g = t["geo"]
    c0, r0 = g.index(x0, y1)
    c1, r1 = g.index(x1, y0)
    rr, cc = np.mgrid[max(int(r0), 0) : min(int(r1) + 1, t["height"]), max(int(c0), 0) : min(int(c1) + 1, t["width"])]
    rr, cc = rr.ravel(), cc.ravel()
    x, y = g.center_xy(cc, rr)
    keep = poly.contains(x, y)
    return [ShadeTargetCell(int(c), int(r), 0.0, 0) for c, r in zip(cc[keep], rr[keep])]


# ---------------------------------------------------------------- stages


def stage_synth(run: Run) -> list[Path]:
    w = dict(run.cfg["world"])
    w["seed"] = run.cfg["seed"]
    w["beta"] = tuple(w["beta"])
    bundle = generate_world(WorldSpec(**w), run.dir / "world")
    return bundle.files


def stage_ingest(run: Run) -> list[Path]:
    c = run.cfg["ingest"]
    cat = read_catalog(run.world / "catalog.csv")
    farms = read_farms(run.world / "farms.csv")
    tiles = run.tiles()
    clouds: dict[str, RasterGrid] = {}

    def cloud(rec):
        if rec.scene_id not in clouds:
            clouds[rec.scene_id] = read_grid(rec.cloud_mask_path)
        return clouds[rec.scene_id]

    training = {}
    for f in farms:
        t = farm_tile(f, tiles)
        cells = polygon_cells(f.boundary, t)
        reject = lambda s, cells=cells: farm_cloud_fraction(cloud(s), cells) > c["max_farm_cloud_fraction"]
        sel = select_training_scenes(cat, TRAINING_WINDOWS, f.gt_date, c["n_precull"], c["max_days"],
                                     c["n_keep_train"], tile_ids=[t["tile_id"]], reject=reject)
        training[f.farm_id] = {"tile_id": t["tile_id"], "scenes": [s.scene_id for s in sel]}
    window = SelectionWindow.parse(*c["map_window"])
    mapping = {t["tile_id"]: [s.scene_id for s in select_map_scenes(cat, t["tile_id"], window, c["n_keep_map"])]
               for t in tiles}
    measured = []
    for s in cat:
        g = cloud(s)
        frac = float(np.mean(~g.valid(0) | (g.data[0] != 0)))
        measured.append({"scene_id": s.scene_id, "catalog_pct": s.cloud_pct, "measured_pct": 100.0 * frac})
    out = run.stage_dir("ingest")
    return [
        write_json(out / "selection.json", {"training": training, "map": mapping}),
        write_csv(out / "cloud_check.csv", ("scene_id", "catalog_pct", "measured_pct"),
                  [(m["scene_id"], m["catalog_pct"], m["measured_pct"]) for m in measured]),
    ]


def stage_groundtruth(run: Run) -> list[Path]:
    c = run.cfg["groundtruth"]
    farms = read_farms(run.world / "farms.csv")
    tiles = run.tiles()
    mono = defaultdict(list)
    mono_path = run.world / "monoculture.csv"
    if mono_path.exists():
        with open(mono_path, newline="") as fh:
            for row in csv.DictReader(fh):
                mono[row["farm_id"]].append(Polygon.from_wkt(row["boundary_wkt"]))
    rows, heights = [], []
    for f in farms:
        t = farm_tile(f, tiles)
        chm = canopy_height(read_grid(f.dsm_path), read_grid(f.dtm_path))
        cells = cell_shade_fraction(shade_mask(chm, c["threshold_m"]), f.boundary, t["geo"], t["width"], t["height"])
        rows += [(f.farm_id, t["tile_id"], x.col, x.row, x.fraction, x.n_drone_pixels) for x in cells]
        if f.farm_id in mono:
            heights.append(monoculture_heights(chm, mono[f.farm_id]))
    out = run.stage_dir("groundtruth")
    files = [write_csv(out / "targets.csv", ("farm_id", "tile_id", "col", "row", "fraction", "n_drone_pixels"), rows)]
    if heights:
        cal = calibrate_heights(np.concatenate(heights), c["quantile"], c["threshold_m"])
        files.append(write_json(out / "calibration.json", asdict(cal)))
    return files


def _read_targets(path) -> dict[str, list[ShadeTargetCell]]:
    cells = defaultdict(list)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            cells[r["farm_id"]].append(ShadeTargetCell(int(r["col"]), int(r["row"]), float(r["fraction"]),
                                                       int(r["n_drone_pixels"])))
    return dict(cells)


def _catalog_by_id(run: Run) -> dict:
    return {s.scene_id: s for s in read_catalog(run.world / "catalog.csv")}


def stage_train_shade(run: Run) -> list[Path]:
    c = run.cfg["shade"]
    sel = json.loads((run.dir / "ingest" / "selection.json").read_text())["training"]
    targets = _read_targets(run.dir / "groundtruth" / "targets.csv")
    cat = _catalog_by_id(run)
    parts = []
    farms = sorted((sel[f]["tile_id"], f) for f in sel if targets.get(f))
    cache, cache_tile = {}, None
    for tile_id, farm_id in farms:
        if tile_id != cache_tile:
            cache, cache_tile = {}, tile_id
        scenes = []
        for sid in sel[farm_id]["scenes"]:
            if sid not in cache:
                cache[sid] = load_scene(cat[sid])
            scenes.append(cache[sid])
        parts.append(farm_rows(farm_id, targets[farm_id], scenes, tile_id))
    cache.clear()
    rows = TrainingRows.concat(parts)
    if rows.targets.size == 0:
        raise EmptyDataError("no training rows: every farm lacks a usable scene")
    split = make_split({f: len(v) for f, v in sorted(targets.items())}, seed=run.cfg["seed"], k=c["folds"],
                       test_fraction=c["test_fraction"])
    grid = [GbrConfig(c["n_estimators"], float(lr), int(d), int(leaf), c["huber_delta"], "huber",
                      c["feature_subsample"], run.cfg["seed"])
            for lr in c["learning_rate"] for d in c["max_depth"] for leaf in c["min_samples_leaf"]]
    res = train_shade_model(rows, split, grid)
    out = run.stage_dir("train-shade")
    cv = None
    if res.cv is not None:
        cv = [{"config": asdict(k), "mean_mae": v, "fold_mae": res.cv.fold_scores[k]} for k, v in res.cv.scores.items()]
    return [
        write_cfmx(out / "features.cfmx", rows.features),
        write_csv(out / "rows.csv", ("farm_id", "scene_id", "target"),
                  zip(rows.farm_ids, rows.scene_ids, rows.targets)),
        write_json(out / "split.json", split.to_json()),
        save_model(out / "model.cgbm", res.model),
        write_json(out / "eval.json", {"test": res.report.to_json(), "best": asdict(res.model.config), "cv": cv,
                                       "n_rows": int(rows.targets.size)}),
    ]


def stage_map_shade(run: Run) -> list[Path]:
    model = load_model(run.dir / "train-shade" / "model.cgbm")
    sel = json.loads((run.dir / "ingest" / "selection.json").read_text())["map"]
    cat = _catalog_by_id(run)
    out = run.stage_dir("map-shade")
    files, maps, countries = [], [], []
    for t in run.tiles():
        tid = t["tile_id"]
        scenes = [load_scene(cat[s]) for s in sel.get(tid, [])]
        sm = predict_map(model, scenes, run.mask(tid, "cocoa"))
        del scenes
        files.append(write_grid(out / f"{tid}_shade.cgrd", sm.grid))
        files.append(write_grid(out / f"{tid}_nvalid.cgrd", sm.n_valid_scenes))
        maps.append(sm.grid)
        countries.append(run.mask(tid, "country"))
    shade, country = mosaic(maps), mosaic(countries)
    names = run.countries()
    zs = {names.get(k, str(k)): {"n": s.n_valid, "mean": s.mean, "sd": s.sd, "counts": s.counts}
          for k, s in zonal_stats(shade, country).items()}
    th = run.cfg["carbon"]["thresholds"]
    files.append(write_json(out / "zonal.json", zs))
    files.append(write_csv(out / "exceedance.csv", ("threshold", "count", "area_ha", "fraction"),
                           [(e.threshold, e.count, e.area_ha, e.fraction) for e in cover_exceedance(shade, th)]))
    return files


def _net_config(run: Run) -> NetConfig:
    a = run.cfg["agbd"]
    return NetConfig(tuple(a["depths"]), a["learning_rate"], a["batch_size"], a["ensemble"], a["patience"],
                     a["max_epochs"], run.cfg["seed"], a["dtype"])


def _height_tiles(run: Run) -> dict:
    return {t["tile_id"]: read_grid(run.world / "heights" / f"{t['tile_id']}_chm.cgrd") for t in run.tiles()}


def stage_train_agbd(run: Run) -> list[Path]:
    fps = filter_gedi(read_footprints(run.world / "gedi.csv"))
    samples = build_samples(_height_tiles(run), fps)
    X, y, w = samples.subset("train")
    Xv, yv, _ = samples.subset("val")
    Xt, yt, _ = samples.subset("test")
    if y.size == 0 or yv.size == 0:
        raise EmptyDataError(f"biomass samples: {y.size} train, {yv.size} validation")
    ens = net_train(X, y, w, Xv, yv, _net_config(run))
    out = run.stage_dir("train-agbd")
    metrics = {"n": {"train": int(y.size), "val": int(yv.size), "test": int(yt.size)}}
    if yt.size:
        mu, _ = ensemble_predict(ens, Xt)
        metrics["test"] = evaluate(mu, yt, bin_width=15.0, upper=None).to_json()
    hist = [{"best_epoch": h.best_epoch, "stopped_early": h.stopped_early, "train": [float(v) for v in h.train_loss],
             "val": [float(v) for v in h.val_loss]} for h in ens.histories]
    return [
        save_ensemble(out / "ensemble.cnet", ens),
        write_json(out / "metrics.json", metrics),
        write_json(out / "history.json", hist),
    ]


def stage_map_agbd(run: Run) -> list[Path]:
    ens = load_ensemble(run.dir / "train-agbd" / "ensemble.cnet")
    heights = _height_tiles(run)
    out = run.stage_dir("map-agbd")
    files, mus = [], []
    for tid in sorted(heights):
        mu, sd = predict_agbd_map(ens, heights[tid])
        files.append(write_grid(out / f"{tid}_agbd.cgrd", mu))
        files.append(write_grid(out / f"{tid}_sigma.cgrd", sd))
        mus.append(mu)
    fps = filter_gedi(read_footprints(run.world / "gedi.csv"))
    test = []
    for f in fps:
        for tid, g in heights.items():
            c, r = g.transform.index(f.x, f.y)
            if 0 <= c < g.width and 0 <= r < g.height:
                if make_stripe_split(tid, g.width).role_of(int(c)) == "test":
                    test.append(f)
                break
    if test:
        rep = evaluate_footprints(mosaic(mus), test)
        files.append(write_json(out / "compare.json", rep))
    return files


def evaluate_footprints(agbd_map: RasterGrid, footprints) -> dict:
    from .agbdnet import compare_to_reference

    try:
        return compare_to_reference(agbd_map, footprints).to_json()
    except EmptyDataError as e:
        return {"error": str(e)}


def _pairs(run: Run):
    covers, agbs, ctry, cell_ha = [], [], [], None
    for t in run.tiles():
        tid = t["tile_id"]
        shade = read_grid(run.dir / "map-shade" / f"{tid}_shade.cgrd")
        agbd = read_grid(run.dir / "map-agbd" / f"{tid}_agbd.cgrd")
        p = pair_maps(shade, agbd, run.mask(tid, "cocoa"), run.mask(tid, "country"))
        covers.append(p.cover)
        agbs.append(p.agb)
        ctry.append(p.country)
        cell_ha = p.cell_area_ha
    return np.concatenate(covers), np.concatenate(agbs), np.concatenate(ctry), cell_ha


def _regression_config(run: Run) -> RegressionConfig:
    c = run.cfg["carbon"]
    return RegressionConfig(c["subsample"], c["max_cover"], c["chains"], c["iters"], c["warmup"], run.cfg["seed"],
                            c["min_pairs"], c["rhat_max"], c["ess_min"], c["max_retries"])


def stage_fit_carbon(run: Run) -> list[Path]:
    cover, agb, country, cell_ha = _pairs(run)
    post = fit_regression(cover, agb, _regression_config(run))
    out = run.stage_dir("fit-carbon")
    rows = []
    for ch in range(post.draws.shape[0]):
        for it in range(post.draws.shape[1]):
            rows.append((ch, it, int(post.warmup[it]), *post.draws[ch, it]))
    diag = {"summary": post.summary(), "attempts": post.attempts, "n_pairs": post.n_pairs,
            "acceptance": post.acceptance, "ols": post.ols, "cell_area_ha": cell_ha, "n_cocoa_pixels": int(cover.size)}
    return [
        write_csv(out / "pairs.csv", ("cover_pct", "agb_t", "country"), zip(cover, agb, country)),
        write_csv(out / "draws.csv", ("chain", "iter", "warmup", "beta0", "beta1", "beta2", "sigma"), rows),
        write_json(out / "diagnostics.json", diag),
    ]


def _read_pairs(path):
    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return a[:, 0], a[:, 1], a[:, 2].astype(np.int64)


def _read_draws(path) -> np.ndarray:
    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return a[a[:, 2] == 0][:, 3:]


def scenario_thresholds(cfg: dict) -> list[float]:
    c = cfg["carbon"]
    if c["threshold"] is not None:
        return [float(c["threshold"])]
    return [float(t) for t in c["thresholds"]]


def stage_scenario(run: Run) -> list[Path]:
    c = run.cfg["carbon"]
    d = run.dir / "fit-carbon"
    cover, agb, country = _read_pairs(d / "pairs.csv")
    diag = json.loads((d / "diagnostics.json").read_text())
    coefs = draw_coefficients(_read_draws(d / "draws.csv"), c["n_draws"], run.cfg["seed"])
    names = run.countries()
    emis = EmissionConfig.load(c["emissions"])
    rows, per_country, offsets = [], [], []
    for t in scenario_thresholds(run.cfg):
        r = scenario(coefs, cover, agb, t, diag["cell_area_ha"], c["years"], country)
        rows.append((t, r.current_biomass, CARBON_FRACTION * r.current_biomass, r.added_carbon_mean, r.hdi_low,
                     r.hdi_high, r.co2e, r.annual_rate_per_ha, r.annual_total))
        annual = {}
        for cid, sub in sorted(r.per_country.items()):
            name = names.get(cid, str(cid))
            per_country.append((t, name, sub.current_biomass, sub.added_carbon_mean, sub.hdi_low, sub.hdi_high,
                                sub.co2e, sub.annual_rate_per_ha, sub.annual_total))
            if name in {e.name for e in emis.countries}:
                annual[name] = sub.annual_total
        for sluc in (False, True):
            o = offset_fraction(annual if annual else r.annual_total, emis, include_sluc=sluc)
            offsets.append({"threshold": t, "include_sluc": sluc, "per_country_pct": o.per_country,
                            "combined_pct": o.combined, "national_pct": _finite(o.national)})
    out = run.stage_dir("scenario")
    return [
        write_csv(out / "scenario.csv", ("threshold", "current_agb_t", "current_c_t", "added_c_mean_t", "hdi_low_t",
                                         "hdi_high_t", "co2e_t", "annual_co2e_per_ha", "annual_co2e_total"), rows),
        write_csv(out / "per_country.csv", ("threshold", "country", "current_agb_t", "added_c_mean_t", "hdi_low_t",
                                            "hdi_high_t", "co2e_t", "annual_co2e_per_ha", "annual_co2e_total"),
                  per_country),
        write_json(out / "offsets.json", offsets),
    ]


def stage_zones(run: Run) -> list[Path]:
    c = run.cfg["zones"]
    seed = run.cfg["seed"]
    clim = {v: read_grid(run.world / "climate" / f"{v}.cgrd") for v in CLIM_VARS}
    vals, valid = bioclim_grids(clim)
    g = clim["tmean"]
    flat_valid = valid.ravel()
    cell_ids = np.nonzero(flat_valid)[0]
    pos = np.full(flat_valid.size, -1, dtype=np.int64)
    pos[cell_ids] = np.arange(cell_ids.size)
    occ = []
    with open(run.world / "occurrences.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            occ.append((float(r["x"]), float(r["y"])))
    xs, ys = np.array(occ).T if occ else (np.zeros(0), np.zeros(0))
    col, row = g.transform.index(xs, ys)
    inside = (col >= 0) & (col < g.width) & (row >= 0) & (row < g.height)
    flat = np.where(inside, row * g.width + col, 0)
    ok = inside & flat_valid[flat]
    occ_cell = pos[flat[ok]]
    X = vals.reshape(-1, vals.shape[-1])[cell_ids]
    occ_X = X[occ_cell]
    varying = [i for i in range(X.shape[1]) if np.ptp(occ_X[:, i]) > 0]
    keep = [varying[i] for i in vif_select(occ_X[:, varying], c["vif_threshold"])]
    clusters = cluster_types(occ_X[:, keep], c["k"], c["trees"], c["n_forests"], seed)
    rng = np.random.default_rng(seed)
    bg = rng.choice(cell_ids.size, size=min(occ_cell.size, cell_ids.size), replace=False)
    zc = ZoneConfig(c["repeats"], c["forests_per_repeat"], c["trees"], c["train_fraction"], c["margin"], seed)
    res = classify_zones(occ_X[:, keep], clusters.labels, X[bg][:, keep], X[:, keep], occ_cell, zc)
    codes = np.full(flat_valid.size, ZONE_NODATA, dtype=np.float32)
    codes[cell_ids] = res.codes
    zones = RasterGrid(codes.reshape(1, g.height, g.width), g.transform, ZONE_NODATA, g.crs_label)
    out = run.stage_dir("zones")
    v = vif(occ_X[:, keep])
    counts = {str(k): int(n) for k, n in zip(*np.unique(res.codes, return_counts=True))}
    return [
        write_grid(out / "zones.cgrd", zones),
        write_json(out / "legend.json", {"legend": res.legend(), "accuracies": res.accuracies,
                                         "variables": [BIO_NAMES[i] for i in keep], "vif": v, "cell_counts": counts}),
        write_csv(out / "occurrences.csv", ("cell", "type", *[BIO_NAMES[i] for i in keep]),
                  [(int(cid), int(lab), *x) for cid, lab, x in zip(occ_cell, clusters.labels, occ_X[:, keep])]),
    ]


def stage_landuse(run: Run) -> list[Path]:
    agbds, cocoas, tmfs = [], [], []
    for t in run.tiles():
        tid = t["tile_id"]
        a = read_grid(run.dir / "map-agbd" / f"{tid}_agbd.cgrd")
        agbds.append(a)
        cocoas.append(categorical_to_grid(run.mask(tid, "cocoa"), a, classes=(1, 0)))
        tmfs.append(categorical_to_grid(run.mask(tid, "tmf"), a, classes=(1, 2, 0)))
    st = landuse_stats(mosaic(agbds), mosaic(cocoas), mosaic(tmfs))
    out = run.stage_dir("landuse")
    return [write_csv(out / "landuse.csv", ("class", "n_pixels", "area_ha", "density_mean_tC_ha", "density_sd_tC_ha",
                                            "total_tC", "ci95_tC"),
                      [(s.name, s.n, s.area_ha, s.density_mean, s.density_sd, s.total_c, s.ci95) for s in st.values()])]


def stage_report(run: Run) -> list[Path]:
    out = run.stage_dir("report")
    files = []
    shade = mosaic([read_grid(run.dir / "map-shade" / f"{t['tile_id']}_shade.cgrd") for t in run.tiles()])
    nb = run.cfg["report"]["histogram_bins"]
    st = grid_stats(shade, 0, bins=np.linspace(0.0, 100.0, nb + 1))
    edges = np.linspace(0.0, 100.0, nb + 1)
    counts = st.counts if st.counts.size == nb else np.zeros(nb, dtype=np.int64)
    files.append(write_csv(out / "shade_histogram.csv", ("bin_low", "bin_high", "count"),
                           zip(edges[:-1], edges[1:], counts)))
    files.append(render.write_png(out / "shade_histogram.png", render.histogram_image(counts)))
    files.append(render.write_png(out / "shade_map.png", render.heatmap(shade.data[0], shade.valid(0), 0.0, 100.0)))

    with open(run.dir / "scenario" / "scenario.csv", newline="") as fh:
        sc = list(csv.DictReader(fh))
    current = float(sc[0]["current_c_t"]) if sc else 0.0
    values = [current] + [current + float(r["added_c_mean_t"]) for r in sc]
    labels = ["NOW"] + [f"{float(r['threshold']):g}" for r in sc]
    notes = [""] + [f"+{100.0 * float(r['added_c_mean_t']) / current:.1f}%" if current > 0 else "" for r in sc]
    colors = [render.BAR_CURRENT] + [render.BAR] * len(sc)
    files.append(render.write_png(out / "scenario.png", render.bar_chart(values, labels, notes, colors)))

    with open(run.dir / "landuse" / "landuse.csv", newline="") as fh:
        lu = list(csv.DictReader(fh))
    files.append(write_csv(out / "landuse_panels.csv", ("class", "area_ha", "density_mean_tC_ha", "total_tC", "ci95_tC"),
                           [(r["class"], r["area_ha"], r["density_mean_tC_ha"], r["total_tC"], r["ci95_tC"]) for r in lu]))

    def load(rel):
        p = run.dir / rel
        return json.loads(p.read_text()) if p.exists() else None

    metrics = {
        "shade": {"test": (load("train-shade/eval.json") or {}).get("test"), "map_mean": _finite(st.mean),
                  "map_n": st.n_valid},
        "agbd": {"test": (load("train-agbd/metrics.json") or {}).get("test"), "reference": load("map-agbd/compare.json")},
        "regression": (load("fit-carbon/diagnostics.json") or {}).get("summary"),
        "scenario": [{k: float(v) for k, v in r.items()} for r in sc],
        "offsets": load("scenario/offsets.json"),
        "landuse": lu,
        "calibration": load("groundtruth/calibration.json"),
        "zones": load("zones/legend.json"),
    }
    files.append(write_json(out / "metrics.json", metrics))
    return files


STAGE_FUNCS = {
    "synth": stage_synth, "ingest": stage_ingest, "groundtruth": stage_groundtruth,
    "train-shade": stage_train_shade, "map-shade": stage_map_shade, "train-agbd": stage_train_agbd,
    "map-agbd": stage_map_agbd, "fit-carbon": stage_fit_carbon, "scenario": stage_scenario,
    "zones": stage_zones, "landuse": stage_landuse, "report": stage_report,
}


def run_stage(run: Run, stage: str) -> dict:
    if stage not in STAGE_FUNCS:
        raise ValueError(f"unknown stage {stage!r}")
    run.require(stage)
    if run.cfg.get("jobs"):
        os.environ["CANOPY_LEDGER_JOBS"] = str(int(run.cfg["jobs"]))
    log.info("stage %s", stage)
    t0 = time.perf_counter()
    outputs = STAGE_FUNCS[stage](run)
    entry = run.record(stage, outputs, time.perf_counter() - t0)
    log.info("stage %s done in %.1f s (%d outputs)", stage, entry["seconds"], len(entry["outputs"]))
    return entry


def run_all(run: Run, stages=STAGES) -> dict:
    for s in stages:
        if s == "synth" and run.cfg.get("world_dir"):
            continue
        run_stage(run, s)
    return run.manifest()


def output_digests(manifest: dict) -> dict:
    """Stage -> {path: digest}, the reproducible part of a manifest."""
    return {s: e["outputs"] for s, e in manifest["stages"].items()}
