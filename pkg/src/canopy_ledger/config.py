"""Run configuration: nested JSON with a fixed schema and dot-path overrides.

The defaults below double as the schema. A key absent from the defaults is
an error, as is a value whose type cannot stand in for the default's.
Keys whose default is ``None`` accept any JSON value.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ConfigError

CONFIG_VERSION = 1

DEFAULTS: dict = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "jobs": None,
    "world_dir": None,
    "world": {
        "tiles_x": 2, "tiles_y": 2, "tile_size": 600, "n_farms": 40,
        "shade_mean": 0.13, "shade_sd": 0.09, "beta": [20.0, 8.0, -0.05], "agbd_noise": 10.0,
        "cloud_fraction": 0.15, "band_noise": 0.004, "n_footprints": 6000, "n_occurrences": 300,
    },
    "ingest": {
        "n_precull": 20, "max_days": 120, "n_keep_train": 3, "n_keep_map": 10,
        "max_farm_cloud_fraction": 0.0, "map_window": ["2022-04-01", "2022-11-30"],
    },
    "groundtruth": {"threshold_m": 8.0, "quantile": 0.997},
    "shade": {
        "n_estimators": 150, "learning_rate": [0.1], "max_depth": [4, 6], "min_samples_leaf": [20],
        "huber_delta": 0.1, "feature_subsample": 0.2, "folds": 5, "test_fraction": 1 / 3,
    },
    "agbd": {
        "depths": [8, 8, 8], "learning_rate": 1e-3, "batch_size": 64, "ensemble": 3,
        "patience": 5, "max_epochs": 30, "dtype": "float32",
    },
    "carbon": {
        "subsample": 0.1, "max_cover": 40.0, "chains": 4, "iters": 2000, "warmup": 1000,
        "min_pairs": 1000, "rhat_max": 1.01, "ess_min": 400.0, "max_retries": 3,
        "threshold": None, "thresholds": [15.0, 20.0, 30.0, 40.0], "n_draws": 100,
        "years": 30.0, "emissions": None,
    },
    "zones": {
        "k": 5, "trees": 100, "n_forests": 1, "repeats": 5, "forests_per_repeat": 5,
        "train_fraction": 0.8, "margin": 0.1, "vif_threshold": 10.0,
    },
    "report": {"histogram_bins": 100},
}


def _compatible(default, value) -> bool:
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float)) and not isinstance(value, bool) and (
            isinstance(default, float) or float(value).is_integer())
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def _merge(base: dict, new: dict, schema: dict, path: str = ""):
    for k, v in new.items():
        where = f"{path}{k}"
        if k not in schema:
            raise ConfigError(f"unknown config key '{where}'")
        d = schema[k]
        if isinstance(d, dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            _merge(base[k], v, d, where + ".")
        else:
            if not _compatible(d, v):
                raise ConfigError(f"config key '{where}' expects {type(d).__name__}, got {v!r}")
            base[k] = int(v) if isinstance(d, int) and not isinstance(d, bool) else v


def validate(cfg: dict) -> dict:
    """Defaults overlaid with ``cfg``; raises :class:`ConfigError` on schema violations."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version} unsupported (expected {CONFIG_VERSION})")
    out = copy.deepcopy(DEFAULTS)
    _merge(out, cfg, DEFAULTS)
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    return validate(data)


def parse_value(text: str, default):
    """Command-line text to a JSON value; lists may also be given comma-separated."""
    try:
        v = json.loads(text)
    except json.JSONDecodeError:
        v = text
    if isinstance(default, list) and not isinstance(v, list):
        parts = [p for p in str(text).split(",") if p != ""]
        v = [json.loads(p) if _is_json(p) else p for p in parts]
    return v


def _is_json(s: str) -> bool:
    try:
        json.loads(s)
        return True
    except json.JSONDecodeError:
        return False


def apply_override(cfg: dict, dotted: str, text: str) -> dict:
    keys = dotted.split(".")
    node, schema = cfg, DEFAULTS
    for k in keys[:-1]:
        if k not in schema or not isinstance(schema[k], dict):
            raise ConfigError(f"unknown config key '{dotted}'")
        node, schema = node[k], schema[k]
    leaf = keys[-1]
    if leaf not in schema or isinstance(schema[leaf], dict):
        raise ConfigError(f"unknown config key '{dotted}'")
    patch: dict = {}
    cur = patch
    for k in keys[:-1]:
        cur[k] = {}
        cur = cur[k]
    cur[leaf] = parse_value(text, schema[leaf])
    _merge(cfg, patch, DEFAULTS)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
