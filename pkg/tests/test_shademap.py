import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canopy_ledger.boosting.gbr import GbrConfig, GbrModel
from canopy_ledger.boosting.tree import Tree
from canopy_ledger.errors import EmptyDataError
from canopy_ledger.features import N_FEATURES, FeatureMatrix
from canopy_ledger.ingest import BAND_FILES, LoadedScene, SceneRecord
from canopy_ledger.raster import GeoTransform, RasterGrid, grid_stats
from canopy_ledger.shademap import (
    TrainingRows, cover_exceedance, evaluate, make_split, predict_map, train_shade_model, zonal_stats,
)

T = GeoTransform(0, 0, 10, -10)


def test_split_three_equal_farms():
    s = make_split({"a": 10, "b": 10, "c": 10}, seed=1)
    assert len(s.farms("test")) == 1 and len(s.farms("train")) == 2


def test_split_deterministic_and_order_free():
    farms = {f"f{i}": 10 + i for i in range(30)}
    a = make_split(farms, seed=5)
    b = make_split(dict(reversed(list(farms.items()))), seed=5)
    assert a == b


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_split_paper_scale_proportion(seed):
    r = np.random.default_rng(seed)
    farms = {f"f{i:04d}": int(v) for i, v in enumerate(r.integers(50, 400, 827))}
    s = make_split(farms, seed=seed)
    n_test = len(s.farms("test"))
    assert abs(n_test / 827 - 259 / 827) <= 0.1 * 259 / 827
    px = sum(farms[f] for f in s.farms("test"))
    assert px >= sum(farms.values()) / 3
    assert set(s.folds.values()) == set(range(5))


def test_evaluate_cases():
    r = evaluate([1, 2], [1, 2])
    assert (r.mae, r.rmse, r.bias) == (0, 0, 0)
    r = evaluate([11, 9], [10, 10])
    assert (r.mae, r.rmse, r.bias) == (1, 1, 0)
    r = evaluate([13, 14], [10, 10])
    assert r.mae == 3.5 and r.rmse == pytest.approx(math.sqrt(12.5)) and r.rmse > r.mae
    with pytest.raises(EmptyDataError):
        evaluate([], [])


def test_evaluate_bins():
    r = evaluate([0, 6, 100, 52], [1, 5, 100, 50])
    los = [b["lo"] for b in r.binned_residuals]
    assert los == [0, 5, 50, 95]
    assert r.binned_residuals[-1]["n"] == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
def test_mae_le_rmse(errs):
    r = evaluate(np.array(errs) + 50, np.full(len(errs), 50.0))
    assert r.mae <= r.rmse + 1e-12 and abs(r.bias) <= r.mae + 1e-12


def step_model():
    """Predicts 0.2 when feature 0 <= 0.5, else 0.6."""
    tree = Tree(np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]), np.array([2, -1, -1]),
                np.array([[0.0], [0.2], [0.6]]))
    return GbrModel(0.0, [tree], 1.0, 0.1, "", 1, N_FEATURES, GbrConfig(n_estimators=1))


def scene(i, value, cloud=None, shape=(8, 8)):
    b = np.full((12, *shape), value, np.float32)
    c = np.zeros(shape, np.float32) if cloud is None else cloud
    rec = SceneRecord(f"s{i}", "T", dt.date(2022, 5, 1), 0.0, tuple(BAND_FILES), "c")
    return LoadedScene(rec, RasterGrid(b, T), RasterGrid(c[None], T))


def test_map_constant_over_scenes():
    cocoa = RasterGrid(np.ones((1, 8, 8), np.float32), T)
    m = predict_map(step_model(), [scene(i, 0.9) for i in range(10)], cocoa)
    assert np.allclose(m.grid.data, 60.0)
    assert np.all(m.n_valid_scenes.data == 10)


def test_map_partial_validity_means_over_valid_scenes():
    cocoa = RasterGrid(np.ones((1, 8, 8), np.float32), T)
    cloudy = np.ones((8, 8), np.float32)
    scenes = [scene(i, 0.9) for i in range(2)] + [scene(2, 0.1)] + [scene(i, 0.9, cloudy) for i in range(3, 10)]
    m = predict_map(step_model(), scenes, cocoa)
    assert np.allclose(m.grid.data, 100 * (0.6 + 0.6 + 0.2) / 3, atol=1e-4)
    assert np.all(m.n_valid_scenes.data == 3)


def test_map_cocoa_mask_and_no_scenes():
    mask = np.ones((1, 8, 8), np.float32)
    mask[0, 3, 3] = 0
    m = predict_map(step_model(), [scene(0, 0.9)], RasterGrid(mask, T))
    assert not m.grid.valid()[3, 3] and m.grid.valid()[3, 4]
    empty = predict_map(step_model(), [], RasterGrid(mask, T))
    assert not empty.grid.valid().any()


def test_zonal_stats_cases(rng):
    v = rng.uniform(0, 100, (1, 6, 6)).astype(np.float32)
    g = RasterGrid(v, T)
    one = zonal_stats(g, RasterGrid(np.ones((1, 6, 6), np.float32), T))
    ref = grid_stats(g)
    assert one[1].mean == ref.mean and one[1].sd == ref.sd
    d = np.full((1, 6, 6), 10.0, np.float32)
    d[0, :, 3:] = 20
    z = np.ones((1, 6, 6), np.float32)
    z[0, :, 3:] = 2
    st_ = zonal_stats(RasterGrid(d, T), RasterGrid(z, T))
    assert st_[1].mean == 10 and st_[2].mean == 20
    z[0, 0, 0] = 7
    d[0, 0, 0] = -9999
    assert 7 not in zonal_stats(RasterGrid(d, T), RasterGrid(z, T))


def test_exceedance(rng):
    g = RasterGrid(np.array([[[10, 40]]], np.float32), T)
    e0, e30 = cover_exceedance(g, [0, 30])
    assert e0.fraction == 1.0 and e30.fraction == 0.5 and e30.area_ha == 0.01
    u = rng.uniform(0, 100, 5000).astype(np.float32)
    grid = RasterGrid(u.reshape(1, 50, 100), T)
    for t, ex in zip([15, 20, 30, 40], cover_exceedance(grid, [15, 20, 30, 40])):
        assert ex.fraction == pytest.approx(np.mean(u >= t), abs=1 / u.size)


def test_train_shade_model_independent_of_row_order(rng):
    n_farm, per = 6, 40
    X = rng.uniform(0, 1, (n_farm * per, N_FEATURES)).astype(np.float32)
    y = np.clip(X[:, 0] * 0.8, 0, 1)
    farms = np.repeat([f"f{i}" for i in range(n_farm)], per)
    split = make_split({f"f{i}": per for i in range(n_farm)}, seed=0)
    grid = [GbrConfig(n_estimators=10, learning_rate=0.2, max_depth=2, min_samples_leaf=3)]

    def rows(idx):
        return TrainingRows(FeatureMatrix(X[idx], ["t"] * len(idx), idx, idx), y[idx], farms[idx],
                            np.full(len(idx), "s"))

    a = train_shade_model(rows(np.arange(len(y))), split, grid)
    b = train_shade_model(rows(rng.permutation(len(y))), split, grid)
    np.testing.assert_array_equal(a.model.trees[-1].threshold, b.model.trees[-1].threshold)
    assert a.report.mae == pytest.approx(b.report.mae, abs=1e-12)
