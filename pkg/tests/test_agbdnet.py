import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canopy_ledger.agbdnet import (
    GediFootprint, NetConfig, combine, compare_to_reference, compute_bin_weights, ensemble_predict,
    extract_patches, filter_gedi, init_net, loss_and_grad, make_stripe_split, net_forward, net_train,
    predict_agbd_map, read_footprints, write_footprints,
)
from canopy_ledger.agbdnet.gedi import agbd_bin
from canopy_ledger.agbdnet.mapping import output_shape
from canopy_ledger.agbdnet.net import forward
from canopy_ledger.agbdnet.train import decode_ensemble, encode_ensemble
from canopy_ledger.errors import EmptyDataError, ShapeError
from canopy_ledger.raster import GeoTransform, RasterGrid
from oracles import finite_difference_check

D = dt.date(2022, 6, 1)


def fp(i, q=True, beam="power", date=D, agbd=50.0, x=5.0, y=-5.0):
    return GediFootprint(f"g{i}", date, -2.0, 6.0, x, y, agbd, q, beam)


def test_filter_rules():
    keep = filter_gedi([fp(0), fp(1, beam="coverage"), fp(2, q=False), fp(3, date=dt.date(2021, 1, 1))])
    assert [f.id for f in keep] == ["g0"]
    assert len(filter_gedi([fp(i) for i in range(2100)])) == 2100


@settings(max_examples=20, deadline=None)
@given(st.permutations(list(range(12))))
def test_filter_order_invariant(perm):
    fps = [fp(i, q=i % 3 != 0, beam=("power", "coverage")[i % 2]) for i in range(12)]
    a = {f.id for f in filter_gedi(fps)}
    assert {f.id for f in filter_gedi([fps[i] for i in perm])} == a


def test_footprint_csv_roundtrip(tmp_path):
    fps = [fp(i, q=bool(i % 2), agbd=1.5 * i) for i in range(4)]
    write_footprints(tmp_path / "g.csv", fps)
    assert read_footprints(tmp_path / "g.csv") == fps


def test_stripes():
    s = make_stripe_split("T00", 10000, pixel_size=10.0)
    widths = np.diff(s.boundaries) * 10.0
    assert np.all(widths == 20000.0)
    cols = np.arange(10000)
    k = s.stripe_of(cols)
    assert np.all(np.bincount(k) == 2000)
    assert sorted(s.roles) == ["test", "train", "train", "train", "val"]
    assert make_stripe_split("T00", 10000) == make_stripe_split("T00", 10000, pixel_size=10.0)
    with pytest.raises(ValueError):
        make_stripe_split("x", 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 5000), st.text(min_size=1, max_size=8))
def test_stripes_partition(width, tid):
    s = make_stripe_split(tid, width)
    assert s.boundaries[0] == 0 and s.boundaries[-1] == width
    k = s.stripe_of(np.arange(width))
    assert np.all(np.diff(k) >= 0) and set(k) == set(range(5))


def test_bin_weights():
    w = compute_bin_weights(np.repeat(np.arange(20) * 10 + 5.0, 7)).weights
    assert np.allclose(w, 1.0)
    v = np.array([5.0] * 100 + [55.0])
    b = compute_bin_weights(v)
    assert b.weights[-1] / b.weights[0] == 10.0
    assert agbd_bin([250.0])[0] == 19 and b.edges[-2:].tolist() == [190, 200]
    with pytest.raises(ValueError):
        compute_bin_weights([])


def test_bin_weighted_frequencies_equal(rng):
    v = np.concatenate([rng.uniform(0, 20, 500), rng.uniform(100, 120, 20), rng.uniform(40, 60, 80)])
    b = compute_bin_weights(v)
    occupied = np.nonzero(b.counts)[0]
    # each bin's weighted mass is count * count^-1/2 = sqrt(count), up to the common normaliser
    mass = np.array([b.weights[b.bins == k].sum() for k in occupied])
    np.testing.assert_allclose(mass / mass.sum(), np.sqrt(b.counts[occupied]) / np.sqrt(b.counts[occupied]).sum(),
                               rtol=1e-9)
    assert b.weights.mean() == pytest.approx(1.0, abs=1e-12)


def test_forward_positivity_purity_shape(rng):
    net = init_net((3, 3), seed=2)
    x = rng.normal(10, 5, (7, 15, 15, 4))
    mu, sig = net_forward(net, x)
    assert np.all(sig > 0) and np.all(mu >= 0)
    mu2, sig2 = net_forward(net, x.copy())
    np.testing.assert_array_equal(mu, mu2)
    with pytest.raises(ShapeError):
        net_forward(net, rng.normal(size=(2, 14, 15, 4)))


def test_gradient_check_all_layers():
    # seed chosen so no rectifier changes state within the difference stencil
    net = init_net((2, 2), seed=6, dtype=np.float64)
    r = np.random.default_rng(6)
    x = r.normal(size=(2, 15, 15, 4))
    y = r.normal(size=2)
    w = r.uniform(0.5, 2, 2)
    assert 100 <= net.n_params <= 120
    err, flips = finite_difference_check(net, x, y, w, loss_and_grad, forward)
    assert flips == 0
    assert err < 1e-3


def test_gradient_small_step_on_random_instance(rng):
    net = init_net((2,), seed=1, dtype=np.float64)
    x = rng.normal(size=(3, 15, 15, 4))
    err, _ = finite_difference_check(net, x, rng.normal(size=3), None, loss_and_grad, forward, step=1e-6)
    assert err < 1e-4


def test_constant_target_convergence(rng):
    X = rng.normal(5, 2, (200, 15, 15, 4))
    y = np.full(200, 100.0)
    cfg = NetConfig(depths=(4,), learning_rate=1e-2, batch_size=50, ensemble=1, max_epochs=10, patience=20)
    ens = net_train(X, y, None, X[:50], y[:50], cfg)
    mu, sig = net_forward(ens.members[0], X[:20])
    assert np.all(np.abs(mu - 100) < 5)
    tl = np.convolve(ens.histories[0].train_loss, np.ones(3) / 3, mode="valid")
    assert np.all(np.diff(tl) < 0)


def test_nll_decreases_at_small_lr(rng):
    X = rng.normal(5, 2, (128, 15, 15, 4))
    y = 20 * X[:, 7, 7, 0] + rng.normal(0, 5, 128)
    cfg = NetConfig(depths=(4, 4), learning_rate=1e-5, batch_size=32, ensemble=1, max_epochs=10, patience=20)
    h = net_train(X, y, compute_bin_weights(np.abs(y)).weights, X[:0], y[:0], cfg).histories[0]
    assert h.train_loss[-1] < h.train_loss[0]


def test_combine_total_variance(rng):
    mu, s = combine([[10.0], [20.0]], [[0.0], [0.0]])
    assert mu[0] == 15 and s[0] == 5
    m = rng.normal(size=(5, 30))
    sg = rng.uniform(0.1, 2, (5, 30))
    mu, s = combine(m, sg)
    oracle = [math.fsum(sg[:, j] ** 2) / 5 + math.fsum((m[:, j] - math.fsum(m[:, j]) / 5) ** 2) / 5 for j in range(30)]
    np.testing.assert_allclose(s ** 2, oracle, rtol=0, atol=1e-12)
    same, ss = combine([m[0], m[0]], [sg[0], sg[0]])
    np.testing.assert_allclose(same, m[0]) and np.testing.assert_allclose(ss, sg[0])


def heights(h, w, value=10.0):
    d = np.full((2, h, w), value, np.float32)
    d[1] = 1.0
    return RasterGrid(d, GeoTransform(0, 700000.0, 10, -10))


def test_map_shapes_and_nodata():
    from canopy_ledger.agbdnet.train import Ensemble
    E = Ensemble([init_net((2,), seed=0)], NetConfig(depths=(2,), ensemble=1))
    for h, w in [(23, 31), (10, 10), (7, 3)]:
        mu, sd = predict_agbd_map(E, heights(h, w))
        assert mu.shape == output_shape(h, w) == (math.ceil(h / 5), math.ceil(w / 5))
    blank = heights(12, 12, -9999.0)
    mu, _ = predict_agbd_map(E, blank)
    assert not mu.valid().any()
    mu, _ = predict_agbd_map(E, heights(40, 40))
    inner = mu.data[0, 2:-2, 2:-2]
    assert np.allclose(inner, inner[0, 0], rtol=1e-6)


def test_patch_nodata_rule():
    g = heights(15, 15)
    d = g.data.copy()
    d[:, :3, :] = -9999
    # cell (0, 0) also loses the 5 patch rows above the tile: 8 of 15 rows missing
    p, keep = extract_patches(g.with_data(d), [0, 1], [1, 1])
    assert keep.tolist() == [False, True]
    assert np.all(p[1, ..., 0] == 10)
    full, k2 = extract_patches(g, [1], [1])
    assert k2[0] and np.all(full[0, ..., 0] == 10)


def test_compare_to_reference():
    g = RasterGrid(np.full((1, 4, 4), 40.0, np.float32), GeoTransform(0, 0, 50, -50))
    fps = [fp(i, agbd=40.0, x=25.0 + 50 * i, y=-25.0) for i in range(4)]
    r = compare_to_reference(g, fps)
    assert (r.mae, r.rmse, r.bias) == (0, 0, 0)
    r = compare_to_reference(g.with_data(g.data + 6.5), fps)
    assert r.bias == pytest.approx(6.5) and r.mae == pytest.approx(6.5)
    with pytest.raises(EmptyDataError):
        compare_to_reference(g, [fp(0, x=1e6)])


def test_ensemble_roundtrip(rng):
    from canopy_ledger.agbdnet.train import Ensemble
    ens = Ensemble([init_net((2, 3), seed=s) for s in range(3)], NetConfig(depths=(2, 3), ensemble=3))
    back = decode_ensemble(encode_ensemble(ens))
    x = rng.normal(size=(4, 15, 15, 4))
    for a, b in zip(ensemble_predict(ens, x), ensemble_predict(back, x)):
        np.testing.assert_array_equal(a, b)
    assert encode_ensemble(back) == encode_ensemble(ens)
