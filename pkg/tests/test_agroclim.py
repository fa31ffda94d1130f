import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from canopy_ledger.agroclim import (
    BIO_NAMES, DAYS_IN_MONTH, UNSUITABLE, ZoneConfig, bioclim, classify_zones, cluster_types, cut_linkage,
    longest_circular_run, pet_hargreaves, vif, vif_select, ward_linkage, zone_codes,
)
from oracles import longest_circular_run_loop, ward_bruteforce

B = {n: i for i, n in enumerate(BIO_NAMES)}


def climate(rng, n=1):
    tmean = rng.uniform(22, 30, (12, n))
    rng_ = rng.uniform(5, 12, (12, n))
    return tmean - rng_ / 2, tmean + rng_ / 2, tmean, rng.gamma(2, 60, (12, n)), rng.uniform(25, 40, (12, n))


def test_pet_cases():
    assert pet_hargreaves(20, 30, 25, 0, 31) == 0
    assert pet_hargreaves(25, 25, 25, 30, 31) == 0
    v = pet_hargreaves(20.0, 30.0, 25.0, 30.0, 30.0)
    assert v == pytest.approx(0.0023 * 30 * 0.408 * (25 + 17.8) * np.sqrt(10) * 30)
    with pytest.raises(ValueError):
        pet_hargreaves(30, 20, 25, 30)


def test_constant_climate_zero_seasonality():
    o = np.ones((12, 1))
    b = bioclim(20 * o, 30 * o, 25 * o, 120 * o, 30 * o)[0]
    assert b[B["BIO4"]] == 0 and b[B["BIO15"]] == 0 and b[B["BIO20"]] == 0
    # identical months still differ in length, so monthly PET spreads by 31 - 28 days
    daily = 0.0023 * 0.408 * 30 * (25 + 17.8) * np.sqrt(10)
    assert b[B["BIO29"]] == pytest.approx(3 * daily, rel=1e-12)


def test_bio20_wraps_year():
    p = np.full(12, 150.0)
    p[[10, 11, 0, 1]] = 40.0
    o = np.ones(12)
    b = bioclim(20 * o[:, None], 30 * o[:, None], 25 * o[:, None], p[:, None], 30 * o[:, None])[0]
    assert b[B["BIO20"]] == 4


def test_circular_run_oracle_50_vectors(rng):
    flags = rng.random((12, 50)) < rng.uniform(0.2, 0.9, 50)
    got = longest_circular_run(flags)
    for j in range(50):
        assert got[j] == longest_circular_run_loop(flags[:, j])


def test_missing_months_rejected(rng):
    c = list(climate(rng))
    c[3] = c[3].copy()
    c[3][4, 0] = np.nan
    with pytest.raises(ValueError):
        bioclim(*c)
    with pytest.raises(ValueError):
        bioclim(*(a[:11] for a in climate(rng)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 11))
def test_rotation_invariance(seed, k):
    c = climate(np.random.default_rng(seed), 3)
    a = bioclim(*c)
    rot = [np.roll(x, k, axis=0) for x in c]
    # rescale radiation so each rotated month keeps its PET despite a different day count
    rot[4] = np.roll(c[4] * DAYS_IN_MONTH[:, None], k, axis=0) / DAYS_IN_MONTH[:, None]
    b = bioclim(*rot)
    for name in ("BIO20", "BIO21", "BIO23", "BIO4", "BIO26", "BIO29", "BIO14"):
        np.testing.assert_allclose(a[:, B[name]], b[:, B[name]], rtol=1e-12)


def test_vif_orthonormal_and_duplicate(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(200, 4)))
    Q -= Q.mean(axis=0)
    assert np.allclose(vif(Q), 1.0, atol=0.05)
    assert vif_select(Q) == [0, 1, 2, 3]
    X = rng.normal(size=(100, 3))
    X = np.column_stack([X, X[:, 1]])
    v = vif(X)
    assert np.isinf(v[1]) and np.isinf(v[3])
    kept = vif_select(X)
    assert kept == [0, 2, 3]


def vif_corr(X):
    R = np.corrcoef(X, rowvar=False)
    return np.diag(np.linalg.inv(R))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 0.995))
@example(0, 0.984375)
def test_vif_three_gaussians_vs_correlation_oracle(seed, rho):
    r = np.random.default_rng(seed)
    z = r.normal(size=(300, 1))
    X = rho * z + np.sqrt(1 - rho ** 2) * r.normal(size=(300, 3))
    keep = list(range(3))
    while len(keep) > 1:
        v = vif_corr(X[:, keep])
        if v.max() <= 10:
            break
        # equal VIFs up to rounding drop the lowest index
        del keep[int(np.flatnonzero(v >= v.max() * (1 - 1e-9))[0])]
    assert vif_select(X, 10.0) == keep
    assert vif_corr(X[:, keep]).max() <= 10 if len(keep) > 1 else True
    if len(keep) < 3:
        assert vif_corr(X).max() > 10


def test_vif_two_column_tie_drops_lower_index(rng):
    z = rng.normal(size=200)
    X = np.column_stack([z + 0.05 * rng.normal(size=200), rng.normal(size=200), z + 0.05 * rng.normal(size=200)])
    v = vif(X[:, [0, 2]])
    assert v[0] == pytest.approx(v[1], rel=1e-9)
    assert vif_select(X[:, [0, 2]]) == [1]


def test_ward_equals_bruteforce(rng):
    for n in range(2, 9):
        P = rng.normal(size=(n, 2))
        D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
        Z = ward_linkage(D)
        np.testing.assert_allclose(Z[:, 2], ward_bruteforce(P), rtol=1e-9)
        assert np.all(np.diff(Z[:, 2]) >= -1e-12)


def test_cut_linkage_cases(rng):
    P = rng.normal(size=(6, 2))
    D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
    Z = ward_linkage(D)
    assert sorted(cut_linkage(Z, 6)) == list(range(6))
    assert set(cut_linkage(Z, 1)) == {0}
    with pytest.raises(ValueError):
        cut_linkage(Z, 7)


def test_two_blobs_recovered(rng):
    X = np.vstack([rng.normal(0, 0.5, (25, 3)), rng.normal(6, 0.5, (25, 3))])
    truth = np.r_[np.zeros(25), np.ones(25)]
    lab = cluster_types(X, k=2, n_trees=100, seed=3).labels
    acc = max(np.mean((lab == 1) == (truth == 0)), np.mean((lab == 1) == (truth == 1)))
    assert acc == 1.0
    with pytest.raises(ValueError):
        cluster_types(X, k=51)


def test_zone_code_rules():
    classes = np.array([0, 1, 2, 3])
    shares = np.array([[0.0, 0.45, 0.44, 0.11], [0.7, 0.1, 0.1, 0.1], [0.7, 0.1, 0.1, 0.1], [0.0, 0.8, 0.2, 0.0]])
    codes = zone_codes(shares, classes, np.array([False, False, True, False]), k=3, margin=0.1)
    assert codes.tolist() == [4, UNSUITABLE, 5, 1]


def test_classify_separable(rng):
    occ = rng.normal(0, 0.3, (60, 2))
    bg = rng.normal(8, 0.3, (60, 2))
    cells = np.vstack([rng.normal(0, 0.3, (10, 2)), rng.normal(8, 0.3, (10, 2))])
    res = classify_zones(occ, np.ones(60, int), bg, cells, config=ZoneConfig(repeats=2, forests_per_repeat=2, trees=20))
    assert res.codes[:10].tolist() == [1] * 10 and res.codes[10:].tolist() == [0] * 10
    assert set(res.codes) <= set(map(int, res.legend()))
    assert all(a == 1.0 for a in res.accuracies)
