"""Agro-climatic zoning: bioclimatic variables, VIF screening, forest-dissimilarity Ward clustering and zone classification."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .boosting import rf_fit, rf_proximity, rf_votes

log = logging.getLogger(__name__)

DAYS_IN_MONTH = np.array([31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31], dtype=np.float64)
BIO_NAMES = ("BIO3", "BIO4", "BIO8", "BIO11", "BIO14", "BIO15", "BIO18", "BIO19",
             "BIO20", "BIO21", "BIO23", "BIO26", "BIO29")
CLIM_VARS = ("tmin", "tmax", "tmean", "precip", "ra")
UNSUITABLE = 0
ZONE_NODATA = -1


# ---------------------------------------------------------------- climate variables


def pet_hargreaves(tmin, tmax, tmean, ra, days=DAYS_IN_MONTH):
    """Monthly potential evapotranspiration (mm); months along axis 0, ``ra`` in MJ/m2/day."""
    tmin, tmax, tmean, ra = (np.asarray(a, dtype=np.float64) for a in (tmin, tmax, tmean, ra))
    if np.any(tmax < tmin):
        raise ValueError("tmax below tmin")
    d = np.asarray(days, dtype=np.float64).reshape((-1,) + (1,) * (tmean.ndim - 1)) if tmean.ndim else days
    return 0.0023 * (0.408 * ra) * (tmean + 17.8) * np.sqrt(tmax - tmin) * d


def circular_window_sums(x, width: int) -> np.ndarray:
    """Sums over ``width`` consecutive months starting at each month, wrapping Dec to Jan (axis 0)."""
    x = np.asarray(x, dtype=np.float64)
    ext = np.concatenate([x, x[: width - 1]], axis=0)
    c = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(ext, axis=0)], axis=0)
    return c[width : width + 12] - c[:12]


def longest_circular_run(flags) -> np.ndarray:
    """Longest run of true months with wrap-around (axis 0); 12 when every month is true."""
    f = np.asarray(flags, dtype=bool)
    cols = f.reshape(12, -1)
    out = np.zeros(cols.shape[1], dtype=np.int64)
    for j in range(cols.shape[1]):
        v = cols[:, j]
        if v.all():
            out[j] = 12
            continue
        best = run = 0
        for m in range(24):
            if v[m % 12]:
                run += 1
                best = max(best, run)
            else:
                run = 0
        out[j] = best
    return out.reshape(f.shape[1:]) if f.ndim > 1 else out[0]


def bioclim(tmin, tmax, tmean, precip, ra) -> np.ndarray:
    """The 13 selected variables, shape ``(..., 13)`` in :data:`BIO_NAMES` order.

    Quarters are 3 consecutive months with wrap-around; the first month
    wins ties. Standard deviations are sample (n - 1) values.
    """
    arrs = [np.asarray(a, dtype=np.float64) for a in (tmin, tmax, tmean, precip, ra)]
    for a in arrs:
        if a.shape[0] != 12:
            raise ValueError(f"need 12 months along axis 0, got {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("climatology has missing months")
    tmin, tmax, tmean, precip, ra = arrs
    if np.any(precip < 0):
        raise ValueError("negative precipitation")
    flat = lambda a: a.reshape(12, -1)
    tn, tx, tm, p, r = map(flat, (tmin, tmax, tmean, precip, ra))
    pet = pet_hargreaves(tn, tx, tm, r, DAYS_IN_MONTH[:, None])
    idx = np.arange(tm.shape[1])

    bio2 = np.mean(tx - tn, axis=0)
    bio7 = tx.max(axis=0) - tn.min(axis=0)
    bio3 = np.divide(100.0 * bio2, bio7, out=np.zeros_like(bio2), where=bio7 > 0)
    bio4 = 100.0 * tm.std(axis=0, ddof=1)
    q_p = circular_window_sums(p, 3)
    q_t = circular_window_sums(tm, 3) / 3.0
    wet_q = np.argmax(q_p, axis=0)
    cold_q = np.argmin(q_t, axis=0)
    warm_q = np.argmax(q_t, axis=0)
    bio8 = q_t[wet_q, idx]
    bio11 = q_t[cold_q, idx]
    bio14 = p.min(axis=0)
    p1 = p + 1.0
    bio15 = 100.0 * p1.std(axis=0, ddof=1) / p1.mean(axis=0)
    bio18 = q_p[warm_q, idx]
    bio19 = q_p[cold_q, idx]
    bio20 = longest_circular_run(p < 100.0).astype(np.float64)
    bio21 = longest_circular_run(p < pet).astype(np.float64)
    h_p = circular_window_sums(p, 6)
    h_t = circular_window_sums(tm, 6) / 6.0
    bio23 = h_t[np.argmax(h_p, axis=0), idx]
    bio26 = pet.std(axis=0, ddof=1)
    bio29 = pet.max(axis=0) - pet.min(axis=0)
    out = np.stack([bio3, bio4, bio8, bio11, bio14, bio15, bio18, bio19, bio20, bio21, bio23, bio26, bio29], axis=-1)
    return out.reshape(tmean.shape[1:] + (13,))


def bioclim_grids(clim: dict) -> tuple[np.ndarray, np.ndarray]:
    """Variables for every cell of 12-band grids keyed by :data:`CLIM_VARS`; returns (values (h, w, 13), valid)."""
    g0 = clim["tmean"]
    valid = np.ones(g0.shape, dtype=bool)
    for v in CLIM_VARS:
        valid &= clim[v].valid()
    vals = np.full(g0.shape + (13,), np.nan)
    rr, cc = np.nonzero(valid)
    if rr.size:
        cols = [clim[v].data[:, rr, cc] for v in CLIM_VARS]
        vals[rr, cc] = bioclim(*cols)
    return vals, valid


# ---------------------------------------------------------------- VIF


def vif(X) -> np.ndarray:
    """Variance inflation factor of each column against all others (with intercept)."""
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    out = np.empty(p)
    for j in range(p):
        y = X[:, j]
        A = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        res = y - A @ coef
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        ss_res = float(res @ res)
        out[j] = math.inf if ss_res <= 1e-12 * ss_tot else ss_tot / ss_res
    return out


VIF_TIE_RTOL = 1e-9


def _first_max(v) -> int:
    top = float(np.max(v))
    if math.isinf(top):
        return int(np.flatnonzero(np.isinf(v))[0])
    return int(np.flatnonzero(v >= top * (1.0 - VIF_TIE_RTOL))[0])


def vif_select(X, threshold: float = 10.0) -> list[int]:
    """Drop the highest-VIF column until every VIF is at most ``threshold``.

    VIFs within a relative ``VIF_TIE_RTOL`` of the maximum count as tied and
    the lowest index is dropped; with two columns left the VIFs are equal in
    exact arithmetic, so rounding must not pick the column.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("VIF selection needs at least two columns")
    if np.any(X.std(axis=0) == 0):
        raise ValueError("constant column in VIF input")
    keep = list(range(X.shape[1]))
    while len(keep) > 1:
        v = vif(X[:, keep])
        j = _first_max(v)
        if not v[j] > threshold:
            break
        log.debug("VIF drops column %d (%.3g)", keep[j], v[j])
        del keep[j]
    return keep


# ---------------------------------------------------------------- clustering


def ward_linkage(D) -> np.ndarray:
    """Ward agglomeration on a dissimilarity matrix via the Lance-Williams update.

    Works on squared dissimilarities and reports merge heights as their
    square roots. Returns an (n-1, 4) linkage: the two merged cluster ids
    (new clusters numbered from n), height, size. Ties go to the pair with
    the smallest ids.
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValueError("dissimilarity matrix must be square")
    d = D ** 2
    np.fill_diagonal(d, np.inf)
    active = list(range(n))
    ids = list(range(n))
    size = [1] * n
    Z = np.zeros((n - 1, 4))
    work = d.copy()
    for step in range(n - 1):
        sub = work[np.ix_(active, active)]
        flat = int(np.argmin(sub))
        a, b = divmod(flat, len(active))
        # among exact ties prefer the smallest cluster ids
        best = sub[a, b]
        cand = np.argwhere(sub == best)
        cand = [(min(ids[active[x]], ids[active[y]]), max(ids[active[x]], ids[active[y]]), x, y) for x, y in cand if x != y]
        cand.sort()
        _, _, a, b = cand[0]
        i, j = active[a], active[b]
        ni, nj = size[i], size[j]
        for k in active:
            if k in (i, j):
                continue
            nk = size[k]
            v = ((ni + nk) * work[k, i] + (nj + nk) * work[k, j] - nk * work[i, j]) / (ni + nj + nk)
            work[k, i] = work[i, k] = v
        lo, hi = sorted((ids[i], ids[j]))
        Z[step] = (lo, hi, math.sqrt(max(best, 0.0)), ni + nj)
        size[i] = ni + nj
        ids[i] = n + step
        active.remove(j)
        work[j, :] = np.inf
        work[:, j] = np.inf
    return Z


def cut_linkage(Z, k: int) -> np.ndarray:
    """Flat labels 0..k-1 after the first n-k merges, numbered by each cluster's smallest member."""
    n = Z.shape[0] + 1
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside 1..{n}")
    members = {i: [i] for i in range(n)}
    for step in range(n - k):
        a, b = int(Z[step, 0]), int(Z[step, 1])
        members[n + step] = members.pop(a) + members.pop(b)
    groups = sorted((sorted(m) for m in members.values()), key=lambda m: m[0])
    lab = np.empty(n, dtype=np.int64)
    for g, m in enumerate(groups):
        lab[m] = g
    return lab


def synthetic_contrast(X, rng) -> np.ndarray:
    """Each column permuted independently, breaking the joint structure."""
    X = np.asarray(X)
    return np.column_stack([X[rng.permutation(X.shape[0]), j] for j in range(X.shape[1])])


def rf_dissimilarity(X, n_trees: int = 500, n_forests: int = 1, seed: int = 0) -> np.ndarray:
    """1 - proximity of an unsupervised forest separating real rows from a permuted copy."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    prox = np.zeros((n, n))
    for f in range(n_forests):
        rng = np.random.default_rng([seed, f])
        Xs = np.vstack([X, synthetic_contrast(X, rng)])
        y = np.r_[np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)]
        model = rf_fit(Xs, y, n_trees=n_trees, seed=seed + 100003 * f)
        prox += rf_proximity(model, X)
    prox /= n_forests
    return 1.0 - prox


def standardise(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    m = X.mean(axis=0)
    s = X.std(axis=0)
    s = np.where(s > 0, s, 1.0)
    return (X - m) / s, m, s


@dataclass
class Clustering:
    labels: np.ndarray           # 1..k
    linkage: np.ndarray
    dissimilarity: np.ndarray


def cluster_types(X, k: int = 5, n_trees: int = 500, n_forests: int = 1, seed: int = 0,
                  dissimilarity=None) -> Clustering:
    """Climate types 1..k for occurrence rows from Ward clustering of forest dissimilarities."""
    X = np.asarray(X, dtype=np.float64)
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds {X.shape[0]} rows")
    Dm = rf_dissimilarity(X, n_trees, n_forests, seed) if dissimilarity is None else np.asarray(dissimilarity)
    Z = ward_linkage(Dm)
    return Clustering(cut_linkage(Z, k) + 1, Z, Dm)


# ---------------------------------------------------------------- zone classification


@dataclass(frozen=True)
class ZoneConfig:
    repeats: int = 5
    forests_per_repeat: int = 5
    trees: int = 100
    train_fraction: float = 0.8
    margin: float = 0.1
    seed: int = 0


@dataclass
class ZoneResult:
    codes: np.ndarray            # per cell: 1..k types, k+1 mixed, k+2 limitations, 0 unsuitable
    shares: np.ndarray           # per cell vote share per class (0 = unsuitable, then 1..k)
    accuracies: list = field(default_factory=list)
    k: int = 0

    def legend(self) -> dict:
        leg = {str(UNSUITABLE): "unsuitable"}
        leg.update({str(t): f"type {t}" for t in range(1, self.k + 1)})
        leg[str(self.k + 1)] = "mixed"
        leg[str(self.k + 2)] = "limitations"
        return leg


def zone_codes(shares: np.ndarray, classes: np.ndarray, has_occurrence: np.ndarray, k: int,
               margin: float) -> np.ndarray:
    """Modal class with the mixed and limitations rules; limitations takes priority."""
    order = np.argsort(-shares, axis=1, kind="stable")
    top = shares[np.arange(shares.shape[0]), order[:, 0]]
    second = shares[np.arange(shares.shape[0]), order[:, 1]] if shares.shape[1] > 1 else np.zeros_like(top)
    modal = classes[np.argmax(shares, axis=1)]
    codes = modal.astype(np.int64).copy()
    codes[(top - second) < margin] = k + 1
    codes[(modal == UNSUITABLE) & has_occurrence] = k + 2
    return codes


def classify_zones(occ_X, occ_labels, bg_X, cell_X, occ_cells=None, config: ZoneConfig = ZoneConfig()) -> ZoneResult:
    """Vote across every tree of every forest and repeat on the cells in ``cell_X``.

    ``occ_cells`` gives the cell index of each occurrence, used for the
    limitations rule. Background rows carry class 0.
    """
    occ_X = np.asarray(occ_X, dtype=np.float64)
    bg_X = np.asarray(bg_X, dtype=np.float64)
    cell_X = np.asarray(cell_X, dtype=np.float64)
    occ_labels = np.asarray(occ_labels, dtype=np.int64)
    X = np.vstack([occ_X, bg_X])
    y = np.r_[occ_labels, np.full(bg_X.shape[0], UNSUITABLE, dtype=np.int64)]
    classes = np.unique(y)
    k = int(occ_labels.max()) if occ_labels.size else 0
    votes = np.zeros((cell_X.shape[0], classes.size), dtype=np.int64)
    accs = []
    for r in range(config.repeats):
        rng = np.random.default_rng([config.seed, r])
        perm = rng.permutation(y.size)
        n_tr = int(round(config.train_fraction * y.size))
        tr, te = perm[:n_tr], perm[n_tr:]
        missing = set(classes) - set(np.unique(y[tr]))
        if missing:
            raise ValueError(f"repeat {r}: classes {sorted(missing)} absent from the training split")
        te_votes = np.zeros((te.size, classes.size), dtype=np.int64)
        for f in range(config.forests_per_repeat):
            seed = config.seed + 1_000_003 * r + 10_007 * f
            model = rf_fit(X[tr], y[tr], n_trees=config.trees, seed=seed)
            votes += rf_votes(model, cell_X)
            if te.size:
                te_votes += rf_votes(model, X[te])
        if te.size:
            accs.append(float(np.mean(classes[np.argmax(te_votes, axis=1)] == y[te])))
            log.info("zoning repeat %d: held-out accuracy %.3f", r, accs[-1])
    shares = votes / np.maximum(votes.sum(axis=1, keepdims=True), 1)
    has_occ = np.zeros(cell_X.shape[0], dtype=bool)
    if occ_cells is not None:
        oc = np.asarray(occ_cells, dtype=np.int64)
        has_occ[oc[(oc >= 0) & (oc < has_occ.size)]] = True
    codes = zone_codes(shares, classes, has_occ, k, config.margin)
    return ZoneResult(codes, shares, accs, k)
