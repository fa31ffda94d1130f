"""Exact CART regression trees on weighted multi-output squared error.

Rows are presorted once per feature; each node owns a contiguous segment of
every per-feature order, partitioned stably when the node splits. All
candidate thresholds (midpoints between consecutive distinct values) are
scanned. For one-hot targets the squared-error reduction equals the Gini
impurity reduction, so the same core serves classification forests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

LEAF = -1


@numba.njit(cache=True, nogil=True)
def _build(XT, Y, w, order, max_depth, min_leaf, n_sub, seed, rel_min_gain):
    n_feat = XT.shape[0]
    n = order.shape[1]
    k_out = Y.shape[1]
    cap = 2 * n + 1
    if max_depth >= 0 and max_depth < 40:
        cap = min(cap, 2 ** (max_depth + 1))
    feat = np.full(cap, -1, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros((cap, k_out), np.float64)
    wsum = np.zeros(cap, np.float64)
    nsamp = np.zeros(cap, np.int64)

    if seed >= 0:
        np.random.seed(seed)
    perm = np.arange(n_feat)
    goes_left = np.zeros(XT.shape[1], np.bool_)
    buf = np.empty(n, order.dtype)
    s_tot = np.zeros(k_out)
    s_l = np.zeros(k_out)
    cand = np.empty(n_feat, np.int64)
    wy = np.empty(XT.shape[1])
    for i in range(XT.shape[1]):
        wy[i] = w[i] * Y[i, 0]

    st_node = np.empty(cap, np.int64)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_d = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = n
    st_d[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        s = st_s[top]
        e = st_e[top]
        depth = st_d[top]
        m = e - s

        w_tot = 0.0
        sq_tot = 0.0
        for j in range(k_out):
            s_tot[j] = 0.0
        for kk in range(s, e):
            i = order[0, kk]
            w_tot += w[i]
            for j in range(k_out):
                s_tot[j] += w[i] * Y[i, j]
                sq_tot += w[i] * Y[i, j] * Y[i, j]
        wsum[node] = w_tot
        nsamp[node] = m
        for j in range(k_out):
            value[node, j] = s_tot[j] / w_tot if w_tot > 0 else 0.0

        if (max_depth >= 0 and depth >= max_depth) or m < 2 * min_leaf or w_tot <= 0:
            continue
        base = 0.0
        for j in range(k_out):
            base += s_tot[j] * s_tot[j] / w_tot
        best_gain = rel_min_gain * sq_tot
        best_f = -1
        best_pos = -1
        best_thr = 0.0

        # candidate features, ascending so the lowest index wins exact ties
        if n_sub >= n_feat:
            n_c = n_feat
            for f in range(n_feat):
                cand[f] = f
        else:
            for f in range(n_sub):
                r = f + int(np.random.random() * (n_feat - f))
                if r >= n_feat:
                    r = n_feat - 1
                tmp = perm[f]
                perm[f] = perm[r]
                perm[r] = tmp
            n_c = n_sub
            for f in range(n_sub):
                cand[f] = perm[f]
            cand[:n_c].sort()

        for ci in range(n_c):
            f = cand[ci]
            if k_out == 1:
                st0 = s_tot[0]
                w_l = 0.0
                sl0 = 0.0
                xi = XT[f, order[f, s]]
                for kk in range(s, e - 1):
                    i = order[f, kk]
                    w_l += w[i]
                    sl0 += wy[i]
                    xn = XT[f, order[f, kk + 1]]
                    if xn > xi:
                        cnt = kk - s + 1
                        w_r = w_tot - w_l
                        if cnt >= min_leaf and m - cnt >= min_leaf and w_l > 0.0 and w_r > 0.0:
                            sr0 = st0 - sl0
                            g = sl0 * sl0 / w_l + sr0 * sr0 / w_r - base
                            if g > best_gain:
                                best_gain = g
                                best_f = f
                                best_pos = kk
                                t = 0.5 * (xi + xn)
                                if t >= xn:
                                    t = xi
                                best_thr = t
                    xi = xn
                continue
            w_l = 0.0
            for j in range(k_out):
                s_l[j] = 0.0
            for kk in range(s, e - 1):
                i = order[f, kk]
                w_l += w[i]
                for j in range(k_out):
                    s_l[j] += w[i] * Y[i, j]
                cnt = kk - s + 1
                xi = XT[f, i]
                xn = XT[f, order[f, kk + 1]]
                if xn <= xi:
                    continue
                if cnt < min_leaf or m - cnt < min_leaf:
                    continue
                w_r = w_tot - w_l
                if w_l <= 0.0 or w_r <= 0.0:
                    continue
                g = -base
                for j in range(k_out):
                    g += s_l[j] * s_l[j] / w_l + (s_tot[j] - s_l[j]) * (s_tot[j] - s_l[j]) / w_r
                if g > best_gain:
                    best_gain = g
                    best_f = f
                    best_pos = kk
                    t = 0.5 * (xi + xn)
                    if t >= xn:
                        t = xi
                    best_thr = t

        if best_f < 0:
            continue

        for kk in range(s, e):
            goes_left[order[best_f, kk]] = kk <= best_pos
        n_left = best_pos - s + 1
        # leaf children only need one order for their sums
        n_part = n_feat
        if max_depth >= 0 and depth + 1 >= max_depth:
            n_part = 1
        elif n_left < 2 * min_leaf and m - n_left < 2 * min_leaf:
            n_part = 1
        for g_f in range(n_part):
            a = 0
            b = n_left
            for kk in range(s, e):
                i = order[g_f, kk]
                if goes_left[i]:
                    buf[a] = i
                    a += 1
                else:
                    buf[b] = i
                    b += 1
            for kk in range(m):
                order[g_f, s + kk] = buf[kk]

        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        feat[node] = best_f
        thr[node] = best_thr
        left[node] = li
        right[node] = ri
        # right pushed first so the left subtree is expanded first
        st_node[top] = ri
        st_s[top] = s + n_left
        st_e[top] = e
        st_d[top] = depth + 1
        top += 1
        st_node[top] = li
        st_s[top] = s
        st_e[top] = s + n_left
        st_d[top] = depth + 1
        top += 1

    return (feat[:n_nodes].copy(), thr[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), wsum[:n_nodes].copy(),
            nsamp[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _apply(X, feat, thr, left, right):
    out = np.empty(X.shape[0], np.int32)
    for r in range(X.shape[0]):
        node = 0
        while left[node] != -1:
            if X[r, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


@numba.njit(cache=True, nogil=True)
def _accumulate(X, feat, thr, left, right, value1, scale, acc):
    """acc += scale * tree(X) for single-output trees."""
    for r in range(X.shape[0]):
        node = 0
        while left[node] != -1:
            if X[r, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        acc[r] = acc[r] + scale * value1[node]


@dataclass(frozen=True)
class TreeNode:
    split_feature: int
    split_value: float
    left: int
    right: int
    leaf_value: np.ndarray | None


@dataclass
class Tree:
    """Flattened binary tree; node 0 is the root and ``left == -1`` marks leaves."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray            # (n_nodes, n_outputs)
    weight: np.ndarray | None = None
    n_samples: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.value.shape[1]

    def is_leaf(self) -> np.ndarray:
        return self.left == LEAF

    def node(self, i: int) -> TreeNode:
        if self.left[i] == LEAF:
            return TreeNode(-1, float("nan"), LEAF, LEAF, self.value[i].copy())
        return TreeNode(int(self.feature[i]), float(self.threshold[i]), int(self.left[i]), int(self.right[i]), None)

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        v = self.value[self.apply(X)]
        return v[:, 0] if self.n_outputs == 1 else v

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] != LEAF:
                d[self.left[i]] = d[i] + 1
                d[self.right[i]] = d[i] + 1
        return int(d.max())


def presort(X) -> np.ndarray:
    """(n_features, n_rows) stable argsort of every column."""
    X = np.asarray(X)
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int32))


def restrict_order(order: np.ndarray, rows, n_total: int) -> np.ndarray:
    """Presorted orders restricted to ``rows`` (global row ids stay valid)."""
    member = np.zeros(n_total, dtype=bool)
    member[rows] = True
    keep = member[order]
    return np.ascontiguousarray(order[keep].reshape(order.shape[0], -1))


def resolve_subsample(feature_subsample, n_features: int) -> int:
    if feature_subsample is None:
        return n_features
    if feature_subsample == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if isinstance(feature_subsample, float) and 0 < feature_subsample <= 1:
        return max(1, int(round(feature_subsample * n_features)))
    if int(feature_subsample) >= 1:
        return min(n_features, int(feature_subsample))
    raise ValueError(f"bad feature_subsample {feature_subsample!r}")


@dataclass
class TreeData:
    """Transposed features and presorted orders prepared once for many fits."""

    XT: np.ndarray
    order: np.ndarray
    n_rows: int

    @classmethod
    def prepare(cls, X, order=None, rows=None) -> "TreeData":
        X = np.ascontiguousarray(X, dtype=np.float64)
        n = X.shape[0]
        if order is None:
            order = presort(X)
        if rows is not None:
            order = restrict_order(order, rows, n)
        else:
            order = np.ascontiguousarray(order)
        if order.shape[1] == 0:
            raise ValueError("no rows selected")
        XT = np.ascontiguousarray(X.T)
        x32 = XT.astype(np.float32)
        if np.array_equal(x32, XT):
            XT = x32   # half the cache footprint, same comparisons
        return cls(XT, order, n)

    @property
    def n_features(self) -> int:
        return self.XT.shape[0]


def fit_prepared(data: TreeData, y, w, max_depth: int | None = 6, min_samples_leaf: int = 1,
                 feature_subsample=None, seed: int = 0, rel_min_gain: float = 1e-12) -> Tree:
    Y = np.asarray(y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    md = -1 if max_depth is None else int(max_depth)
    n_sub = resolve_subsample(feature_subsample, data.n_features)
    parts = _build(data.XT, np.ascontiguousarray(Y), np.ascontiguousarray(w, dtype=np.float64),
                   data.order.copy(), md, int(max(1, min_samples_leaf)),
                   n_sub, int(seed) if n_sub < data.n_features else -1, rel_min_gain)
    return Tree(*parts)


def fit_tree(X, y, weights=None, max_depth: int | None = 6, min_samples_leaf: int = 1,
             feature_subsample=None, seed: int = 0, order=None, rows=None,
             rel_min_gain: float = 1e-12) -> Tree:
    """Greedy CART tree minimising weighted squared error.

    Args:
        X: (n, p) features.
        y: (n,) or (n, k) targets; k > 1 gives a multi-output tree.
        weights: per-row non-negative weights (default 1).
        max_depth: ``None`` grows until leaves are pure or too small.
        min_samples_leaf: minimum number of rows on each side of a split.
        feature_subsample: ``None`` (all), ``"sqrt"``, a fraction, or a count,
            drawn afresh at every node.
        order: optional :func:`presort` of the full ``X`` to reuse.
        rows: optional subset of row indices to fit on.
    """
    X = np.asarray(X)
    Y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n == 0 or Y.shape[0] != n:
        raise ValueError(f"need matching non-empty X and y, got {X.shape} and {Y.shape}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or (w < 0).any():
        raise ValueError("weights must be a non-negative vector matching X")
    data = TreeData.prepare(X, order, rows)
    return fit_prepared(data, Y, w, max_depth, min_samples_leaf, feature_subsample, seed, rel_min_gain)
