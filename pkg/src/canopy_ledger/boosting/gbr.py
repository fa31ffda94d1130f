"""Gradient-boosted regression trees with Huber (or squared) loss."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ..errors import ShapeError
from .tree import Tree, TreeData, _accumulate, fit_prepared, presort

log = logging.getLogger(__name__)

LOSSES = ("huber", "squared")


@dataclass(frozen=True)
class GbrConfig:
    n_estimators: int = 2000
    learning_rate: float = 0.05
    max_depth: int = 6
    min_samples_leaf: int = 20
    huber_delta: float = 0.1
    loss: str = "huber"
    feature_subsample: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.loss == "huber" and not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")

    def sort_key(self):
        return tuple((k, repr(v)) for k, v in sorted(asdict(self).items()))


@dataclass
class GbrModel:
    init_value: float
    trees: list[Tree]
    learning_rate: float
    huber_delta: float
    feature_order_tag: str
    n_estimators: int
    n_features: int
    config: GbrConfig = field(default_factory=GbrConfig)
    train_loss: np.ndarray | None = None     # loss after 0..n_estimators stages


def weighted_median(y, w=None) -> float:
    """Minimiser of the weighted absolute deviation; midpoint when the half-mass falls between two values."""
    y = np.asarray(y, dtype=np.float64).ravel()
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64).ravel()
    keep = w > 0
    y, w = y[keep], w[keep]
    if y.size == 0:
        raise ValueError("weighted median of empty data")
    o = np.argsort(y, kind="stable")
    y, w = y[o], w[o]
    cw = np.cumsum(w)
    half = 0.5 * cw[-1]
    k = int(np.searchsorted(cw, half, side="left"))
    if cw[k] == half and k + 1 < y.size:
        return 0.5 * (y[k] + y[k + 1])
    return float(y[k])


def negative_gradient(residual: np.ndarray, loss: str, delta: float) -> np.ndarray:
    if loss == "squared":
        return residual
    return np.clip(residual, -delta, delta)


def loss_value(residual: np.ndarray, loss: str, delta: float, w=None) -> float:
    """Weighted mean training loss."""
    a = np.abs(residual)
    if loss == "squared":
        v = 0.5 * residual ** 2
    else:
        v = np.where(a <= delta, 0.5 * residual ** 2, delta * (a - 0.5 * delta))
    return float(np.average(v, weights=w))


def gbr_fit(X, y, config: GbrConfig = GbrConfig(), weights=None, feature_order_tag: str = "",
            order=None, rows=None) -> GbrModel:
    """Fit ``config.n_estimators`` stages; stage ``t`` uses seed ``config.seed + t``.

    ``order`` (a :func:`presort` of ``X``) and ``rows`` let cross-validation
    reuse one presort across folds.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise ValueError(f"need non-empty X (n, p) and y (n,), got {X.shape} and {y.shape}")
    w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if rows is not None:
        rows = np.asarray(rows, dtype=np.int64)
        sub = np.zeros(y.size, dtype=bool)
        sub[rows] = True
        w_eff = np.where(sub, w, 0.0)
    else:
        sub = None
        w_eff = w
    init = weighted_median(y, w_eff)
    cfg = config
    pred = np.full(y.size, init)
    trees = []
    losses = [loss_value(y - pred, cfg.loss, cfg.huber_delta, w_eff)]
    data = TreeData.prepare(X, order, rows) if cfg.n_estimators else None
    for t in range(cfg.n_estimators):
        r = negative_gradient(y - pred, cfg.loss, cfg.huber_delta)
        tree = fit_prepared(data, r, w, max_depth=cfg.max_depth, min_samples_leaf=cfg.min_samples_leaf,
                            feature_subsample=cfg.feature_subsample, seed=cfg.seed + t)
        trees.append(tree)
        _accumulate(X, tree.feature, tree.threshold, tree.left, tree.right,
                    np.ascontiguousarray(tree.value[:, 0]), cfg.learning_rate, pred)
        losses.append(loss_value(y - pred, cfg.loss, cfg.huber_delta, w_eff))
        if (t + 1) % 100 == 0:
            log.debug("stage %d loss %.6g", t + 1, losses[-1])
    return GbrModel(init, trees, cfg.learning_rate, cfg.huber_delta, feature_order_tag,
                    cfg.n_estimators, X.shape[1], cfg, np.asarray(losses))


def _as_float(X) -> np.ndarray:
    X = np.asarray(X)
    if X.dtype not in (np.float32, np.float64):
        X = X.astype(np.float64)
    return np.ascontiguousarray(X)


def gbr_predict(model: GbrModel, X, n_trees: int | None = None) -> np.ndarray:
    """``init + lr * tree_1(X) + ... + lr * tree_t(X)``, accumulated in stage order.

    float32 input is used as is; thresholds are compared in float64.
    """
    X = _as_float(X)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(f"model expects {model.n_features} columns, got {X.shape}")
    t = len(model.trees) if n_trees is None else int(n_trees)
    pred = np.full(X.shape[0], model.init_value)
    for tree in model.trees[:t]:
        _accumulate(X, tree.feature, tree.threshold, tree.left, tree.right,
                    np.ascontiguousarray(tree.value[:, 0]), model.learning_rate, pred)
    return pred


def staged_predict(model: GbrModel, X, every: int = 1):
    """Yield ``(t, predictions)`` for t = 0, every, 2*every, ... and the final stage."""
    X = _as_float(X)
    pred = np.full(X.shape[0], model.init_value)
    yield 0, pred.copy()
    for t, tree in enumerate(model.trees, 1):
        _accumulate(X, tree.feature, tree.threshold, tree.left, tree.right,
                    np.ascontiguousarray(tree.value[:, 0]), model.learning_rate, pred)
        if t % every == 0 or t == len(model.trees):
            yield t, pred.copy()


# ---------------------------------------------------------------- cross-validation


def fold_assignment(n: int, k: int, seed: int) -> np.ndarray:
    """Fold id per row from a seeded shuffle; fold sizes differ by at most one."""
    if k < 2 or n < k:
        raise ValueError(f"need 2 <= k <= n rows, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return folds


def group_fold_assignment(groups, k: int, seed: int) -> np.ndarray:
    """Fold id per row such that all rows of a group share a fold."""
    groups = np.asarray(groups)
    uniq, inv = np.unique(groups, return_inverse=True)
    return fold_assignment(uniq.size, k, seed)[inv]


@dataclass
class CvResult:
    best: GbrConfig
    scores: dict          # config -> mean fold MAE
    fold_scores: dict     # config -> per-fold MAE
    folds: np.ndarray


def cross_validate(X, y, grid: Sequence[GbrConfig], k: int = 5, seed: int = 0, weights=None,
                   folds=None, groups=None, clamp: tuple[float, float] | None = None) -> CvResult:
    """Pick the config with the lowest mean fold MAE.

    Folds come from ``folds`` if given, else from ``groups`` (whole groups
    per fold), else from a seeded row shuffle. Exact score ties go to the
    lexicographically smallest config. ``clamp`` bounds predictions before
    scoring, as the shade map does.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if folds is None:
        folds = group_fold_assignment(groups, k, seed) if groups is not None else fold_assignment(y.size, k, seed)
    folds = np.asarray(folds)
    fold_ids = np.unique(folds)
    if fold_ids.size < 2:
        raise ValueError("need at least two folds")
    order = presort(X) if any(c.n_estimators for c in grid) else None
    scores, per_fold = {}, {}
    for cfg in grid:
        maes = []
        for f in fold_ids:
            tr = np.nonzero(folds != f)[0]
            te = folds == f
            m = gbr_fit(X, y, cfg, weights=weights, order=order, rows=tr)
            p = gbr_predict(m, X[te])
            if clamp is not None:
                p = np.clip(p, *clamp)
            maes.append(float(np.mean(np.abs(p - y[te]))))
        per_fold[cfg] = maes
        scores[cfg] = float(np.mean(maes))
        log.info("cv %s: mae %.5f", cfg, scores[cfg])
    best = min(grid, key=lambda c: (scores[c], c.sort_key()))
    return CvResult(best, scores, per_fold, folds)


def expand_grid(base: GbrConfig, **axes) -> list[GbrConfig]:
    """Cartesian product of ``axes`` over ``base``."""
    out = [base]
    for name, values in axes.items():
        out = [replace(c, **{name: v}) for c in out for v in values]
    return out
