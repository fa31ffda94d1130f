"""Bagged random forests on the shared tree core, with leaf-sharing proximities."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .tree import Tree, TreeData, fit_prepared, restrict_order

log = logging.getLogger(__name__)


@dataclass
class ForestModel:
    trees: list[Tree]
    task: str                               # "classification" | "regression"
    classes: np.ndarray | None
    oob_indices: list[np.ndarray]
    n_features: int
    seed: int = 0


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("CANOPY_LEDGER_JOBS", "1")))
    except ValueError:
        return 1


def rf_fit(X, y, n_trees: int = 500, feature_subsample="sqrt", task: str = "classification",
           max_depth: int | None = None, min_samples_leaf: int = 1, bootstrap: bool = True,
           seed: int = 0, jobs: int | None = None) -> ForestModel:
    """Fit ``n_trees`` trees; tree ``i`` draws its bootstrap and features from seed ``seed + i``.

    Bootstrap multiplicities enter as row weights, so each tree sees only its
    in-bag rows. Classification leaves hold weighted class frequencies.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n == 0 or y.shape[0] != n:
        raise ValueError(f"need matching non-empty X and y, got {X.shape} and {y.shape}")
    if task == "classification":
        classes, codes = np.unique(y, return_inverse=True)
        if classes.size == 1:
            log.warning("single-class training data; the forest always predicts %r", classes[0])
        Y = np.eye(classes.size)[codes]
    elif task == "regression":
        classes = None
        Y = y.astype(np.float64)
    else:
        raise ValueError(f"unknown task {task!r}")
    full = TreeData.prepare(X)

    def one(i):
        if bootstrap:
            rng = np.random.default_rng(seed + i)
            counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        else:
            counts = np.ones(n)
        rows = np.nonzero(counts)[0]
        data = TreeData(full.XT, restrict_order(full.order, rows, n), n)
        tree = fit_prepared(data, Y, counts, max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                            feature_subsample=feature_subsample, seed=seed + i)
        return tree, np.nonzero(counts == 0)[0]

    jobs = _default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1:
        out = [one(i) for i in range(n_trees)]
    else:
        with ThreadPoolExecutor(jobs) as ex:
            out = list(ex.map(one, range(n_trees)))
    return ForestModel([t for t, _ in out], task, classes, [o for _, o in out], X.shape[1], seed)


def _check(model: ForestModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(f"forest expects {model.n_features} columns, got {X.shape}")
    return X


def rf_votes(model: ForestModel, X) -> np.ndarray:
    """(n, n_classes) count of trees voting for each class."""
    X = _check(model, X)
    votes = np.zeros((X.shape[0], model.classes.size), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        # argmax takes the first maximum, i.e. the lexicographically smallest class
        votes[rows, np.argmax(tree.value[tree.apply(X)], axis=1)] += 1
    return votes


def rf_predict(model: ForestModel, X) -> np.ndarray:
    """Modal vote (ties to the smallest class) or mean tree output."""
    if model.task == "classification":
        return model.classes[np.argmax(rf_votes(model, X), axis=1)]
    X = _check(model, X)
    return np.mean([t.predict(X) for t in model.trees], axis=0)


def rf_leaves(model: ForestModel, X) -> np.ndarray:
    """(n, n_trees) leaf index of each row in each tree."""
    X = _check(model, X)
    return np.stack([t.apply(X) for t in model.trees], axis=1)


def rf_proximity(model: ForestModel, X) -> np.ndarray:
    """Fraction of trees in which two rows land in the same leaf."""
    leaves = rf_leaves(model, X)
    n = leaves.shape[0]
    prox = np.zeros((n, n), dtype=np.float64)
    for j in range(leaves.shape[1]):
        l = leaves[:, j]
        prox += l[:, None] == l[None, :]
    prox /= leaves.shape[1]
    return prox
