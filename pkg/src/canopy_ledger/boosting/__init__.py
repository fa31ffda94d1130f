"""Decision-tree core, gradient boosting and random forests."""

from .forest import ForestModel, rf_fit, rf_leaves, rf_predict, rf_proximity, rf_votes
from .gbr import (CvResult, GbrConfig, GbrModel, cross_validate, expand_grid, fold_assignment,
                  gbr_fit, gbr_predict, staged_predict, weighted_median)
from .modelio import load_model, save_model
from .tree import Tree, TreeNode, fit_tree, presort

__all__ = [
    "ForestModel", "rf_fit", "rf_leaves", "rf_predict", "rf_proximity", "rf_votes",
    "CvResult", "GbrConfig", "GbrModel", "cross_validate", "expand_grid", "fold_assignment",
    "gbr_fit", "gbr_predict", "staged_predict", "weighted_median",
    "load_model", "save_model", "Tree", "TreeNode", "fit_tree", "presort",
]
