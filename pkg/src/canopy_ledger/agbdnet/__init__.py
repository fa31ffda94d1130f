"""Footprint-supervised biomass network: data preparation, training and mapping."""

from .gedi import (BinWeights, GediFootprint, StripeSplit, compare_to_reference, compute_bin_weights,
                   filter_gedi, make_stripe_split, read_footprints, write_footprints)
from .mapping import AgbdSamples, build_samples, extract_patches, predict_agbd_map
from .net import AgbdNet, Normalisation, init_net, loss_and_grad, net_forward
from .train import Ensemble, NetConfig, combine, ensemble_predict, load_ensemble, net_train, save_ensemble

__all__ = [
    "BinWeights", "GediFootprint", "StripeSplit", "compare_to_reference", "compute_bin_weights",
    "filter_gedi", "make_stripe_split", "read_footprints", "write_footprints",
    "AgbdSamples", "build_samples", "extract_patches", "predict_agbd_map",
    "AgbdNet", "Normalisation", "init_net", "loss_and_grad", "net_forward",
    "Ensemble", "NetConfig", "combine", "ensemble_predict", "load_ensemble", "net_train", "save_ensemble",
]
