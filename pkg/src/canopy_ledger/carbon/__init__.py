"""Shade-to-biomass regression, scenario carbon gains and carbon accounting."""

from .accounting import (CARBON_FRACTION, CO2_PER_C, ClassStats, CountryEmissions, EmissionConfig, OffsetResult,
                         annual_rate, biomass_to_carbon, carbon_to_biomass, carbon_to_co2e, co2e_to_carbon,
                         landuse_stats, offset_fraction)
from .mcmc import PosteriorDraws, RegressionConfig, fit_regression, ols
from .pairing import PairedPixels, categorical_to_grid, pair_maps
from .posterior import ess, hdi, rhat
from .scenario import ScenarioResult, draw_coefficients, scenario, scenario_bruteforce, scenario_totals

__all__ = [
    "CARBON_FRACTION", "CO2_PER_C", "ClassStats", "CountryEmissions", "EmissionConfig", "OffsetResult",
    "annual_rate", "biomass_to_carbon", "carbon_to_biomass", "carbon_to_co2e", "co2e_to_carbon",
    "landuse_stats", "offset_fraction", "PosteriorDraws", "RegressionConfig", "fit_regression", "ols",
    "PairedPixels", "categorical_to_grid", "pair_maps", "ess", "hdi", "rhat",
    "ScenarioResult", "draw_coefficients", "scenario", "scenario_bruteforce", "scenario_totals",
]
