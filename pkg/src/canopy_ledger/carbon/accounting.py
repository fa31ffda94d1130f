"""Unit conversions, sequestration rates, emission offsets and land-use carbon totals."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..raster import RasterGrid

log = logging.getLogger(__name__)

CARBON_FRACTION = 0.47
CO2_PER_C = 44.0 / 12.0


def _nonneg(x):
    a = np.asarray(x, dtype=np.float64)
    if (a < 0).any():
        raise ValueError("conversion input must be non-negative")
    return a if a.ndim else float(a)


def biomass_to_carbon(biomass):
    return _nonneg(biomass) * CARBON_FRACTION


def carbon_to_biomass(carbon):
    return _nonneg(carbon) / CARBON_FRACTION


def carbon_to_co2e(carbon):
    return _nonneg(carbon) * CO2_PER_C


def co2e_to_carbon(co2e):
    return _nonneg(co2e) / CO2_PER_C


def annual_rate(total_co2e: float, years: float = 30.0, area_ha: float = 1.0) -> tuple[float, float]:
    """``(per_ha_per_year, total_per_year)``."""
    if years <= 0 or area_ha <= 0:
        raise ValueError("years and area must be positive")
    return total_co2e / (years * area_ha), total_co2e / years


# ---------------------------------------------------------------- emissions


@dataclass(frozen=True)
class CountryEmissions:
    name: str
    production_t: float
    factor_excl_sluc: float
    factor_incl_sluc: float
    national_total_emissions: float

    def __post_init__(self):
        if self.production_t <= 0:
            raise ValueError(f"{self.name}: production must be positive")
        if self.factor_excl_sluc < 0 or self.factor_incl_sluc < 0:
            raise ValueError(f"{self.name}: emission factors must be >= 0")

    def cocoa_emissions(self, include_sluc: bool) -> float:
        """Tonnes CO2e per year (kg/kg factors times tonnes of cocoa)."""
        return self.production_t * (self.factor_incl_sluc if include_sluc else self.factor_excl_sluc)


@dataclass(frozen=True)
class EmissionConfig:
    countries: tuple[CountryEmissions, ...]
    source: str = ""

    @classmethod
    def from_json(cls, d) -> "EmissionConfig":
        return cls(tuple(CountryEmissions(**c) for c in d["countries"]), d.get("source", ""))

    @classmethod
    def load(cls, path=None) -> "EmissionConfig":
        if path is None:
            text = resources.files("canopy_ledger").joinpath("data/emissions.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json(json.loads(text))


@dataclass
class OffsetResult:
    per_country: dict
    combined: float
    national: float
    cocoa_emissions: dict = field(default_factory=dict)


def offset_fraction(annual_total_co2e, config: EmissionConfig, include_sluc: bool = False) -> OffsetResult:
    """Annual sequestration as a percentage of cocoa emissions and of national emissions.

    ``annual_total_co2e`` is either one combined figure or a per-country mapping.
    """
    em = {c.name: c.cocoa_emissions(include_sluc) for c in config.countries}
    total_em = math.fsum(em.values())
    if total_em <= 0:
        raise ZeroDivisionError("cocoa emissions sum to zero")
    if isinstance(annual_total_co2e, dict):
        per = {k: 100.0 * annual_total_co2e.get(k, 0.0) / em[k] for k in em}
        combined_seq = math.fsum(annual_total_co2e.values())
    else:
        per = {}
        combined_seq = float(annual_total_co2e)
    national = math.fsum(c.national_total_emissions for c in config.countries)
    return OffsetResult(per, 100.0 * combined_seq / total_em,
                        100.0 * combined_seq / national if national > 0 else math.nan, em)


# ---------------------------------------------------------------- land-use classes

LANDUSE_CLASSES = ("cocoa", "disturbed_forest", "undisturbed_forest")
TMF_UNDISTURBED = 1
TMF_DISTURBED = 2


@dataclass(frozen=True)
class ClassStats:
    name: str
    n: int
    area_ha: float
    density_mean: float     # t C / ha
    density_sd: float
    total_c: float          # t C
    ci95: float             # half-width, t C


def landuse_masks(cocoa: np.ndarray, tmf: np.ndarray) -> dict:
    """Cocoa takes precedence: forest classes exclude cocoa pixels."""
    return {
        "cocoa": cocoa,
        "disturbed_forest": (tmf == TMF_DISTURBED) & ~cocoa,
        "undisturbed_forest": (tmf == TMF_UNDISTURBED) & ~cocoa,
    }


def landuse_stats(agbd_map: RasterGrid, cocoa_mask: RasterGrid, tmf_map: RasterGrid) -> dict[str, ClassStats]:
    """Per-class area, carbon density and total carbon on the aligned biomass grid.

    The CI half-width is 1.96 * sd(pixel carbon) * sqrt(n), treating pixels
    as independent.
    """
    agbd_map.require_alignment(cocoa_mask, "biomass map and cocoa mask")
    agbd_map.require_alignment(tmf_map, "biomass map and forest map")
    ok = agbd_map.valid(0)
    cocoa = cocoa_mask.valid(0) & (cocoa_mask.data[0] == 1) & ok
    tmf = np.where(tmf_map.valid(0) & ok, tmf_map.data[0], 0)
    cell_ha = agbd_map.transform.cell_area / 1e4
    out = {}
    for name, m in landuse_masks(cocoa, tmf).items():
        n = int(m.sum())
        if n == 0:
            log.info("land-use class %s is empty; omitted", name)
            continue
        dens = CARBON_FRACTION * agbd_map.data[0][m].astype(np.float64)
        pix = dens * cell_ha
        out[name] = ClassStats(name, n, n * cell_ha, float(dens.mean()), float(dens.std()),
                               math.fsum(pix), 1.96 * float(pix.std()) * math.sqrt(n))
    return out
