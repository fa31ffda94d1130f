"""Carbon gains if every cocoa pixel below a shade threshold were raised to it.

Below-threshold pixels take the regression's AGB at the threshold; pixels at
or above it keep their mapped AGB. Totals are correctly rounded sums of the
per-pixel terms (``math.fsum``), so any summation order gives the same bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .accounting import CARBON_FRACTION, CO2_PER_C, annual_rate
from .mcmc import PosteriorDraws
from .posterior import hdi

N_SCENARIO_DRAWS = 100
DEFAULT_THRESHOLDS = (15.0, 20.0, 30.0, 40.0)


def exact_partials(values) -> list[float]:
    """Non-overlapping floats whose exact sum equals the exact sum of ``values``."""
    partials: list[float] = []
    for x in values:
        x = float(x)
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]
    return partials


def _exact_product(f: float, n: int) -> list[float]:
    """``[hi, lo]`` with hi + lo == f * n exactly."""
    hi = f * n
    lo = float(Fraction(f) * n - Fraction(hi))
    return [hi, lo]


def draw_coefficients(draws: PosteriorDraws | np.ndarray, n: int = N_SCENARIO_DRAWS, seed: int = 0) -> np.ndarray:
    """``n`` joint (b0, b1, b2) vectors sampled without replacement from post-warmup draws."""
    pooled = draws.pooled()[:, :3] if isinstance(draws, PosteriorDraws) else np.asarray(draws)[:, :3]
    rng = np.random.default_rng(seed)
    idx = rng.choice(pooled.shape[0], size=min(n, pooled.shape[0]), replace=False)
    return pooled[idx]


def quad(coef, c) -> np.ndarray:
    coef = np.asarray(coef, dtype=np.float64)
    return coef[..., 0] + coef[..., 1] * c + coef[..., 2] * c * c


@dataclass
class ScenarioResult:
    threshold: float
    added_carbon_mean: float
    hdi_low: float
    hdi_high: float
    co2e: float
    annual_rate_per_ha: float
    annual_total: float
    current_biomass: float
    added_carbon_draws: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    per_country: dict = field(default_factory=dict)


def scenario_totals(coefs: np.ndarray, cover, agb, threshold: float) -> tuple[np.ndarray, float]:
    """Scenario biomass total per coefficient draw and the current total."""
    cover = np.asarray(cover, dtype=np.float64)
    agb = np.asarray(agb, dtype=np.float64)
    below = cover < threshold
    n_below = int(below.sum())
    above = exact_partials(agb[~below])
    f = quad(coefs, threshold)
    totals = np.array([math.fsum(_exact_product(float(fi), n_below) + above) for fi in f])
    return totals, math.fsum(agb)


def scenario_bruteforce(coefs: np.ndarray, cover, agb, threshold: float) -> tuple[np.ndarray, float]:
    """Per-pixel loop reference for :func:`scenario_totals`."""
    out = []
    for b0, b1, b2 in np.asarray(coefs, dtype=np.float64):
        f = b0 + b1 * threshold + b2 * threshold * threshold
        terms = []
        for c, a in zip(cover, agb):
            terms.append(f if c < threshold else float(a))
        out.append(math.fsum(terms))
    return np.asarray(out), math.fsum(float(a) for a in agb)


def _summarise(added_c: np.ndarray, threshold, n_pixels, cell_ha, years, current):
    lo, hi = hdi(added_c, 0.95)
    mean = float(np.mean(added_c))
    co2e = mean * CO2_PER_C
    area = n_pixels * cell_ha
    per_ha, total_yr = annual_rate(co2e, years, area) if area > 0 else (math.nan, co2e / years)
    return ScenarioResult(float(threshold), mean, lo, hi, co2e, per_ha, total_yr, current, added_c)


def scenario(coefs: np.ndarray, cover, agb, threshold: float, cell_ha: float = 0.25, years: float = 30.0,
             country=None) -> ScenarioResult:
    """Added carbon (t C) relative to the current mapped total, with a 95% HDI over draws."""
    if not 0 < threshold < 100:
        raise ValueError(f"threshold must be in (0, 100), got {threshold}")
    cover = np.asarray(cover, dtype=np.float64)
    agb = np.asarray(agb, dtype=np.float64)
    totals, current = scenario_totals(coefs, cover, agb, threshold)
    added_c = CARBON_FRACTION * (totals - current)
    res = _summarise(added_c, threshold, cover.size, cell_ha, years, current)
    if country is not None:
        country = np.asarray(country)
        for cid in np.unique(country):
            m = country == cid
            t, cur = scenario_totals(coefs, cover[m], agb[m], threshold)
            sub = _summarise(CARBON_FRACTION * (t - cur), threshold, int(m.sum()), cell_ha, years, cur)
            res.per_country[int(cid)] = sub
    return res


def scenario_table(results: Sequence[ScenarioResult]) -> list[dict]:
    return [
        {"threshold": r.threshold, "mean_tC": r.added_carbon_mean, "hdi_lo": r.hdi_low, "hdi_hi": r.hdi_high,
         "co2e_t": r.co2e, "annual_rate": r.annual_rate_per_ha}
        for r in results
    ]
