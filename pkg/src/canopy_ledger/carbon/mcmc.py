"""Bayesian quadratic cover-to-biomass regression sampled by adaptive random-walk Metropolis.

The design matrix [1, c, c^2] is orthogonalised (D = QR) and the chain moves
in (gamma = R beta, tau = log sigma). With flat priors on beta and on
log sigma the log posterior is

    -n * tau - (yy - 2 gamma.qy + gamma.gamma) / (2 exp(2 tau)),

so each step costs O(1) given the sufficient statistics yy and qy = Q'y.
All chains advance together; the proposal covariance and scale adapt
during warmup only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError, EmptyDataError
from .posterior import ess, rhat

log = logging.getLogger(__name__)

PARAM_NAMES = ("beta0", "beta1", "beta2", "sigma")


@dataclass(frozen=True)
class RegressionConfig:
    subsample: float = 0.10
    max_cover: float = 40.0
    chains: int = 4
    iters: int = 2000
    warmup: int = 1000
    seed: int = 0
    min_pairs: int = 1000
    rhat_max: float = 1.01
    ess_min: float = 400.0
    max_retries: int = 3
    target_accept: float = 0.3


@dataclass
class PosteriorDraws:
    draws: np.ndarray            # (chains, iters, 4): beta0, beta1, beta2, sigma
    warmup: np.ndarray           # (iters,) bool
    rhat: np.ndarray
    ess: np.ndarray
    acceptance: np.ndarray       # post-warmup acceptance per chain
    n_pairs: int
    attempts: int = 1
    ols: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def post(self) -> np.ndarray:
        """(chains, kept, 4) post-warmup draws."""
        return self.draws[:, ~self.warmup]

    def pooled(self) -> np.ndarray:
        p = self.post()
        return p.reshape(-1, p.shape[-1])

    def summary(self) -> dict:
        p = self.pooled()
        return {
            name: {"mean": float(p[:, i].mean()), "sd": float(p[:, i].std(ddof=1)),
                   "rhat": float(self.rhat[i]), "ess": float(self.ess[i])}
            for i, name in enumerate(PARAM_NAMES)
        }


def design(cover) -> np.ndarray:
    c = np.asarray(cover, dtype=np.float64)
    return np.stack([np.ones_like(c), c, c * c], axis=1)


def ols(cover, agb) -> np.ndarray:
    return np.linalg.lstsq(design(cover), np.asarray(agb, dtype=np.float64), rcond=None)[0]


def select_pairs(cover, agb, config: RegressionConfig):
    """Drop covers above the cap, check the count, then take the seeded subsample."""
    cover = np.asarray(cover, dtype=np.float64)
    agb = np.asarray(agb, dtype=np.float64)
    keep = np.nonzero(cover <= config.max_cover)[0]
    if keep.size < config.min_pairs:
        raise EmptyDataError(f"{keep.size} pairs at cover <= {config.max_cover}; need {config.min_pairs}")
    if config.subsample < 1.0:
        k = max(4, int(round(config.subsample * keep.size)))
        rng = np.random.default_rng(config.seed)
        keep = np.sort(rng.choice(keep, size=k, replace=False))
    return cover[keep], agb[keep]


def _sample(qy, yy, n, R, config: RegressionConfig, iters: int, warmup: int, seed: int):
    k = qy.size
    dim = k + 1
    gamma_hat = qy
    sse = max(yy - qy @ qy, 1e-12 * max(yy, 1.0))
    s_hat = math.sqrt(sse / n)
    tau_hat = math.log(s_hat)
    scale_init = np.array([s_hat] * k + [1.0 / math.sqrt(2.0 * n)])

    def logp(th):
        g, tau = th[:, :k], th[:, k]
        q = yy - 2.0 * g @ qy + np.einsum("ij,ij->i", g, g)
        return -n * tau - q / (2.0 * np.exp(2.0 * tau))

    c = config.chains
    rngs = [np.random.default_rng([seed, j]) for j in range(c)]
    z0 = np.stack([r.standard_normal(dim) for r in rngs])
    theta = np.concatenate([np.broadcast_to(gamma_hat, (c, k)), np.full((c, 1), tau_hat)], axis=1)
    theta = theta + 3.0 * scale_init * z0   # overdispersed starts
    lp = logp(theta)
    cov = np.diag(scale_init ** 2)
    log_scale = np.full(c, math.log(2.38 ** 2 / dim))
    chol = np.linalg.cholesky(cov)
    out = np.empty((c, iters, dim))
    acc = np.zeros((c, iters), dtype=bool)
    adapt_start = min(200, warmup // 2)
    for t in range(iters):
        z = np.stack([r.standard_normal(dim) for r in rngs])
        prop = theta + np.exp(0.5 * log_scale)[:, None] * (z @ chol.T)
        lpp = logp(prop)
        u = np.array([r.random() for r in rngs])
        log_ratio = np.minimum(lpp - lp, 0.0)
        ok = np.log(u) < log_ratio
        theta = np.where(ok[:, None], prop, theta)
        lp = np.where(ok, lpp, lp)
        out[:, t] = theta
        acc[:, t] = ok
        if t < warmup:
            log_scale += (np.exp(log_ratio) - config.target_accept) / math.sqrt(t + 1.0)
            if t >= adapt_start and (t - adapt_start) % 50 == 0:
                hist = out[:, adapt_start // 2 : t + 1].reshape(-1, dim)
                emp = np.cov(hist, rowvar=False) + 1e-10 * np.diag(scale_init ** 2)
                chol = np.linalg.cholesky(emp)
                log_scale[:] = log_scale.mean()
    gam = out[:, :, :k]
    beta = np.einsum("ij,ctj->cti", np.linalg.inv(R), gam)
    draws = np.concatenate([beta, np.exp(out[:, :, k:])], axis=2)
    return draws, acc


def fit_regression(cover, agb, config: RegressionConfig = RegressionConfig()) -> PosteriorDraws:
    """Sample the posterior of agb = b0 + b1*c + b2*c^2 + N(0, sigma).

    Post-warmup split R-hat must be below ``rhat_max`` and the effective
    sample size above ``ess_min`` for every parameter. Failed attempts are
    rerun with the post-warmup length doubled, up to ``max_retries`` times,
    before :class:`ConvergenceError` is raised.
    """
    c, y = select_pairs(cover, agb, config)
    n = y.size
    D = design(c)
    Q, R = np.linalg.qr(D)
    qy = Q.T @ y
    yy = float(y @ y)
    beta_ols = np.linalg.solve(R, qy)
    kept = config.iters - config.warmup
    if kept < 4:
        raise ValueError("need at least 4 post-warmup iterations")
    for attempt in range(config.max_retries + 1):
        iters = config.warmup + kept
        draws, acc = _sample(qy, yy, n, R, config, iters, config.warmup, config.seed + 7919 * attempt)
        warm = np.arange(iters) < config.warmup
        post = draws[:, ~warm]
        r = rhat(post)
        e = ess(post)
        rate = acc[:, ~warm].mean(axis=1)
        log.info("attempt %d: %d iters, rhat %s, ess %s, acceptance %s", attempt + 1, iters,
                 np.round(r, 4), np.round(e, 0), np.round(rate, 3))
        if np.all(r < config.rhat_max) and np.all(e > config.ess_min):
            return PosteriorDraws(draws, warm, r, e, rate, n, attempt + 1, beta_ols)
        kept *= 2
    raise ConvergenceError(
        f"sampler did not converge after {config.max_retries + 1} attempts: rhat {np.round(r, 4)}, ess {np.round(e, 0)}"
    )
