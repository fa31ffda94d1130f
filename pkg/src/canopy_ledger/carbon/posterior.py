"""Posterior summaries: highest-density intervals, split R-hat and effective sample size."""

from __future__ import annotations

import math

import numpy as np

from ..errors import EmptyDataError


def hdi(samples, mass: float = 0.95) -> tuple[float, float]:
    """Shortest interval containing ``ceil(mass * n)`` sorted samples; the earliest wins ties."""
    s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = s.size
    if n < 20:
        raise EmptyDataError(f"HDI needs at least 20 samples, got {n}")
    if not 0 < mass <= 1:
        raise ValueError(f"mass must be in (0, 1], got {mass}")
    k = min(n, math.ceil(mass * n))
    widths = s[k - 1 :] - s[: n - k + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + k - 1])


def _as_chains(chains) -> np.ndarray:
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError("expected (chains, draws) or (chains, draws, params)")
    if x.shape[0] < 2:
        raise ValueError("R-hat needs at least 2 chains")
    if x.shape[1] < 4:
        raise ValueError("R-hat needs at least 4 draws per chain")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half :]], axis=0)


def rhat(chains) -> np.ndarray:
    """Split potential scale reduction per parameter; ``inf`` where within-chain variance is zero."""
    x = _split(_as_chains(chains))
    m, n = x.shape[:2]
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    return np.where(W > 0, r, np.inf)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=-1)
    ac = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return ac / n


def ess(chains) -> np.ndarray:
    """Multi-chain effective sample size with Geyer's initial monotone sequence (split chains)."""
    x = _split(_as_chains(chains))
    m, n = x.shape[:2]
    out = np.empty(x.shape[2])
    for p in range(x.shape[2]):
        c = x[:, :, p]
        acov = _autocov(c)
        W = c.var(axis=1, ddof=1).mean()
        if W <= 0:
            out[p] = math.nan
            continue
        var_plus = W * (n - 1) / n + c.mean(axis=1).var(ddof=1)
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        # pair sums, truncated at the first negative pair and made monotone
        t = 0
        pairs = []
        while t + 1 < n:
            s = rho[t] + rho[t + 1]
            if s < 0:
                break
            pairs.append(s)
            t += 2
        pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.asarray([1.0])
        tau = -1.0 + 2.0 * pairs.sum()
        out[p] = m * n / max(tau, 1.0 / math.log10(m * n))
    return out
