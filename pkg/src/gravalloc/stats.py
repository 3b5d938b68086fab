"""Small statistics helpers shared by the studies."""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptySample


def ks_statistic(samples, cdf) -> float:
    """Sup-norm distance between the empirical CDF and a reference CDF.

    ``cdf`` is a callable mapping a sorted sample array to reference CDF
    values. Needs at least two samples.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        raise EmptySample("KS statistic needs at least 2 samples")
    s = np.sort(samples)
    n = s.size
    ref = np.asarray(cdf(s), dtype=float)
    upper = np.arange(1, n + 1) / n - ref
    lower = ref - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def exponential_cdf(rate: float):
    return lambda t: 1.0 - np.exp(-rate * np.asarray(t))


def summarize(values) -> dict:
    """Mean, standard error, and quantiles of a 1-d sample."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {"count": 0}
    qs = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0]
    out = {
        "count": int(values.size),
        "mean": float(values.mean()),
        "stderr": float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else None,
        "quantiles": {str(q): float(np.quantile(values, q)) for q in qs},
    }
    return out


def binomial_band(p: float, m: int, sigmas: float = 5.0) -> float:
    """Half-width of the +-sigmas binomial frequency band around p."""
    return sigmas * math.sqrt(p * (1.0 - p) / m)
