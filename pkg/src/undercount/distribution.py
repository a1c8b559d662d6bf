"""
The Gamma-count distribution.

Counts arise from a renewal process whose interarrival times are iid
Gamma(alpha, beta). The number of events in ``(0, T)`` has

    Pr(N = n) = G(alpha*n, beta*T) - G(alpha*(n+1), beta*T)

where ``G`` is the regularized lower incomplete gamma function and
``G(0, x) := 1``. ``alpha = 1`` gives the Poisson distribution with mean
``beta*T``; ``alpha > 1`` is underdispersed and ``alpha < 1`` overdispersed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .special import (
    DomainError,
    gammainc_lower,
    gammainc_upper,
    log_gamma,
    log_q_gamma,
    p_gamma,
    q_gamma,
)

__all__ = [
    "GammaCountDist",
    "PmfTable",
    "pmf",
    "cdf",
    "mean",
    "variance",
    "interarrival_hazard",
    "pmf_table",
    "truncation_point",
    "expected_count",
    "pmf_array",
    "cdf_tail",
]

_TERM_TOL = 1e-12


@dataclass(frozen=True)
class GammaCountDist:
    """Gamma-count law with dispersion ``alpha``, rate ``beta`` and exposure ``horizon``."""

    alpha: float
    beta: float
    horizon: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "horizon"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"GammaCountDist.{name} must be finite and positive, got {value!r}")

    @property
    def rate_time(self):
        """The product ``beta * T`` that enters every incomplete gamma call."""
        return self.beta * self.horizon

    @property
    def interarrival_mean(self):
        return self.alpha / self.beta

    @property
    def interarrival_variance(self):
        return self.alpha / self.beta**2

    @classmethod
    def from_linear_predictor(cls, alpha, eta, horizon=1.0):
        """Regression parameterization: E(tau) = alpha / beta = exp(-eta)."""
        return cls(alpha=alpha, beta=alpha * math.exp(eta), horizon=horizon)


@dataclass(frozen=True)
class PmfTable:
    probs: tuple
    n_max: int
    tail_mass: float
    mean: float = field(default=math.nan)
    variance: float = field(default=math.nan)

    def as_rows(self):
        return [(n, p) for n, p in enumerate(self.probs)]


def pmf(n, d):
    """Probability of exactly ``n`` events in the window."""
    if n < 0 or int(n) != n:
        raise DomainError(f"count must be a non-negative integer, got {n!r}")
    n = int(n)
    x = d.rate_time
    a_lo = d.alpha * n
    a_hi = d.alpha * (n + 1)
    if n == 0:
        # G(0, x) := 1
        return q_gamma(a_hi, x)
    # difference of whichever tail is smaller avoids cancellation near 1
    lower = p_gamma(a_lo, x)
    if lower < 0.5:
        value = lower - p_gamma(a_hi, x)
    else:
        value = q_gamma(a_hi, x) - q_gamma(a_lo, x)
    return max(value, 0.0)


def cdf(n, d):
    """Pr(N <= n) = 1 - G(alpha*(n+1), beta*T)."""
    if n < 0 or int(n) != n:
        raise DomainError(f"count must be a non-negative integer, got {n!r}")
    return q_gamma(d.alpha * (int(n) + 1), d.rate_time)


def truncation_point(d):
    """Smallest index beyond which G(alpha*i, beta*T) terms are negligible.

    Both conditions must hold: the term is below 1e-12 and ``i`` has passed
    ``2*beta*T/alpha + 30``. The second guard matters because the terms stay
    close to 1 until ``i`` approaches ``beta*T/alpha``.
    """
    floor = 2.0 * d.rate_time / d.alpha + 30.0
    i = int(math.floor(floor)) + 1
    while p_gamma(d.alpha * i, d.rate_time) >= _TERM_TOL:
        i += 1
    return i


def mean(d):
    """Expected count, sum over i >= 1 of G(alpha*i, beta*T)."""
    if d.alpha == 1.0:
        return d.rate_time
    x = d.rate_time
    floor = 2.0 * x / d.alpha + 30.0
    total = 0.0
    i = 1
    while True:
        term = p_gamma(d.alpha * i, x)
        total += term
        if term < _TERM_TOL and i > floor:
            return total
        i += 1


def variance(d):
    """Count variance by direct summation of n^2 * pmf(n)."""
    n_stop = truncation_point(d)
    probs = _pmf_range(d, n_stop)
    n = np.arange(n_stop + 1, dtype=float)
    m = float(np.dot(n, probs))
    second = float(np.dot(n * n, probs))
    return max(second - m * m, 0.0)


def _pmf_range(d, n_max):
    return np.array([pmf(k, d) for k in range(n_max + 1)])


def interarrival_hazard(t, alpha, beta):
    """Hazard f(t) / (1 - F(t)) of the Gamma(alpha, beta) interarrival law.

    Evaluated in log space, so it stays finite when F(t) is numerically 1.
    """
    if not (t > 0):
        raise DomainError(f"hazard requires t > 0, got {t!r}")
    if alpha <= 0 or beta <= 0:
        raise DomainError("hazard requires alpha, beta > 0")
    if alpha == 1.0:
        return float(beta)
    log_pdf = alpha * math.log(beta) + (alpha - 1.0) * math.log(t) - beta * t - log_gamma(alpha)
    log_surv = log_q_gamma(alpha, beta * t)
    return math.exp(log_pdf - log_surv)


def pmf_table(d, n_max):
    """PMF for counts ``0..n_max`` with the leftover mass and the distribution moments."""
    if n_max < 0:
        raise DomainError(f"n_max must be non-negative, got {n_max}")
    probs = tuple(float(v) for v in _pmf_range(d, int(n_max)))
    tail = cdf_tail(int(n_max), d)
    return PmfTable(probs=probs, n_max=int(n_max), tail_mass=tail, mean=mean(d), variance=variance(d))


def cdf_tail(n, d):
    """Pr(N > n) = G(alpha*(n+1), beta*T), computed without cancellation."""
    return p_gamma(d.alpha * (n + 1), d.rate_time)


# --- vectorized helpers for regression code ---------------------------------

def pmf_array(y, alpha, bt):
    """Vectorized pmf for counts ``y`` at rate-times ``bt`` (broadcast)."""
    y, bt = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(bt, dtype=float))
    a_lo = alpha * y
    a_hi = alpha * (y + 1.0)
    zero = a_lo == 0
    p_lo = np.ones(y.shape)
    p_lo[~zero] = gammainc_lower(a_lo[~zero], bt[~zero])
    out = p_lo - gammainc_lower(a_hi, bt)
    # near the top of the distribution both lower tails are close to 1;
    # take the difference of upper tails there instead
    upper = p_lo >= 0.5
    if np.any(upper):
        q_lo = np.zeros(int(upper.sum()))
        nz = ~zero[upper]
        q_lo[nz] = gammainc_upper(a_lo[upper][nz], bt[upper][nz])
        out[upper] = gammainc_upper(a_hi[upper], bt[upper]) - q_lo
    return np.maximum(out, 0.0)


def expected_count(alpha, bt):
    """Vectorized expected count for a common ``alpha`` over rate-times ``bt``."""
    bt = np.atleast_1d(np.asarray(bt, dtype=float))
    if alpha == 1.0:
        return bt.copy()
    floor = 2.0 * bt.max() / alpha + 30.0
    total = np.zeros_like(bt)
    i = 1
    while True:
        term = gammainc_lower(alpha * i, bt)
        total += term
        if i > floor and term.max() < _TERM_TOL:
            return total
        i += 1
