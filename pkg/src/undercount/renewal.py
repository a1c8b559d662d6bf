"""
Gamma renewal-process simulation.

Two counting modes are offered:

* ``windows``: one long realization started at t = 0, counted in consecutive
  windows of fixed width (the picture of a renewal process drawn as a strip
  of events with tick marks).
* ``replicates``: many independent realizations, each counted only in its
  first window ``(0, T)``. Only this mode reproduces the Gamma-count PMF
  exactly, because later windows of an ordinary renewal process do not start
  at an arrival.

Random streams
--------------
Every stream is a Philox (counter-based) generator seeded from
``SeedSequence(seed, spawn_key=(stream,))``. Replicates are simulated in
fixed-size blocks of ``BLOCK_SIZE``; block ``k`` uses stream ``k + 1`` and the
long realization uses stream 0, so output does not depend on how blocks are
scheduled across workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .special import DomainError

__all__ = [
    "BLOCK_SIZE",
    "RenewalConfig",
    "SimResult",
    "make_rng",
    "gamma_deviate",
    "gamma_deviates",
    "simulate_events",
    "simulate_first_window_counts",
    "gamma_count_variates",
    "count_frequencies",
    "total_variation",
]

BLOCK_SIZE = 1 << 16


def make_rng(seed, stream=0):
    """Philox generator for ``(seed, stream)``; distinct streams are independent."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class RenewalConfig:
    alpha: float
    mean_interarrival: float
    horizon: float
    window_width: float
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "mean_interarrival", "horizon", "window_width"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"RenewalConfig.{name} must be finite and positive, got {value!r}")
        if self.window_width > self.horizon:
            raise DomainError("window_width must not exceed horizon")
        if not (0 <= int(self.seed) < 2**64):
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def beta(self):
        return self.alpha / self.mean_interarrival

    @property
    def n_windows(self):
        return int(math.floor(self.horizon / self.window_width + 1e-12))


@dataclass(frozen=True)
class SimResult:
    event_times: np.ndarray
    window_counts: np.ndarray


def _mt_shape(alpha, rng):
    # Marsaglia-Tsang squeeze method, alpha >= 1
    d = alpha - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng.random()
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v


def gamma_deviate(alpha, beta, rng):
    """One Gamma(alpha, rate=beta) draw.

    ``alpha < 1`` is boosted: draw at ``alpha + 1`` and multiply by
    ``U**(1/alpha)``.
    """
    if alpha <= 0 or beta <= 0:
        raise DomainError("gamma_deviate requires alpha, beta > 0")
    if alpha >= 1.0:
        return _mt_shape(alpha, rng) / beta
    g = _mt_shape(alpha + 1.0, rng)
    u = rng.random()
    return g * math.exp(math.log(u) / alpha) / beta


def _mt_shape_vec(alpha, size, rng):
    d = alpha - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(size)
    pending = np.arange(size)
    while pending.size:
        m = pending.size
        x = rng.standard_normal(m)
        u = rng.random(m)
        v = 1.0 + c * x
        ok = v > 0.0
        v = np.where(ok, v, 1.0) ** 3
        x2 = x * x
        with np.errstate(divide="ignore"):
            accept = ok & (
                (u < 1.0 - 0.0331 * x2 * x2)
                | (np.log(u) < 0.5 * x2 + d * (1.0 - v + np.log(v)))
            )
        out[pending[accept]] = d * v[accept]
        pending = pending[~accept]
    return out


def gamma_deviates(alpha, beta, size, rng):
    """Vectorized :func:`gamma_deviate`."""
    if alpha <= 0 or beta <= 0:
        raise DomainError("gamma_deviates requires alpha, beta > 0")
    if alpha >= 1.0:
        return _mt_shape_vec(alpha, size, rng) / beta
    g = _mt_shape_vec(alpha + 1.0, size, rng)
    u = rng.random(size)
    with np.errstate(divide="ignore"):
        return g * np.exp(np.log(u) / alpha) / beta


def simulate_events(cfg, rng=None):
    """Simulate one realization on ``[0, horizon)`` and count it in consecutive windows."""
    if rng is None:
        rng = make_rng(cfg.seed, 0)
    beta = cfg.beta
    expected = cfg.horizon / cfg.mean_interarrival
    batch = int(expected + 6.0 * math.sqrt(expected / cfg.alpha + 1.0) + 64)
    pieces = []
    last = 0.0
    while last < cfg.horizon:
        draws = gamma_deviates(cfg.alpha, beta, batch, rng)
        times = last + np.cumsum(draws)
        pieces.append(times)
        last = times[-1]
        batch = max(64, batch // 4)
    times = np.concatenate(pieces)
    event_times = times[times < cfg.horizon]

    n_windows = cfg.n_windows
    edge = n_windows * cfg.window_width
    idx = np.floor(event_times[event_times < edge] / cfg.window_width).astype(np.int64)
    idx = np.minimum(idx, n_windows - 1)
    counts = np.bincount(idx, minlength=n_windows)
    return SimResult(event_times=event_times, window_counts=counts)


def _first_window_block(alpha, beta, window, size, rng):
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (size,))
    counts = np.zeros(size, dtype=np.int64)
    elapsed = np.zeros(size)
    active = np.arange(size)
    while active.size:
        elapsed[active] += gamma_deviates(alpha, 1.0, active.size, rng) / beta[active]
        inside = elapsed[active] < window
        active = active[inside]
        counts[active] += 1
    return counts


def gamma_count_variates(alpha, rate_time, rng):
    """Independent Gamma-count draws, one per entry of ``rate_time`` (beta * T).

    Each draw is the number of arrivals in ``(0, 1)`` of a renewal process
    with Gamma(alpha, rate_time) interarrivals.
    """
    rate_time = np.atleast_1d(np.asarray(rate_time, dtype=float))
    if alpha <= 0 or np.any(rate_time <= 0):
        raise DomainError("gamma_count_variates requires alpha > 0 and positive rate_time")
    return _first_window_block(alpha, rate_time, 1.0, rate_time.size, rng)


def simulate_first_window_counts(alpha, mean_interarrival, window, n_replicates, seed, workers=None):
    """Counts in ``(0, window)`` for independent realizations of the process.

    Each block of ``BLOCK_SIZE`` replicates owns its own stream (see module
    docstring), so the result is identical for any ``workers`` value.
    """
    if n_replicates < 0:
        raise DomainError("n_replicates must be non-negative")
    beta = alpha / mean_interarrival
    n_blocks = -(-int(n_replicates) // BLOCK_SIZE)

    def run(k):
        size = min(BLOCK_SIZE, n_replicates - k * BLOCK_SIZE)
        return _first_window_block(alpha, beta, window, size, make_rng(seed, k + 1))

    if workers is None:
        workers = _default_workers()
    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, range(n_blocks)))
    else:
        blocks = [run(k) for k in range(n_blocks)]
    if not blocks:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(blocks)


def _default_workers():
    raw = os.environ.get("UNDERCOUNT_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        value = 1
    if value <= 0:
        value = os.cpu_count() or 1
    return value


def count_frequencies(counts, n_max=None):
    """Empirical relative frequencies of counts ``0..n_max``."""
    counts = np.asarray(counts, dtype=np.int64)
    if n_max is None:
        n_max = int(counts.max()) if counts.size else 0
    freq = np.bincount(np.minimum(counts, n_max + 1), minlength=n_max + 2)[: n_max + 1]
    return freq / max(counts.size, 1)


def total_variation(empirical, probs, tail_mass=0.0):
    """Total-variation distance between two PMFs on a shared support.

    ``empirical`` may be longer or shorter than ``probs``; missing entries
    count as zero. ``tail_mass`` is analytic mass beyond ``probs``.
    """
    e = np.asarray(empirical, dtype=float)
    p = np.asarray(probs, dtype=float)
    k = max(e.size, p.size)
    e = np.pad(e, (0, k - e.size))
    p = np.pad(p, (0, k - p.size))
    return 0.5 * (np.abs(e - p).sum() + tail_mass)
