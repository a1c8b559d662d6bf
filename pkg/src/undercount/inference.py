"""
Interval estimation and prediction.

Profiling works on a :class:`LikelihoodSurface`: a log-likelihood over a
working parameter vector, its maximizer and covariance, and the names of
coordinates that are stored on the log scale (``alpha`` for Gamma-count
fits). Grids and interval endpoints are always reported on the natural
scale.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .design import N_COEF, STAGES, design_rows
from .distribution import GammaCountDist, expected_count, pmf_table
from .mle import GammaCountFit, _working_loglik, maximize
from .poisson import GlmFit, pearson_dispersion, poisson_loglik
from .renewal import _default_workers
from .special import chi2_quantile, normal_quantile

__all__ = [
    "ProfileError",
    "LikelihoodSurface",
    "ProfileTrace",
    "ProfileCI",
    "ProfileRegion",
    "PredictionRow",
    "PredictionBand",
    "surface",
    "wald_interval",
    "wald_ci",
    "profile",
    "profile_surface",
    "profile_region_2d",
    "prediction_grid",
    "predict",
    "estimated_pmfs",
]

N_GRID = 41
GRID_HALF_WIDTH = 4.0
MAX_EXTENSIONS = 4


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class LikelihoodSurface:
    loglik: Callable[[np.ndarray], float]
    theta: np.ndarray
    cov: np.ndarray
    names: tuple
    log_scale: frozenset = frozenset()

    def index(self, name):
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < len(self.names):
                raise ProfileError(f"parameter index {name} out of range")
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise ProfileError(f"unknown parameter {name!r}; choose from {list(self.names)}") from None

    def to_natural(self, j, w):
        return math.exp(w) if self.names[j] in self.log_scale else w

    def to_working(self, j, v):
        if self.names[j] in self.log_scale:
            if v <= 0:
                raise ProfileError(f"{self.names[j]} must be positive")
            return math.log(v)
        return v

    def natural_se(self, j):
        se_w = math.sqrt(max(self.cov[j, j], 0.0))
        if self.names[j] in self.log_scale:
            return math.exp(self.theta[j]) * se_w
        return se_w

    @property
    def max_loglik(self):
        return self.loglik(self.theta)


@dataclass(frozen=True)
class ProfileTrace:
    param_name: str
    grid: np.ndarray
    profile_loglik: np.ndarray
    mle_value: float
    mle_loglik: float
    nuisance: np.ndarray = field(default=None, repr=False)

    @property
    def deviance(self):
        return 2.0 * (self.mle_loglik - self.profile_loglik)

    def rows(self):
        return list(zip(self.grid.tolist(), self.profile_loglik.tolist(), self.deviance.tolist()))


@dataclass(frozen=True)
class ProfileCI:
    lower: float
    upper: float
    level: float
    cutoff: float
    lower_open: bool = False
    upper_open: bool = False

    def __iter__(self):
        return iter((self.lower, self.upper))

    def __getitem__(self, i):
        return (self.lower, self.upper)[i]


@dataclass(frozen=True)
class ProfileRegion:
    names: tuple
    x_grid: np.ndarray
    y_grid: np.ndarray
    deviance: np.ndarray  # shape (len(x_grid), len(y_grid))
    thresholds: dict
    mle: tuple


@dataclass(frozen=True)
class PredictionRow:
    stage: str
    defoliation: float
    eta_hat: float
    se_eta: float
    mean_count: float
    lower: float
    upper: float


@dataclass(frozen=True)
class PredictionBand:
    rows: tuple
    level: float
    model: str

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])


# --- surfaces ----------------------------------------------------------------

def surface(design, counts, fit):
    """Likelihood surface for a Gamma-count or Poisson fit on ``design``/``counts``."""
    X = np.asarray(getattr(design, "matrix", design), dtype=float)
    y = np.asarray(counts, dtype=float)
    if isinstance(fit, GammaCountFit):
        if fit.cov_working is None:
            raise ProfileError(f"fit has no valid covariance: {fit.curvature_error}")
        return LikelihoodSurface(
            loglik=_working_loglik(X, y),
            theta=fit.theta,
            cov=fit.cov_working,
            names=("alpha",) + tuple(fit.names),
            log_scale=frozenset({"alpha"}),
        )
    if isinstance(fit, GlmFit):
        def ll(beta):
            with np.errstate(over="ignore"):
                mu = np.exp(X @ beta)
            value = poisson_loglik(y, mu)
            return value if math.isfinite(value) else -math.inf

        return LikelihoodSurface(loglik=ll, theta=np.asarray(fit.coefficients, float), cov=fit.cov,
                                 names=tuple(fit.names))
    raise TypeError(f"cannot build a likelihood surface from {type(fit).__name__}")


def _as_surface(design, counts, fit):
    return fit if isinstance(fit, LikelihoodSurface) else surface(design, counts, fit)


# --- Wald --------------------------------------------------------------------

def wald_interval(estimate, se, level=0.95):
    z = normal_quantile(0.5 * (1.0 + level))
    return estimate - z * se, estimate + z * se


def wald_ci(fit, param, level=0.95, scale="natural"):
    """Wald interval ``estimate +/- z * SE``.

    For ``alpha`` the default is the symmetric interval on the alpha scale;
    ``scale="log"`` builds it for ``log(alpha)`` and exponentiates, which keeps
    the limits positive.
    """
    if isinstance(fit, LikelihoodSurface):
        s = fit
    elif isinstance(fit, GammaCountFit):
        if fit.cov_working is None:
            raise ProfileError(f"fit has no valid covariance: {fit.curvature_error}")
        s = LikelihoodSurface(loglik=None, theta=fit.theta, cov=fit.cov_working,
                              names=fit.param_names, log_scale=frozenset({"alpha"}))
    elif isinstance(fit, GlmFit):
        s = LikelihoodSurface(loglik=None, theta=np.asarray(fit.coefficients), cov=fit.cov, names=tuple(fit.names))
    else:
        raise TypeError(f"unsupported fit type {type(fit).__name__}")
    j = s.index(param)
    if s.names[j] in s.log_scale and scale == "log":
        lo, hi = wald_interval(s.theta[j], math.sqrt(max(s.cov[j, j], 0.0)), level)
        return math.exp(lo), math.exp(hi)
    est = s.to_natural(j, s.theta[j])
    return wald_interval(est, s.natural_se(j), level)


# --- profiles ----------------------------------------------------------------

def _nuisance_hinv(s, fixed):
    free = [k for k in range(s.theta.size) if k not in fixed]
    if not free:
        return free, None
    V = s.cov
    f = list(fixed)
    Vnn = V[np.ix_(free, free)]
    Vnf = V[np.ix_(free, f)]
    Vff = V[np.ix_(f, f)]
    try:
        cond = Vnn - Vnf @ np.linalg.solve(Vff, Vnf.T)
        np.linalg.cholesky(cond)
    except np.linalg.LinAlgError:
        cond = None
    return free, cond


class _Profiler:
    """Maximizes the surface with some working coordinates held fixed."""

    def __init__(self, s, fixed):
        self.s = s
        self.fixed = tuple(fixed)
        self.free, self.hinv = _nuisance_hinv(s, self.fixed)

    def __call__(self, fixed_values, start):
        s = self.s
        base = s.theta.copy()
        for k, v in zip(self.fixed, fixed_values):
            base[k] = v
        free = self.free

        def f(z):
            th = base.copy()
            th[free] = z
            return s.loglik(th)

        res = maximize(f, start, hinv0=self.hinv)
        return res.fun, res.x


def _grid_side(center, step, n, lower_bound=None):
    pts = center + step * np.arange(1, n + 1)
    if lower_bound is not None:
        pts = pts[pts > lower_bound]
    return pts


def _sweep(prof, s, j, values, start, cutoff, ll_hat, extend_step, lower_bound):
    """Profile along ``values`` (moving away from the MLE), extending past the cutoff if needed."""
    out_v, out_ll, out_z = [], [], []
    z = start
    values = list(values)
    extensions = 0
    i = 0
    while True:
        while i < len(values):
            v = values[i]
            ll, z = prof((s.to_working(j, v),), z)
            out_v.append(v)
            out_ll.append(ll)
            out_z.append(z)
            i += 1
        crossed = out_ll and 2.0 * (ll_hat - out_ll[-1]) > cutoff
        if crossed or extensions >= MAX_EXTENSIONS or extend_step == 0:
            break
        last = values[-1] if values else s.to_natural(j, s.theta[j])
        more = _grid_side(last, extend_step, N_GRID // 2, lower_bound)
        if more.size == 0:
            break
        values.extend(more.tolist())
        extensions += 1
    return out_v, out_ll, out_z


def _refine(prof, s, j, inner, outer, z_inner, cutoff, ll_hat):
    def g(v):
        ll, _ = prof((s.to_working(j, v),), z_inner)
        return 2.0 * (ll_hat - ll) - cutoff

    g_in = g(inner)
    g_out = g(outer)
    if not (g_in <= 0 <= g_out):
        return None
    return optimize.brentq(g, inner, outer, xtol=1e-12, rtol=1e-14, maxiter=200)


def profile_surface(s, param, level=0.95, n_grid=N_GRID, half_width=GRID_HALF_WIDTH, workers=None):
    """Profile log-likelihood of one parameter and its likelihood-ratio interval.

    The grid spans the estimate +/- ``half_width`` Wald standard errors with
    the estimate at its centre. Each side is swept outward, warm-starting
    every optimization from its neighbour, and extended if the chi-square
    cutoff is not reached. Endpoints are bracketed on the grid and then
    solved to full precision by Brent's method.
    """
    j = s.index(param)
    name = s.names[j]
    ll_hat = s.max_loglik
    cutoff = chi2_quantile(level, 1)
    est = s.to_natural(j, s.theta[j])
    se = s.natural_se(j)
    if not se > 0:
        raise ProfileError(f"standard error of {name} is not positive")
    half = n_grid // 2
    step = half_width * se / half
    lower_bound = 0.0 if name in s.log_scale else None
    left = est - step * np.arange(1, half + 1)
    if lower_bound is not None and left[-1] <= lower_bound:
        w = s.theta[j]
        se_w = math.sqrt(s.cov[j, j])
        left = np.exp(w - half_width * se_w * np.arange(1, half + 1) / half)
    right = est + step * np.arange(1, half + 1)
    left_step = -(left[-1] - left[-2]) if left.size > 1 else -step
    left_step = -abs(left_step)

    prof = _Profiler(s, (j,))
    start = s.theta[prof.free]

    def run_left():
        return _sweep(prof, s, j, left, start, cutoff, ll_hat, left_step, lower_bound)

    def run_right():
        return _sweep(prof, s, j, right, start, cutoff, ll_hat, step, None)

    if workers is None:
        workers = _default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fl, fr = pool.submit(run_left), pool.submit(run_right)
            lv, lll, lz = fl.result()
            rv, rll, rz = fr.result()
    else:
        lv, lll, lz = run_left()
        rv, rll, rz = run_right()

    def endpoint(vals, lls, zs):
        prev_v, prev_z = est, start
        for v, ll, z in zip(vals, lls, zs):
            if 2.0 * (ll_hat - ll) > cutoff:
                root = _refine(prof, s, j, prev_v, v, prev_z, cutoff, ll_hat)
                if root is not None:
                    return root, False
                return 0.5 * (prev_v + v), False
            prev_v, prev_z = v, z
        return (vals[-1] if vals else est), True

    lo, lo_open = endpoint(lv, lll, lz)
    hi, hi_open = endpoint(rv, rll, rz)

    grid = np.array(lv[::-1] + [est] + rv)
    pll = np.array(lll[::-1] + [ll_hat] + rll)
    nz = [*lz[::-1], start, *rz]
    trace = ProfileTrace(
        param_name=name,
        grid=grid,
        profile_loglik=np.minimum(pll, ll_hat),
        mle_value=est,
        mle_loglik=ll_hat,
        nuisance=np.array(nz) if nz and np.size(nz[0]) else None,
    )
    return trace, ProfileCI(lo, hi, level, cutoff, lo_open, hi_open)


def profile(design, counts, fit, param_name, level=0.95, **kwargs):
    """Profile-likelihood trace and confidence interval for ``param_name``."""
    return profile_surface(_as_surface(design, counts, fit), param_name, level, **kwargs)


def profile_region_2d(design, counts, fit, params, levels=(0.90, 0.95, 0.99),
                      n_grid=N_GRID, half_width=GRID_HALF_WIDTH):
    """Two-parameter profile deviance on an ``n_grid x n_grid`` lattice.

    Returns the lattice, ``D = 2 * (max loglik - profile loglik)`` at every
    node, and the chi-square(2) thresholds for ``levels``.
    """
    s = _as_surface(design, counts, fit)
    if len(params) != 2:
        raise ProfileError("exactly two parameters are required")
    i, j = s.index(params[0]), s.index(params[1])
    if i == j:
        raise ProfileError("the two parameters must differ")
    ll_hat = s.max_loglik
    half = n_grid // 2

    def axis(k):
        est = s.to_natural(k, s.theta[k])
        se = s.natural_se(k)
        pts = est + half_width * se * np.arange(-half, half + 1) / half
        if s.names[k] in s.log_scale and pts[0] <= 0:
            w = s.theta[k]
            se_w = math.sqrt(s.cov[k, k])
            pts = np.exp(w + half_width * se_w * np.arange(-half, half + 1) / half)
        pts[half] = est
        return pts

    xs, ys = axis(i), axis(j)
    prof = _Profiler(s, (i, j))
    start = s.theta[prof.free]
    D = np.empty((xs.size, ys.size))

    # centre row first (outward from the estimate), then each column outward from it
    row_solutions = {}
    for b in sorted(range(ys.size), key=lambda q: (abs(q - half), q)):
        neighbour = b - 1 if b > half else b + 1
        z0 = row_solutions.get(neighbour, start)
        ll, row_solutions[b] = prof((s.to_working(i, xs[half]), s.to_working(j, ys[b])), z0)
        D[half, b] = 2.0 * (ll_hat - ll)
    for b in range(ys.size):
        for direction in (1, -1):
            z = row_solutions[b]
            for a in range(half + direction, half + direction * (half + 1), direction):
                ll, z = prof((s.to_working(i, xs[a]), s.to_working(j, ys[b])), z)
                D[a, b] = 2.0 * (ll_hat - ll)
    D = np.maximum(D, 0.0)
    thresholds = {float(lv): chi2_quantile(lv, 2) for lv in levels}
    return ProfileRegion(
        names=(s.names[i], s.names[j]),
        x_grid=xs,
        y_grid=ys,
        deviance=D,
        thresholds=thresholds,
        mle=(xs[half], ys[half]),
    )


# --- prediction --------------------------------------------------------------

def _predictor_id(fit):
    p = len(fit.names) if fit.names else (fit.p if hasattr(fit, "p") else None)
    for k, v in N_COEF.items():
        if v == p:
            return k
    raise ValueError(f"cannot infer the predictor from {p} coefficients")


def prediction_grid(step=0.01, stages=STAGES):
    """Every stage crossed with defoliation 0, step, ..., 1."""
    n = int(round(1.0 / step))
    defs = np.round(np.linspace(0.0, 1.0, n + 1), 12)
    return [(s, float(d)) for s in stages for d in defs]


def _encode(fit, newdata, predictor_id):
    stages = [s for s, _ in newdata]
    defs = np.array([d for _, d in newdata], dtype=float)
    if np.any((defs < 0) | (defs > 1)):
        raise ValueError("defoliation outside [0, 1]: extrapolation is refused")
    pid = predictor_id if predictor_id is not None else _predictor_id(fit)
    return stages, defs, design_rows(defs, stages, pid)


def predict(fit, newdata=None, level=0.95, model=None, predictor_id=None):
    """Expected counts with pointwise confidence limits.

    Limits are built on the linear-predictor scale and mapped through the
    mean function: the Gamma-count expected-count series for Gamma-count
    fits, ``exp`` for Poisson fits. ``model="quasipoisson"`` scales the
    Poisson standard errors by ``sqrt(phi)``.

    For Gamma-count fits the linear-predictor variance uses the covariance of
    gamma conditional on alpha.
    """
    if newdata is None:
        newdata = prediction_grid()
    stages, defs, X = _encode(fit, newdata, predictor_id)
    z = normal_quantile(0.5 * (1.0 + level))
    if isinstance(fit, GammaCountFit):
        if fit.curvature_error is not None:
            raise ProfileError(f"fit has no valid covariance: {fit.curvature_error}")
        model = "gammacount"
        V = fit.cov
        Vgg = V[1:, 1:]
        v_aa = V[0, 0]
        if v_aa > 0:
            Vgg = Vgg - np.outer(V[1:, 0], V[0, 1:]) / v_aa
        eta = X @ fit.gamma
        se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, Vgg, X), 0.0))
        a = fit.alpha

        def mean_map(e):
            return expected_count(a, a * np.exp(e))
    elif isinstance(fit, GlmFit):
        model = model or "poisson"
        if model not in ("poisson", "quasipoisson"):
            raise ValueError(f"unknown model {model!r} for a Poisson fit")
        eta = X @ fit.coefficients
        se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, fit.cov, X), 0.0))
        if model == "quasipoisson":
            se = se * math.sqrt(pearson_dispersion(fit))
        mean_map = np.exp
    else:
        raise TypeError(f"unsupported fit type {type(fit).__name__}")

    mu = mean_map(eta)
    lo = mean_map(eta - z * se)
    hi = mean_map(eta + z * se)
    rows = tuple(
        PredictionRow(st, float(d), float(e), float(s_), float(m), float(l), float(h))
        for st, d, e, s_, m, l, h in zip(stages, defs, eta, se, mu, lo, hi)
    )
    return PredictionBand(rows=rows, level=level, model=model)


def estimated_pmfs(gc_fit, pois_fit, at=("vegetative", 0.0), n_max=30, predictor_id=None):
    """Fitted count distributions of both models at one covariate setting."""
    _, _, xg = _encode(gc_fit, [at], predictor_id)
    _, _, xp = _encode(pois_fit, [at], predictor_id)
    eta_g = float(xg[0] @ gc_fit.gamma)
    mu_p = float(math.exp(xp[0] @ pois_fit.coefficients))
    gc = pmf_table(GammaCountDist.from_linear_predictor(gc_fit.alpha, eta_g), n_max)
    po = pmf_table(GammaCountDist(1.0, mu_p), n_max)
    return gc, po
