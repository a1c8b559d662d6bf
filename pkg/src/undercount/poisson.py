"""
Poisson log-link GLM by iteratively reweighted least squares, plus the
quasi-Poisson layer (Pearson dispersion, scaled standard errors, F tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlogy

from .design import column_span_contains
from .special import chi2_sf, f_sf, p_gamma

__all__ = [
    "SingularDesignError",
    "IterationLimitError",
    "NestingError",
    "GlmFit",
    "CoefRow",
    "FTest",
    "fit_poisson",
    "poisson_loglik",
    "poisson_deviance",
    "pearson_dispersion",
    "poisson_summary",
    "quasi_summary",
    "quasi_f_test",
    "pearson_dispersion_test",
]

MAX_ITER = 50
DEVIANCE_RTOL = 1e-12


class SingularDesignError(np.linalg.LinAlgError):
    """Design matrix is not of full column rank."""


class IterationLimitError(RuntimeError):
    """IRLS hit the iteration cap; ``state`` holds the last iterate."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NestingError(ValueError):
    """Models compared by a nested test are not nested or not on the same data."""


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    cov: np.ndarray
    loglik: float
    deviance: float
    pearson: float
    fitted: np.ndarray
    n: int
    p: int
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    names: tuple = ()
    iterations: int = 0
    converged: bool = True

    @property
    def n_params(self):
        return self.p

    @property
    def se(self):
        return np.sqrt(np.diag(self.cov))


@dataclass(frozen=True)
class CoefRow:
    name: str
    estimate: float
    se: float
    ratio: float


class FTest(tuple):
    """``(F, df1, df2, p)`` with named access."""

    def __new__(cls, F, df1, df2, p):
        return super().__new__(cls, (F, df1, df2, p))

    F = property(lambda self: self[0])
    df1 = property(lambda self: self[1])
    df2 = property(lambda self: self[2])
    p = property(lambda self: self[3])


def poisson_loglik(y, mu):
    """Full Poisson log-likelihood, including the ``-log y!`` constant."""
    y = np.asarray(y, dtype=float)
    return float(np.sum(xlogy(y, mu) - mu - gammaln(y + 1.0)))


def poisson_deviance(y, mu):
    y = np.asarray(y, dtype=float)
    return float(2.0 * np.sum(xlogy(y, y) - xlogy(y, mu) - (y - mu)))


def _as_matrix(design):
    X = getattr(design, "matrix", design)
    names = getattr(design, "names", None)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    return X, tuple(names)


def fit_poisson(design, counts, max_iter=MAX_ITER, tol=DEVIANCE_RTOL):
    """Fit a Poisson GLM with log link.

    Parameters
    ----------
    design : DesignMatrix or array_like
        n x p model matrix.
    counts : array_like
        Non-negative integer responses.

    Returns
    -------
    GlmFit

    Raises
    ------
    SingularDesignError
        If the design is rank deficient.
    IterationLimitError
        If the deviance has not settled after ``max_iter`` iterations.
    """
    X, names = _as_matrix(design)
    y = np.asarray(counts, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"counts has shape {y.shape}, expected ({n},)")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("counts must be non-negative integers")
    if np.linalg.matrix_rank(X) < p:
        raise SingularDesignError(f"design matrix has rank {np.linalg.matrix_rank(X)} < {p} columns")

    mu = y + 0.5
    eta = np.log(mu)
    dev_old = poisson_deviance(y, mu)
    beta = np.zeros(p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = mu
        z = eta + (y - mu) / mu
        sw = np.sqrt(w)
        beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        eta = X @ beta
        mu = np.exp(eta)
        dev = poisson_deviance(y, mu)
        # near-saturated fits: deviance changes drown in rounding noise of order eps * sum(y)
        noise = 8.0 * np.finfo(float).eps * (y.sum() + mu.sum())
        if abs(dev - dev_old) < tol * (abs(dev) + 0.1) + noise:
            converged = True
            break
        dev_old = dev
    if not converged:
        raise IterationLimitError(
            f"IRLS did not converge in {max_iter} iterations",
            state={"coefficients": beta, "fitted": mu, "deviance": dev},
        )

    info = X.T @ (X * mu[:, None])
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    return GlmFit(
        coefficients=beta,
        cov=cov,
        loglik=poisson_loglik(y, mu),
        deviance=max(poisson_deviance(y, mu), 0.0),
        pearson=float(np.sum((y - mu) ** 2 / mu)),
        fitted=mu,
        n=n,
        p=p,
        X=X,
        y=y,
        names=names,
        iterations=it,
        converged=True,
    )


def pearson_dispersion(fit):
    """Pearson estimate of the quasi-Poisson dispersion."""
    if fit.n <= fit.p:
        raise ValueError(f"dispersion needs n > p (n={fit.n}, p={fit.p})")
    return fit.pearson / (fit.n - fit.p)


def poisson_summary(fit):
    se = fit.se
    return [CoefRow(nm, float(b), float(s), float(b / s)) for nm, b, s in zip(fit.names, fit.coefficients, se)]


def quasi_summary(fit):
    """Coefficient table with standard errors scaled by ``sqrt(phi)``."""
    scale = math.sqrt(pearson_dispersion(fit))
    se = fit.se * scale
    return [CoefRow(nm, float(b), float(s), float(b / s)) for nm, b, s in zip(fit.names, fit.coefficients, se)]


def _check_nested(nested, full):
    if nested.n != full.n or not np.array_equal(nested.y, full.y):
        raise NestingError("models were fitted to different data")
    if nested.p > full.p or not column_span_contains(full.X, nested.X):
        raise NestingError("the smaller model's design is not contained in the larger one")


def quasi_f_test(nested, full):
    """F test on the difference in deviance, scaled by the full model's dispersion."""
    _check_nested(nested, full)
    df1 = full.p - nested.p
    df2 = full.n - full.p
    if df1 == 0:
        return FTest(0.0, 0, df2, 1.0)
    phi = pearson_dispersion(full)
    F = max((nested.deviance - full.deviance) / (df1 * phi), 0.0)
    return FTest(F, df1, df2, f_sf(F, df1, df2))


def pearson_dispersion_test(fit):
    """Two-sided test of unit dispersion from the Pearson statistic.

    Returns ``(statistic, p)`` with the statistic referred to chi-square(n - p).
    """
    df = fit.n - fit.p
    if df <= 0:
        raise ValueError("dispersion test needs n > p")
    lower = p_gamma(0.5 * df, 0.5 * fit.pearson)
    upper = chi2_sf(fit.pearson, df)
    return fit.pearson, min(1.0, 2.0 * min(lower, upper))
