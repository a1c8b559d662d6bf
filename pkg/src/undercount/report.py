"""Fit reports: construction from fitted models and lossless JSON round-trip."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources

from . import __version__
from .mle import FTOL, GTOL, GRAD_REL_STEP, HESS_REL_STEP, MAX_ITER, NORMATIVE_DEVIATIONS, aic, test_alpha_one
from .poisson import DEVIANCE_RTOL, pearson_dispersion, pearson_dispersion_test, poisson_summary, quasi_summary

__all__ = ["SCHEMA_ID", "FitReport", "load_schema", "gamma_count_report", "poisson_report", "format_table"]

SCHEMA_ID = "undercount.fit_report/1"


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    se: float | None
    ratio: float | None


@dataclass(frozen=True)
class Dispersion:
    name: str
    estimate: float
    se: float | None
    ratio: float | None
    test_statistic: float | None
    p_value: float | None


@dataclass(frozen=True)
class Convergence:
    converged: bool
    iterations: int
    method: str
    message: str
    scaled_gradient: float | None = None
    curvature_error: str | None = None


@dataclass(frozen=True)
class DataInfo:
    sha256: str
    n: int
    def_input_scale: str
    def_coding: str = "proportion"


@dataclass(frozen=True)
class FitReport:
    model: str
    predictor: int
    n_params: int
    coefficients: tuple
    dispersion: Dispersion | None
    loglik: float | None
    aic: float | None
    deviance: float | None
    convergence: Convergence
    data: DataInfo
    optimizer: dict = field(default_factory=dict)
    normative_deviations: tuple = ()
    toolkit_version: str = __version__
    schema: str = SCHEMA_ID

    def to_dict(self):
        d = asdict(self)
        d["coefficients"] = [asdict(c) for c in self.coefficients]
        d["normative_deviations"] = list(self.normative_deviations)
        return d

    def to_json(self, indent=2):
        # repr-based float output is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["coefficients"] = tuple(Coefficient(**c) for c in d["coefficients"])
        d["dispersion"] = Dispersion(**d["dispersion"]) if d["dispersion"] is not None else None
        d["convergence"] = Convergence(**d["convergence"])
        d["data"] = DataInfo(**d["data"])
        d["normative_deviations"] = tuple(d.get("normative_deviations", ()))
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def load_schema():
    text = resources.files("undercount").joinpath("schemas/fit_report.schema.json").read_text()
    return json.loads(text)


def _data_info(data):
    return DataInfo(
        sha256=data.checksum,
        n=len(data),
        def_input_scale="percent" if data.def_was_percent else "proportion",
    )


def _optimizer_settings():
    return {
        "parameterization": "log_alpha_gamma",
        "init": "poisson_gamma_alpha_1",
        "gradient": "central_difference",
        "gradient_rel_step": GRAD_REL_STEP,
        "hessian_rel_step": HESS_REL_STEP,
        "ftol": FTOL,
        "gtol_scaled": GTOL,
        "max_iter": MAX_ITER,
    }


def gamma_count_report(fit, pois, data, predictor):
    se = fit.se
    coefs = tuple(
        Coefficient(nm, float(b), _num(s), _num(b / s) if s > 0 else None)
        for nm, b, s in zip(fit.names, fit.gamma, se[1:])
    )
    stat, p = test_alpha_one(fit, pois)
    disp = Dispersion("alpha", fit.alpha, _num(se[0]), _num(fit.alpha / se[0]) if se[0] > 0 else None,
                      _num(stat), _num(p))
    return FitReport(
        model="gammacount",
        predictor=int(predictor),
        n_params=fit.n_params,
        coefficients=coefs,
        dispersion=disp,
        loglik=_num(fit.loglik),
        aic=_num(aic(fit)),
        deviance=None,
        convergence=Convergence(bool(fit.converged), int(fit.iterations), fit.method, fit.message,
                                _num(fit.grad_scaled), fit.curvature_error),
        data=_data_info(data),
        optimizer=_optimizer_settings(),
        normative_deviations=NORMATIVE_DEVIATIONS,
    )


def poisson_report(fit, data, predictor, quasi=False):
    rows = quasi_summary(fit) if quasi else poisson_summary(fit)
    coefs = tuple(Coefficient(r.name, r.estimate, _num(r.se), _num(r.ratio)) for r in rows)
    if quasi:
        stat, p = pearson_dispersion_test(fit)
        disp = Dispersion("phi", pearson_dispersion(fit), None, None, _num(stat), _num(p))
    else:
        disp = None
    return FitReport(
        model="quasipoisson" if quasi else "poisson",
        predictor=int(predictor),
        n_params=fit.p,
        coefficients=coefs,
        dispersion=disp,
        loglik=None if quasi else _num(fit.loglik),
        aic=None if quasi else _num(2.0 * fit.p - 2.0 * fit.loglik),
        deviance=_num(fit.deviance),
        convergence=Convergence(bool(fit.converged), int(fit.iterations), "irls", "converged"),
        data=_data_info(data),
        optimizer={"method": "irls", "start": "y_plus_half", "deviance_rtol": DEVIANCE_RTOL},
        normative_deviations=NORMATIVE_DEVIATIONS[1:],
    )


def _g6(x):
    return "" if x is None else f"{x:.6g}"


def format_table(report):
    """Human-readable rendering with 6 significant digits."""
    lines = [f"model: {report.model}   predictor: {report.predictor}   n: {report.data.n}"]
    width = max(len(c.name) for c in report.coefficients)
    width = max(width, 9)
    lines.append(f"{'parameter':<{width}}  {'estimate':>12}  {'se':>12}  {'est/se':>12}")
    for c in report.coefficients:
        star = "*" if c.ratio is not None and abs(c.ratio) > 1.96 else ""
        lines.append(f"{c.name:<{width}}  {_g6(c.estimate):>12}  {_g6(c.se):>12}  {_g6(c.ratio):>12}{star}")
    if report.dispersion is not None:
        d = report.dispersion
        star = "*" if d.ratio is not None and abs(d.ratio) > 1.96 else ""
        lines.append(f"{d.name:<{width}}  {_g6(d.estimate):>12}  {_g6(d.se):>12}  {_g6(d.ratio):>12}{star}")
        lines.append(f"test of {d.name} = 1: statistic {_g6(d.test_statistic)}, p = {_g6(d.p_value)}")
    if report.loglik is not None:
        lines.append(f"loglik: {_g6(report.loglik)}   AIC: {_g6(report.aic)}")
    if report.deviance is not None:
        lines.append(f"deviance: {_g6(report.deviance)}")
    conv = report.convergence
    lines.append(f"converged: {conv.converged} ({conv.method}, {conv.iterations} iterations)")
    return "\n".join(lines) + "\n"
