"""Synthetic observational-study generator with known ground-truth ATE.

Propensity and outcome functions are simple logistic forms over the
generated covariates (plus an optional unobserved confounder U), so the
true ATE is available analytically or by high-precision Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import CovariateSchema, ObservationalDataset
from .models import FunctionPredictor, OutcomeModel, PropensityModel

__all__ = [
    "CovariateGen",
    "LinearLogit",
    "LogisticForm",
    "AffineLogisticForm",
    "ShiftedForm",
    "ConfounderSpec",
    "ScenarioSpec",
    "TrueAte",
    "generate",
    "true_ate",
    "preset",
    "PRESET_NAMES",
]

PROPENSITY_BOUNDS = (0.02, 0.98)


@dataclass(frozen=True)
class CovariateGen:
    """One covariate's name, kind, and sampling distribution.

    dist: ("normal", mu, sd) | ("bernoulli", p) | ("uniform", lo, hi)
    """

    name: str
    kind: str
    dist: tuple

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        tag = self.dist[0]
        if tag == "normal":
            return rng.normal(self.dist[1], self.dist[2], size=n)
        if tag == "bernoulli":
            return (rng.random(n) < self.dist[1]).astype(float)
        if tag == "uniform":
            return rng.uniform(self.dist[1], self.dist[2], size=n)
        raise ValueError(f"unknown distribution {tag!r}")


@dataclass(frozen=True)
class LinearLogit:
    """intercept + sum coef[name] * x[name] + u_coef * U."""

    intercept: float = 0.0
    coefs: dict[str, float] = None
    u_coef: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coefs", dict(self.coefs or {}))

    def evaluate(self, columns: dict[str, np.ndarray], u: np.ndarray) -> np.ndarray:
        total = np.full(u.shape[0], float(self.intercept))
        for name, coef in self.coefs.items():
            total += coef * columns[name]
        if self.u_coef:
            total += self.u_coef * u
        return total


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-t))


@dataclass(frozen=True)
class LogisticForm:
    linear: LinearLogit

    def evaluate(self, columns, u):
        return _sigmoid(self.linear.evaluate(columns, u))


@dataclass(frozen=True)
class AffineLogisticForm:
    """offset + gain * sigmoid(linear); bounded in [offset, offset + gain]."""

    offset: float
    gain: float
    linear: LinearLogit

    def evaluate(self, columns, u):
        return self.offset + self.gain * _sigmoid(self.linear.evaluate(columns, u))


@dataclass(frozen=True)
class ShiftedForm:
    base: object
    delta: float

    def evaluate(self, columns, u):
        return self.base.evaluate(columns, u) + self.delta


@dataclass(frozen=True)
class ConfounderSpec:
    """Unobserved U ~ N(0,1) with logit-scale strengths on Z and on Y."""

    strength_z: float
    strength_y: float


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    covariates: tuple[CovariateGen, ...]
    propensity: LinearLogit
    outcome1: object
    outcome0: object
    confounder: ConfounderSpec | None = None
    export_confounder: bool = False
    seed: int = 0

    def covariate_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def schema(self) -> CovariateSchema:
        entries = [(c.name, c.kind) for c in self.covariates]
        if self.export_confounder:
            entries.append(("u", "continuous"))
        return CovariateSchema(tuple(entries))

    def _effective_forms(self):
        """Propensity and outcome forms with confounder strengths applied."""
        prop = self.propensity
        out1, out0 = self.outcome1, self.outcome0
        if self.confounder is not None:
            prop = replace(prop, u_coef=prop.u_coef + self.confounder.strength_z)
            out1 = _add_u_strength(out1, self.confounder.strength_y)
            out0 = _add_u_strength(out0, self.confounder.strength_y)
        return prop, out1, out0

    def propensity_values(self, columns, u):
        prop, _, _ = self._effective_forms()
        raw = _sigmoid(prop.evaluate(columns, u))
        return np.clip(raw, *PROPENSITY_BOUNDS)

    def outcome_values(self, columns, u):
        _, out1, out0 = self._effective_forms()
        p1 = np.asarray(out1.evaluate(columns, u), dtype=float)
        p0 = np.asarray(out0.evaluate(columns, u), dtype=float)
        for label, p in (("p1", p1), ("p0", p0)):
            if p.min() < 0.0 or p.max() > 1.0:
                raise ValueError(
                    f"invalid probability form: {label} reaches {float(p.min()):.4f}"
                    f"..{float(p.max()):.4f}"
                )
        return p0, p1

    def propensity_model(self, clip: float = 0.01) -> PropensityModel:
        """True propensity wrapped as a model; covariate columns must
        follow this spec's schema order (confounder column included only
        when exported)."""
        names = list(self.covariate_names())

        def fn(x):
            columns = {name: x[:, k] for k, name in enumerate(names)}
            u = x[:, len(names)] if self.export_confounder else np.zeros(x.shape[0])
            return self.propensity_values(columns, u)

        return PropensityModel(FunctionPredictor(fn), clip)

    def outcome_model(self, clip: float = 0.01) -> OutcomeModel:
        """True outcome probabilities wrapped as a model over (z, x)."""
        names = list(self.covariate_names())

        def fn(feats):
            z = feats[:, 0]
            x = feats[:, 1:]
            columns = {name: x[:, k] for k, name in enumerate(names)}
            u = x[:, len(names)] if self.export_confounder else np.zeros(x.shape[0])
            p0, p1 = self.outcome_values(columns, u)
            return np.where(z == 1.0, p1, p0)

        return OutcomeModel(FunctionPredictor(fn), clip)


def _add_u_strength(form, strength: float):
    if strength == 0:
        return form
    if isinstance(form, LogisticForm):
        return LogisticForm(replace(form.linear, u_coef=form.linear.u_coef + strength))
    if isinstance(form, AffineLogisticForm):
        return AffineLogisticForm(
            form.offset, form.gain, replace(form.linear, u_coef=form.linear.u_coef + strength)
        )
    if isinstance(form, ShiftedForm):
        return ShiftedForm(_add_u_strength(form.base, strength), form.delta)
    raise ValueError(f"cannot apply confounder strength to {type(form).__name__}")


def _draw(spec: ScenarioSpec, rng: np.random.Generator, n: int):
    columns = {c.name: c.sample(rng, n) for c in spec.covariates}
    u = rng.normal(size=n)
    return columns, u


def generate(spec: ScenarioSpec) -> ObservationalDataset:
    """Draw the dataset: X per covariate spec, Z ~ Bern(e(X,U)),
    Y ~ Bern(p_Z(X,U)).  U is drawn regardless of confounder strength so
    strength 0 reproduces the unconfounded stream bit for bit; the U
    column is exported only when requested."""
    rng = np.random.default_rng(spec.seed)
    columns, u = _draw(spec, rng, spec.n)
    e = spec.propensity_values(columns, u)
    z = (rng.random(spec.n) < e).astype(float)
    p0, p1 = spec.outcome_values(columns, u)
    p = np.where(z == 1.0, p1, p0)
    y = (rng.random(spec.n) < p).astype(float)
    x_cols = [columns[name] for name in spec.covariate_names()]
    if spec.export_confounder:
        x_cols.append(u)
    return ObservationalDataset(spec.schema(), y, z, np.column_stack(x_cols))


@dataclass(frozen=True)
class TrueAte:
    value: float
    se: float
    method: str  # "analytic" or "monte-carlo"


def true_ate(spec: ScenarioSpec, mc_draws: int = 1_000_000, mc_seed: int = 987) -> TrueAte:
    """E_X[p1(X) - p0(X)]: exact for identical or constant-shift forms,
    otherwise Monte Carlo with reported standard error."""
    _, out1, out0 = spec._effective_forms()
    if out1 == out0:
        return TrueAte(0.0, 0.0, "analytic")
    if isinstance(out1, ShiftedForm) and out1.base == out0:
        return TrueAte(float(out1.delta), 0.0, "analytic")
    if isinstance(out0, ShiftedForm) and out0.base == out1:
        return TrueAte(-float(out0.delta), 0.0, "analytic")
    rng = np.random.default_rng(mc_seed)
    columns, u = _draw(spec, rng, mc_draws)
    p0, p1 = spec.outcome_values(columns, u)
    diff = p1 - p0
    return TrueAte(float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(mc_draws)),
                   "monte-carlo")


def _preset_null_randomized(n: int, seed: int) -> ScenarioSpec:
    base = LogisticForm(LinearLogit(-0.8, {"x1": 0.7, "x2": 0.4}))
    return ScenarioSpec(
        n=n,
        covariates=(
            CovariateGen("x1", "continuous", ("normal", 0.0, 1.0)),
            CovariateGen("x2", "binary", ("bernoulli", 0.4)),
        ),
        propensity=LinearLogit(0.0, {}),
        outcome1=base,
        outcome0=base,
        seed=seed,
    )


def _preset_confounded_shift(n: int, seed: int) -> ScenarioSpec:
    base = AffineLogisticForm(0.05, 0.6, LinearLogit(-1.2, {"x1": 0.9, "x2": 0.5}))
    return ScenarioSpec(
        n=n,
        covariates=(
            CovariateGen("x1", "continuous", ("normal", 0.0, 1.0)),
            CovariateGen("x2", "binary", ("bernoulli", 0.4)),
        ),
        propensity=LinearLogit(-0.4, {"x1": 1.3, "x2": 0.7}),
        outcome1=ShiftedForm(base, 0.2),
        outcome0=base,
        seed=seed,
    )


def _preset_confounded_null(n: int, seed: int) -> ScenarioSpec:
    both = LogisticForm(LinearLogit(-0.9, {"x1": 1.1, "x2": 0.6}))
    return ScenarioSpec(
        n=n,
        covariates=(
            CovariateGen("x1", "continuous", ("normal", 0.0, 1.0)),
            CovariateGen("x2", "binary", ("bernoulli", 0.5)),
        ),
        propensity=LinearLogit(-0.3, {"x1": 1.2}),
        outcome1=both,
        outcome0=both,
        seed=seed,
    )


def _preset_hidden_confounder(n: int, seed: int, export_confounder: bool = False) -> ScenarioSpec:
    return ScenarioSpec(
        n=n,
        covariates=(CovariateGen("x1", "continuous", ("normal", 0.0, 1.0)),),
        propensity=LinearLogit(-0.4, {"x1": 0.6}),
        outcome1=LogisticForm(LinearLogit(-0.4, {"x1": 0.7})),
        outcome0=LogisticForm(LinearLogit(-1.1, {"x1": 0.7})),
        confounder=ConfounderSpec(strength_z=1.0, strength_y=1.0),
        export_confounder=export_confounder,
        seed=seed,
    )


_PRESETS = {
    "null-randomized": _preset_null_randomized,
    "confounded-shift": _preset_confounded_shift,
    "confounded-null": _preset_confounded_null,
    "hidden-confounder": _preset_hidden_confounder,
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str, n: int, seed: int = 0, **kwargs) -> ScenarioSpec:
    """Named built-in scenario."""
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    return _PRESETS[name](n, seed, **kwargs)
