"""Propensity and outcome probability models.

Two built-in families, both fit from scratch: L2-penalized logistic
regression (Newton iterations on the mean weighted log-likelihood) and
gradient-boosted depth-1 stumps on the logistic loss.  Model selection
picks the family with the best held-out log-loss.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

__all__ = [
    "LogisticConfig",
    "BoostedStumpsConfig",
    "LogisticModel",
    "BoostedStumpsModel",
    "FunctionPredictor",
    "PropensityModel",
    "OutcomeModel",
    "fit_logistic",
    "fit_boosted_stumps",
    "select_model",
    "fit_propensity",
    "fit_outcome",
    "log_loss",
    "save_model",
    "load_model",
]

_PROB_EPS = 1e-12


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _clip_probs(p: np.ndarray) -> np.ndarray:
    return np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)


def log_loss(labels: np.ndarray, probs: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Mean weighted negative log-likelihood of Bernoulli labels."""
    p = _clip_probs(np.asarray(probs, dtype=float))
    y = np.asarray(labels, dtype=float)
    ll = y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    if weights is None:
        return float(-ll.mean())
    w = np.asarray(weights, dtype=float)
    return float(-(w * ll).sum() / w.sum())


class ProbabilisticPredictor(Protocol):
    """Contract: predict_probability maps feature rows to values in (0,1)."""

    def predict_probability(self, features: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class LogisticConfig:
    """L2-penalized logistic regression settings."""

    l2: float = 1e-4
    tol: float = 1e-8
    max_iter: int = 500
    seed: int = 0

    family = "logistic"

    def fit(self, features, labels, weights=None) -> "LogisticModel":
        return fit_logistic(features, labels, weights, self)


@dataclass(frozen=True)
class BoostedStumpsConfig:
    """Gradient-boosted depth-1 trees on the logistic loss."""

    rounds: int = 200
    learning_rate: float = 0.1
    seed: int = 0

    family = "boosted-stumps"

    def fit(self, features, labels, weights=None) -> "BoostedStumpsModel":
        return fit_boosted_stumps(features, labels, weights, self)


def _prepare(features, labels, weights):
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(labels, dtype=float)
    n = y.shape[0]
    if x.shape[0] != n:
        raise ValueError("features and labels disagree on row count")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be binary")
    if len(np.unique(y)) < 2:
        raise ValueError("need both label classes to fit")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("weights must be nonnegative, one per row")
    if w.sum() <= 0:
        raise ValueError("weights must not all be zero")
    return x, y, w


@dataclass
class LogisticModel:
    """Fitted penalized logistic regression.

    Continuous features are standardized internally; `coef` and
    `intercept` are reported on the original scale, while `coef_std` /
    `intercept_std` live in the standardized basis used by `objective`
    and `gradient`.
    """

    config: LogisticConfig
    mean: np.ndarray
    scale: np.ndarray
    intercept_std: float
    coef_std: np.ndarray
    intercept: float
    coef: np.ndarray
    converged: bool
    n_iter: int
    separation_warning: bool
    _x: np.ndarray | None = None
    _y: np.ndarray | None = None
    _w: np.ndarray | None = None

    def predict_probability(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        t = self.intercept_std + ((x - self.mean) / self.scale) @ self.coef_std
        return _clip_probs(_sigmoid(t))

    def objective(self, beta: np.ndarray) -> float:
        """Penalized loss at `beta` = [intercept, slopes] (standardized basis)."""
        x, y, w = self._training_arrays()
        t = beta[0] + x @ beta[1:]
        # log(1 + exp(-(2y-1) t)) computed stably
        margin = (2.0 * y - 1.0) * t
        nll = np.logaddexp(0.0, -margin)
        return float((w * nll).sum() / w.sum() + 0.5 * self.config.l2 * (beta[1:] @ beta[1:]))

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        """Analytic gradient of `objective` at `beta`."""
        x, y, w = self._training_arrays()
        p = _sigmoid(beta[0] + x @ beta[1:])
        resid = w * (p - y) / w.sum()
        g = np.empty_like(beta)
        g[0] = resid.sum()
        g[1:] = x.T @ resid + self.config.l2 * beta[1:]
        return g

    def _training_arrays(self):
        if self._x is None:
            raise ValueError("training data not retained")
        return self._x, self._y, self._w

    def to_jsonable(self) -> dict:
        return {
            "family": "logistic",
            "config": {
                "l2": self.config.l2,
                "tol": self.config.tol,
                "max_iter": self.config.max_iter,
                "seed": self.config.seed,
            },
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "intercept_std": self.intercept_std,
            "coef_std": self.coef_std.tolist(),
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "separation_warning": self.separation_warning,
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "LogisticModel":
        return cls(
            config=LogisticConfig(**payload["config"]),
            mean=np.array(payload["mean"]),
            scale=np.array(payload["scale"]),
            intercept_std=payload["intercept_std"],
            coef_std=np.array(payload["coef_std"]),
            intercept=payload["intercept"],
            coef=np.array(payload["coef"]),
            converged=payload["converged"],
            n_iter=payload["n_iter"],
            separation_warning=payload["separation_warning"],
        )


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    config: LogisticConfig | None = None,
) -> LogisticModel:
    """Newton fit of the mean weighted log-likelihood with L2 penalty.

    The penalty applies to slopes only (never the intercept), on the
    standardized scale. Columns whose values sit in {0,1} are left
    unstandardized.
    """
    config = config or LogisticConfig()
    x, y, w = _prepare(features, labels, weights)
    n, d = x.shape

    binary = np.array([np.all(np.isin(x[:, j], (0.0, 1.0))) for j in range(d)])
    mean = np.where(binary, 0.0, x.mean(axis=0))
    sd = x.std(axis=0)
    scale = np.where(binary | (sd == 0), 1.0, sd)
    xs = (x - mean) / scale

    lam = config.l2
    w_sum = w.sum()
    beta = np.zeros(d + 1)
    design = np.column_stack([np.ones(n), xs])
    penalty = np.zeros(d + 1)
    penalty[1:] = lam

    def objective(b):
        margin = (2.0 * y - 1.0) * (design @ b)
        return float((w * np.logaddexp(0.0, -margin)).sum() / w_sum
                     + 0.5 * lam * (b[1:] @ b[1:]))

    converged = False
    n_iter = 0
    f_cur = objective(beta)
    for n_iter in range(1, config.max_iter + 1):
        p = _sigmoid(design @ beta)
        resid = w * (p - y) / w_sum
        grad = design.T @ resid + penalty * beta
        if float(np.abs(grad).max()) < config.tol:
            converged = True
            n_iter -= 1
            break
        h = w * p * (1.0 - p) / w_sum
        hess = design.T @ (design * h[:, None]) + np.diag(penalty)
        step = np.linalg.solve(hess, grad)
        # step halving keeps Newton monotone on near-separable data
        t = 1.0
        for _ in range(50):
            f_new = objective(beta - t * step)
            if f_new <= f_cur:
                break
            t *= 0.5
        beta = beta - t * step
        f_cur = f_new

    separation = bool(np.abs(beta[1:]).max(initial=0.0) > 15.0)
    if separation:
        warnings.warn("possible separation: very large slope in the logistic fit")

    coef = beta[1:] / scale
    intercept = float(beta[0] - (beta[1:] * mean / scale).sum())
    return LogisticModel(
        config=config,
        mean=mean,
        scale=scale,
        intercept_std=float(beta[0]),
        coef_std=beta[1:].copy(),
        intercept=intercept,
        coef=coef,
        converged=converged,
        n_iter=n_iter,
        separation_warning=separation,
        _x=xs,
        _y=y,
        _w=w,
    )


@dataclass
class BoostedStumpsModel:
    """Additive depth-1 trees on the logit scale."""

    config: BoostedStumpsConfig
    prior: float
    features: np.ndarray  # (M,) feature index per stump
    thresholds: np.ndarray  # (M,) split point, rows with x <= t go left
    left: np.ndarray  # (M,) leaf value added to the logit
    right: np.ndarray

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        t = np.full(x.shape[0], self.prior)
        eta = self.config.learning_rate
        for k in range(self.features.shape[0]):
            go_left = x[:, self.features[k]] <= self.thresholds[k]
            t += eta * np.where(go_left, self.left[k], self.right[k])
        return t

    def predict_probability(self, features: np.ndarray) -> np.ndarray:
        return _clip_probs(_sigmoid(self.decision_function(features)))

    def to_jsonable(self) -> dict:
        return {
            "family": "boosted-stumps",
            "config": {
                "rounds": self.config.rounds,
                "learning_rate": self.config.learning_rate,
                "seed": self.config.seed,
            },
            "prior": self.prior,
            "features": self.features.tolist(),
            "thresholds": self.thresholds.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "BoostedStumpsModel":
        return cls(
            config=BoostedStumpsConfig(**payload["config"]),
            prior=payload["prior"],
            features=np.array(payload["features"], dtype=np.int64),
            thresholds=np.array(payload["thresholds"]),
            left=np.array(payload["left"]),
            right=np.array(payload["right"]),
        )


def fit_boosted_stumps(
    features: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    config: BoostedStumpsConfig | None = None,
) -> BoostedStumpsModel:
    """Gradient boosting with depth-1 regression trees on logistic loss.

    Each round fits a stump to the residual y - p by weighted least
    squares and takes a Newton step per leaf.  Tie-breaking is by feature
    order then threshold, so the fit is deterministic.
    """
    config = config or BoostedStumpsConfig()
    x, y, w = _prepare(features, labels, weights)
    n, d = x.shape
    eta = config.learning_rate

    p_bar = float((w * y).sum() / w.sum())
    p_bar = min(max(p_bar, _PROB_EPS), 1.0 - _PROB_EPS)
    prior = float(np.log(p_bar / (1.0 - p_bar)))

    order = [np.argsort(x[:, j], kind="stable") for j in range(d)]
    sorted_x = [x[order[j], j] for j in range(d)]
    # candidate split positions: between consecutive distinct values
    cut_pos = [np.flatnonzero(np.diff(sorted_x[j]) > 0) for j in range(d)]
    thresholds = [
        0.5 * (sorted_x[j][cut_pos[j]] + sorted_x[j][cut_pos[j] + 1]) for j in range(d)
    ]

    feat_out = np.empty(config.rounds, dtype=np.int64)
    thr_out = np.empty(config.rounds)
    left_out = np.empty(config.rounds)
    right_out = np.empty(config.rounds)

    t = np.full(n, prior)
    for m in range(config.rounds):
        p = _sigmoid(t)
        grad = w * (y - p)
        hess = w * p * (1.0 - p)
        g_tot = grad.sum()
        h_tot = hess.sum()

        best_gain = -np.inf
        best = None
        for j in range(d):
            if cut_pos[j].shape[0] == 0:
                continue
            g_cum = np.cumsum(grad[order[j]])[cut_pos[j]]
            h_cum = np.cumsum(hess[order[j]])[cut_pos[j]]
            h_l = h_cum + 1e-12
            h_r = h_tot - h_cum + 1e-12
            gains = g_cum * g_cum / h_l + (g_tot - g_cum) ** 2 / h_r
            k = int(np.argmax(gains))
            if gains[k] > best_gain:
                best_gain = float(gains[k])
                best = (j, k, g_cum[k], h_cum[k])
        if best is None:
            # all features constant: intercept-only Newton step
            gamma = g_tot / (h_tot + 1e-12)
            feat_out[m] = 0
            thr_out[m] = np.inf
            left_out[m] = gamma
            right_out[m] = gamma
            t = t + eta * gamma
            continue
        j, k, g_l, h_l = best
        thr = float(thresholds[j][k])
        gamma_l = g_l / (h_l + 1e-12)
        gamma_r = (g_tot - g_l) / (h_tot - h_l + 1e-12)
        feat_out[m] = j
        thr_out[m] = thr
        left_out[m] = gamma_l
        right_out[m] = gamma_r
        t = t + eta * np.where(x[:, j] <= thr, gamma_l, gamma_r)

    return BoostedStumpsModel(
        config=config,
        prior=prior,
        features=feat_out,
        thresholds=thr_out,
        left=left_out,
        right=right_out,
    )


def select_model(
    candidates: Sequence[LogisticConfig | BoostedStumpsConfig],
    features: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    *,
    folds: int = 5,
    seed: int = 0,
):
    """Pick the candidate with lowest mean held-out log-loss, refit on all data.

    Folds are shared across candidates; a fold whose train or validation
    part is single-class is skipped with a warning.  Ties go to the
    earlier candidate.
    """
    if not candidates:
        raise ValueError("no candidates")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    x, y, w = _prepare(features, labels, weights)
    n = x.shape[0]
    if n < 2 * folds:
        raise ValueError("need at least 2 rows per fold")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_idx = np.array_split(perm, folds)

    usable = []
    for k, val in enumerate(fold_idx):
        train = np.concatenate([fold_idx[i] for i in range(folds) if i != k])
        if len(np.unique(y[train])) < 2 or len(np.unique(y[val])) < 2:
            warnings.warn(f"skipping single-class fold {k}")
            continue
        usable.append((train, val))
    if not usable:
        raise ValueError("every fold is single-class; cannot cross-validate")

    losses = []
    for cand in candidates:
        fold_losses = []
        for train, val in usable:
            model = cand.fit(x[train], y[train], w[train])
            p = model.predict_probability(x[val])
            fold_losses.append(log_loss(y[val], p, w[val]))
        losses.append(float(np.mean(fold_losses)))

    best = int(np.argmin(losses))  # argmin keeps the first of tied minima
    return candidates[best].fit(x, y, w)


class FunctionPredictor:
    """Wraps a plain probability function as a predictor (not serializable)."""

    def __init__(self, fn):
        self._fn = fn

    def predict_probability(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        p = np.asarray(self._fn(x), dtype=float)
        return _clip_probs(p)


@dataclass(frozen=True)
class PropensityModel:
    """Estimated e(x) = P(Z=1 | X=x), clipped away from 0 and 1."""

    predictor: ProbabilisticPredictor
    clip: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.clip < 0.5):
            raise ValueError("clip must be in (0, 0.5)")

    def predict(self, x: np.ndarray) -> np.ndarray:
        p = self.predictor.predict_probability(x)
        return np.clip(p, self.clip, 1.0 - self.clip)


@dataclass(frozen=True)
class OutcomeModel:
    """Estimated E(Y | Z=z, X=x) with z as the first model feature."""

    predictor: ProbabilisticPredictor
    clip: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.clip < 0.5):
            raise ValueError("clip must be in (0, 0.5)")

    def predict(self, z: float | np.ndarray, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        z_col = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        feats = np.column_stack([z_col, x])
        p = self.predictor.predict_probability(feats)
        return np.clip(p, self.clip, 1.0 - self.clip)

    def counterfactuals(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(E(Y|Z=0,x), E(Y|Z=1,x)) for every row of x."""
        return self.predict(0.0, x), self.predict(1.0, x)


def fit_propensity(dataset, config=None, *, clip: float = 0.01, folds: int = 5, seed: int = 0) -> PropensityModel:
    """Regress Z on X. `config` may be a single model config or a list of
    candidates to select among by cross-validated log-loss."""
    if dataset.n == 0:
        raise ValueError("empty dataset")
    predictor = _fit_from_config(config, dataset.x, dataset.z, folds=folds, seed=seed)
    return PropensityModel(predictor, clip)


def fit_outcome(dataset, config=None, *, clip: float = 0.01, folds: int = 5, seed: int = 0) -> OutcomeModel:
    """Regress Y on (Z, X) so both counterfactuals are evaluable."""
    if dataset.n == 0:
        raise ValueError("empty dataset")
    if dataset.n_treated == 0 or dataset.n_control == 0:
        raise ValueError("need both treatment classes to fit an outcome model")
    feats = np.column_stack([dataset.z, dataset.x])
    predictor = _fit_from_config(config, feats, dataset.y, folds=folds, seed=seed)
    return OutcomeModel(predictor, clip)


def _fit_from_config(config, features, labels, *, folds: int, seed: int):
    if config is None:
        config = LogisticConfig()
    if isinstance(config, (list, tuple)):
        return select_model(config, features, labels, folds=folds, seed=seed)
    return config.fit(features, labels)


def save_model(model, path: str | Path) -> None:
    """Write a fitted model (or propensity/outcome wrapper) as JSON text."""
    if isinstance(model, PropensityModel):
        payload = {"kind": "propensity", "clip": model.clip,
                   "predictor": _predictor_payload(model.predictor)}
    elif isinstance(model, OutcomeModel):
        payload = {"kind": "outcome", "clip": model.clip,
                   "predictor": _predictor_payload(model.predictor)}
    else:
        payload = _predictor_payload(model)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _predictor_payload(predictor) -> dict:
    if not hasattr(predictor, "to_jsonable"):
        raise TypeError(f"cannot serialize predictor of type {type(predictor).__name__}")
    return predictor.to_jsonable()


def _predictor_from_payload(payload: dict):
    family = payload.get("family")
    if family == "logistic":
        return LogisticModel.from_jsonable(payload)
    if family == "boosted-stumps":
        return BoostedStumpsModel.from_jsonable(payload)
    raise ValueError(f"unknown model family {family!r}")


def load_model(path: str | Path):
    """Inverse of save_model."""
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    kind = payload.get("kind")
    if kind == "propensity":
        return PropensityModel(_predictor_from_payload(payload["predictor"]), payload["clip"])
    if kind == "outcome":
        return OutcomeModel(_predictor_from_payload(payload["predictor"]), payload["clip"])
    return _predictor_from_payload(payload)
