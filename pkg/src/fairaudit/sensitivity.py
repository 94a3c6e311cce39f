"""Sensitivity analysis for unobserved confounding.

The latent-confounder model perturbs the fitted propensity: given eta in
(0, 1), the unobserved score e~(x, U) follows
Beta(e(x)(1-eta)/eta, (1-e(x))(1-eta)/eta), which keeps E[e~ | X] = e(X),
and a real delta moves the outcome along the centered logit of e~.  The
induced bias on the treatment effect is |delta| times the gap between the
tilted logit means of the two classes.  A curve of (treatment influence,
outcome influence) pairs then shows how strong a confounder would have to
be to flip the audit's verdicts, next to the influence of observed
covariate groups computed by a leave-the-group-out fit comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ObservationalDataset
from .estimators import BatteryReport
from .models import (
    LogisticConfig,
    OutcomeModel,
    PropensityModel,
    log_loss,
)

__all__ = [
    "SensitivityParams",
    "AustenCurve",
    "UnboundedDeltaError",
    "simulate_latent_propensity",
    "bias_of",
    "delta_required",
    "influence_of_group",
    "fit_confounder_strength",
    "austen_curve",
    "render_curve",
]

_DRAW_EPS = 1e-6


class UnboundedDeltaError(ValueError):
    """No finite delta reaches the target bias (zero logit gap)."""


@dataclass(frozen=True)
class SensitivityParams:
    """Confounder strength: eta acts on treatment, delta on the outcome."""

    eta: float
    delta: float

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie strictly inside (0, 1)")


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must lie strictly inside (0, 1)")
    return eta


def _latent_draws(e_hat: np.ndarray, eta: float, draw_count: int, seed) -> np.ndarray:
    """(n, draw_count) Beta draws of e~(x, U) given each row's e(x)."""
    eta = _check_eta(eta)
    e = np.asarray(e_hat, dtype=float)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ValueError("propensity estimates must lie strictly inside (0, 1)")
    if draw_count < 1:
        raise ValueError("draw_count must be positive")
    ratio = (1.0 - eta) / eta
    rng = np.random.default_rng(seed)
    draws = rng.beta(e[:, None] * ratio, (1.0 - e)[:, None] * ratio,
                     size=(e.size, draw_count))
    return np.clip(draws, _DRAW_EPS, 1.0 - _DRAW_EPS)


def simulate_latent_propensity(
    prop: PropensityModel, eta: float, x: np.ndarray,
    draw_count: int = 1000, seed=0,
) -> np.ndarray:
    """Monte-Carlo samples of the latent propensity, one row per input row."""
    return _latent_draws(prop.predict(x), eta, draw_count, seed)


def _logit_gap(tilde: np.ndarray) -> float:
    """Mean over rows of E[logit e~ | Z=1, x] - E[logit e~ | Z=0, x].

    The conditional tilts reweight the latent draws by e~ for the treated
    class and 1 - e~ for the other; the outer mean runs over the empirical
    covariate distribution.
    """
    logit = np.log(tilde) - np.log1p(-tilde)
    m1 = (tilde * logit).sum(axis=1) / tilde.sum(axis=1)
    m0 = ((1.0 - tilde) * logit).sum(axis=1) / (1.0 - tilde).sum(axis=1)
    return float(np.mean(m1 - m0))


def bias_of(
    params: SensitivityParams,
    dataset: ObservationalDataset,
    prop: PropensityModel,
    *,
    draws: int = 1000,
    seed=0,
) -> float:
    """Treatment-effect bias induced by a confounder at the given strength.

    Exactly linear in |delta| for a fixed seed, since the logit gap is
    computed once from the same latent draws.
    """
    tilde = _latent_draws(prop.predict(dataset.x), params.eta, draws, seed)
    return abs(params.delta * _logit_gap(tilde))


def delta_required(
    eta: float,
    target_bias: float,
    dataset: ObservationalDataset,
    prop: PropensityModel,
    *,
    draws: int = 1000,
    seed=0,
) -> float:
    """Smallest nonnegative delta whose induced bias hits the target."""
    if target_bias < 0:
        raise ValueError("target bias must be nonnegative")
    if target_bias == 0:
        return 0.0
    tilde = _latent_draws(prop.predict(dataset.x), eta, draws, seed)
    gap = _logit_gap(tilde)
    if abs(gap) < 1e-12:
        raise UnboundedDeltaError(
            f"logit gap at eta={eta} is numerically zero; no finite delta "
            "reaches the target bias"
        )
    return float(target_bias / abs(gap))


# ---------------------------------------------------------------------------
# influence of observed covariate groups


def _fold_indices(n: int, folds: int, seed) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return np.array_split(rng.permutation(n), folds)


def _held_out_loss(features, labels, config, fold_ids) -> float:
    probs = np.empty(labels.shape[0])
    for test in fold_ids:
        train = np.setdiff1d(np.arange(labels.shape[0]), test, assume_unique=False)
        model = config.fit(features[train], labels[train])
        probs[test] = model.predict_probability(features[test])
    return log_loss(labels, probs)


def influence_of_group(
    dataset: ObservationalDataset,
    group,
    prop_config=None,
    outcome_config=None,
    *,
    folds: int = 5,
    seed: int = 0,
) -> tuple[float, float]:
    """Held-out fit improvement attributable to a covariate group.

    Both influences are 1 - (held-out log-loss with all covariates) /
    (held-out log-loss without the group), floored at zero; the same fold
    partition serves the full and reduced fits, so the comparison is
    paired.
    """
    names = list(dataset.schema.names)
    group = tuple(group)
    missing = [g for g in group if g not in names]
    if missing:
        raise KeyError(f"covariates not in the schema: {missing}")
    if not group:
        return 0.0, 0.0
    if set(group) == set(names):
        raise ValueError(
            "group covers every covariate; the reduced model is degenerate"
        )
    prop_config = prop_config or LogisticConfig()
    outcome_config = outcome_config or LogisticConfig()
    keep = [j for j, name in enumerate(names) if name not in group]
    x_full = dataset.x
    x_red = dataset.x[:, keep]
    fold_ids = _fold_indices(dataset.n, folds, [seed, dataset.n])

    t_full = _held_out_loss(x_full, dataset.z, prop_config, fold_ids)
    t_red = _held_out_loss(x_red, dataset.z, prop_config, fold_ids)
    o_feats_full = np.column_stack([dataset.z, x_full])
    o_feats_red = np.column_stack([dataset.z, x_red])
    o_full = _held_out_loss(o_feats_full, dataset.y, outcome_config, fold_ids)
    o_red = _held_out_loss(o_feats_red, dataset.y, outcome_config, fold_ids)

    t_infl = float(max(0.0, 1.0 - t_full / t_red)) if t_red > 0 else 0.0
    o_infl = float(max(0.0, 1.0 - o_full / o_red)) if o_red > 0 else 0.0
    return t_infl, o_infl


# ---------------------------------------------------------------------------
# the frontier


def _entropy(p: np.ndarray) -> np.ndarray:
    q = np.clip(p, _DRAW_EPS, 1.0 - _DRAW_EPS)
    return -(q * np.log(q) + (1.0 - q) * np.log1p(-q))


def _frontier_point(
    dataset: ObservationalDataset,
    e_hat: np.ndarray,
    m_obs: np.ndarray,
    eta: float,
    target_bias: float,
    draws: int,
    seed,
) -> tuple[float, float, float]:
    """(treatment influence, outcome influence, delta) at one eta.

    Treatment influence compares the expected log-loss of predicting Z
    from the latent score against predicting from e(x) alone; outcome
    influence does the same for Y after shifting the outcome mean by
    delta times the centered logit of the latent score, both conditioned
    on the observed class via the tilted draw weights.
    """
    tilde = _latent_draws(e_hat, eta, draws, seed)
    gap = _logit_gap(tilde)
    if abs(gap) < 1e-12:
        raise UnboundedDeltaError(
            f"logit gap at eta={eta} is numerically zero"
        )
    delta = target_bias / abs(gap)

    base_t = _entropy(e_hat).mean()
    full_t = _entropy(tilde).mean(axis=1).mean()
    t_infl = float(max(0.0, 1.0 - full_t / base_t)) if base_t > 0 else 0.0

    logit = np.log(tilde) - np.log1p(-tilde)
    z = dataset.z
    weights = np.where(z[:, None] == 1.0, tilde, 1.0 - tilde)
    weights = weights / weights.sum(axis=1, keepdims=True)
    centered = logit - (weights * logit).sum(axis=1, keepdims=True)
    shifted = np.clip(m_obs[:, None] + delta * centered, _DRAW_EPS, 1.0 - _DRAW_EPS)
    base_o = _entropy(m_obs).mean()
    full_o = (weights * _entropy(shifted)).sum(axis=1).mean()
    o_infl = float(max(0.0, 1.0 - full_o / base_o)) if base_o > 0 else 0.0
    return t_infl, o_infl, float(delta)


def fit_confounder_strength(
    dataset: ObservationalDataset,
    prop: PropensityModel,
    outcome: OutcomeModel,
    treatment_influence: float,
    outcome_influence: float,
    *,
    draws: int = 1000,
    seed=0,
    iterations: int = 48,
) -> SensitivityParams:
    """Latent-confounder strength matching a reference influence pair.

    Bisects eta until the latent treatment influence matches the given
    value, then bisects delta at that eta until the outcome influence
    matches.  Both influence maps are monotone in their parameter, which
    makes the inversion well posed; the reference pair typically comes
    from influence_of_group on an observed covariate.
    """
    if not (0.0 <= treatment_influence < 1.0):
        raise ValueError("treatment influence must lie in [0, 1)")
    if outcome_influence < 0.0:
        raise ValueError("outcome influence must be nonnegative")
    e_hat = prop.predict(dataset.x)
    m_obs = outcome.predict(dataset.z, dataset.x)
    base_t = _entropy(e_hat).mean()

    def t_infl_at(eta: float) -> float:
        tilde = _latent_draws(e_hat, eta, draws, seed)
        full = _entropy(tilde).mean(axis=1).mean()
        return float(max(0.0, 1.0 - full / base_t)) if base_t > 0 else 0.0

    lo, hi = 1e-4, 1.0 - 1e-4
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if t_infl_at(mid) < treatment_influence:
            lo = mid
        else:
            hi = mid
    eta = 0.5 * (lo + hi)

    tilde = _latent_draws(e_hat, eta, draws, seed)
    logit = np.log(tilde) - np.log1p(-tilde)
    weights = np.where(dataset.z[:, None] == 1.0, tilde, 1.0 - tilde)
    weights = weights / weights.sum(axis=1, keepdims=True)
    centered = logit - (weights * logit).sum(axis=1, keepdims=True)
    base_o = _entropy(m_obs).mean()

    def o_infl_at(delta: float) -> float:
        shifted = np.clip(m_obs[:, None] + delta * centered,
                          _DRAW_EPS, 1.0 - _DRAW_EPS)
        full = (weights * _entropy(shifted)).sum(axis=1).mean()
        return float(max(0.0, 1.0 - full / base_o)) if base_o > 0 else 0.0

    lo, hi = 0.0, 1.0
    while o_infl_at(hi) < outcome_influence and hi < 1e6:
        hi *= 2.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if o_infl_at(mid) < outcome_influence:
            lo = mid
        else:
            hi = mid
    return SensitivityParams(eta=eta, delta=0.5 * (lo + hi))


@dataclass(frozen=True)
class AustenCurve:
    """Sensitivity frontier at a fixed target bias.

    `frontier` rows are (eta, treatment influence, outcome influence),
    sorted by treatment influence.  `covariate_points` maps a group name
    to its (treatment influence, outcome influence) pair.  `bands`, when
    present, holds (eta, lo, hi) bootstrap envelopes for the outcome
    influence.  A vacuous curve (no majority of verdicts to flip) has an
    empty frontier.
    """

    target_bias: float
    vacuous: bool
    frontier: tuple
    covariate_points: dict
    bands: tuple | None = None


def flip_target(battery: BatteryReport) -> tuple[float, bool]:
    """Smallest shift toward zero that puts 0 inside half the intervals.

    Each estimate needs |nearest CI bound| of shift (zero when the CI
    already contains 0); the target is the ceil(K/2)-th smallest such
    distance.  A target of zero means no majority is left to flip and the
    curve is vacuous.
    """
    distances = []
    for est in battery.estimates:
        ci = est.ci
        if ci.lo <= 0.0 <= ci.hi:
            distances.append(0.0)
        elif ci.lo > 0.0:
            distances.append(ci.lo)
        else:
            distances.append(-ci.hi)
    if not distances:
        return 0.0, True
    need = int(np.ceil(len(distances) / 2))
    target = float(np.sort(distances)[need - 1])
    return target, target <= 0.0


def austen_curve(
    dataset: ObservationalDataset,
    battery: BatteryReport,
    prop: PropensityModel,
    outcome: OutcomeModel,
    grid_size: int = 20,
    *,
    groups: dict | None = None,
    prop_config=None,
    outcome_config=None,
    draws: int = 1000,
    seed: int = 0,
    band_replicates: int = 0,
    folds: int = 5,
) -> AustenCurve:
    """Austen curve of the battery: the confounder-strength frontier that
    would flip half the verdicts, plus observed covariate-group points.

    The eta grid has `grid_size` points evenly spaced inside (0, 1);
    each point reports the normalized treatment and outcome influences
    alongside eta itself.  With `band_replicates` > 0, stratified dataset
    resamples (propensity refit each time) give percentile bands for the
    outcome influence.
    """
    target, vacuous = flip_target(battery)
    if vacuous:
        return AustenCurve(target_bias=target, vacuous=True, frontier=(),
                           covariate_points={}, bands=None)

    e_hat = prop.predict(dataset.x)
    m_obs = outcome.predict(dataset.z, dataset.x)
    etas = np.arange(1, grid_size + 1) / (grid_size + 1.0)
    rows = []
    for k, eta in enumerate(etas):
        t_infl, o_infl, _ = _frontier_point(
            dataset, e_hat, m_obs, float(eta), target, draws, [seed, k]
        )
        rows.append((float(eta), t_infl, o_infl))
    rows.sort(key=lambda r: r[1])

    points = {}
    for name, group in (groups or {}).items():
        points[name] = influence_of_group(
            dataset, group, prop_config, outcome_config, folds=folds, seed=seed
        )

    bands = None
    if band_replicates > 0:
        fit_config = prop_config or LogisticConfig()
        idx0 = np.flatnonzero(dataset.z == 0)
        idx1 = np.flatnonzero(dataset.z == 1)
        samples = np.empty((band_replicates, grid_size))
        for b in range(band_replicates):
            rng = np.random.default_rng([seed, 1 + b])
            take = np.concatenate([
                rng.choice(idx0, size=idx0.size, replace=True),
                rng.choice(idx1, size=idx1.size, replace=True),
            ])
            boot = dataset.subset(take)
            model = fit_config.fit(boot.x, boot.z)
            e_b = np.clip(model.predict_probability(boot.x), prop.clip, 1.0 - prop.clip)
            m_b = outcome.predict(boot.z, boot.x)
            for k, eta in enumerate(etas):
                _, o_infl, _ = _frontier_point(
                    boot, e_b, m_b, float(eta), target, draws, [seed, k]
                )
                samples[b, k] = o_infl
        lo = np.percentile(samples, 2.5, axis=0)
        hi = np.percentile(samples, 97.5, axis=0)
        bands = tuple(
            (float(etas[k]), float(lo[k]), float(hi[k])) for k in range(grid_size)
        )

    return AustenCurve(
        target_bias=target,
        vacuous=False,
        frontier=tuple(rows),
        covariate_points=points,
        bands=bands,
    )


def render_curve(curve: AustenCurve) -> str:
    """Structured text: frontier rows, covariate-point rows, band rows."""
    lines = [f"target_bias={curve.target_bias!r} vacuous={curve.vacuous}"]
    if curve.vacuous:
        lines.append("EMPTY CURVE: no majority of intervals left to flip")
        return "\n".join(lines) + "\n"
    lines.append("== frontier (eta, treatment influence, outcome influence) ==")
    for eta, t_infl, o_infl in curve.frontier:
        lines.append(f"{eta!r} {t_infl!r} {o_infl!r}")
    if curve.covariate_points:
        lines.append("== covariate groups ==")
        for name in sorted(curve.covariate_points):
            t_infl, o_infl = curve.covariate_points[name]
            lines.append(f"{name} {t_infl!r} {o_infl!r}")
    if curve.bands is not None:
        lines.append("== outcome-influence bands (eta, lo, hi) ==")
        for eta, lo, hi in curve.bands:
            lines.append(f"{eta!r} {lo!r} {hi!r}")
    return "\n".join(lines) + "\n"
