"""The eight ATE estimators, their confidence intervals, and the verdict.

Estimator tags: Unmatched, Unmatched2 (regression adjustment), MatchedEuc,
MatchedEuc2, MatchedProp, MatchedProp2 (trimmed optimal-transport
matching), InverseWeighting (doubly robust), InverseWeighting2
(Horvitz-Thompson).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from . import matching
from .data import GroupView, ObservationalDataset, fit_normalization
from .models import OutcomeModel, PropensityModel, fit_outcome, fit_propensity

__all__ = [
    "ESTIMATOR_TAGS",
    "ConfidenceInterval",
    "AteEstimate",
    "BatteryConfig",
    "BatteryReport",
    "ate_unmatched",
    "ate_adjusted",
    "ate_matched",
    "ate_ipw_dr",
    "ate_ipw_ht",
    "bootstrap_ci",
    "fairness_verdict",
    "run_battery",
    "EVIDENCE",
    "NO_EVIDENCE",
]

ESTIMATOR_TAGS = (
    "Unmatched",
    "Unmatched2",
    "MatchedEuc",
    "MatchedEuc2",
    "MatchedProp",
    "MatchedProp2",
    "InverseWeighting",
    "InverseWeighting2",
)

EVIDENCE = "evidence-of-unfairness"
NO_EVIDENCE = "no-evidence"


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float
    method: str  # "asymptotic" or "bootstrap"

    def __post_init__(self):
        if not (0.0 < self.level < 1.0):
            raise ValueError("level must be in (0, 1)")
        if self.lo > self.hi:
            raise ValueError("interval bounds out of order")
        if self.method not in ("asymptotic", "bootstrap"):
            raise ValueError(f"unknown CI method {self.method!r}")

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class AteEstimate:
    estimator: str
    value: float
    ci: ConfidenceInterval
    n0: int
    n1: int
    flags: tuple[str, ...] = ()


def _split_outcomes(dataset: ObservationalDataset) -> tuple[np.ndarray, np.ndarray]:
    if dataset.n_treated == 0 or dataset.n_control == 0:
        raise ValueError("both treatment classes must be nonempty")
    return dataset.y[dataset.z == 0], dataset.y[dataset.z == 1]


def _normal_ci(value: float, se: float, level: float) -> ConfidenceInterval:
    zq = float(norm.ppf(0.5 + level / 2.0))
    return ConfidenceInterval(value - zq * se, value + zq * se, level, "asymptotic")


def ate_unmatched(dataset: ObservationalDataset, level: float = 0.95) -> AteEstimate:
    """Difference of outcome means between the two groups."""
    y0, y1 = _split_outcomes(dataset)
    p0, p1 = float(y0.mean()), float(y1.mean())
    value = p1 - p0
    se = float(np.sqrt(p1 * (1 - p1) / y1.shape[0] + p0 * (1 - p0) / y0.shape[0]))
    flags = ("degenerate-ci",) if se == 0.0 else ()
    return AteEstimate("Unmatched", value, _normal_ci(value, se, level),
                       y0.shape[0], y1.shape[0], flags)


def adjusted_value(dataset: ObservationalDataset, outcome: OutcomeModel) -> float:
    m0, m1 = outcome.counterfactuals(dataset.x)
    return float((m1 - m0).mean())


def ate_adjusted(
    dataset: ObservationalDataset,
    outcome: OutcomeModel,
    *,
    level: float = 0.95,
    ci_method: str = "bootstrap",
    bootstrap_replicates: int = 100,
    seed: int = 0,
    refit: Callable[[ObservationalDataset], OutcomeModel] | None = None,
) -> AteEstimate:
    """Regression adjustment: mean difference of model counterfactuals.

    The default CI is a bootstrap percentile interval; `refit` refits the
    outcome model inside each replicate (when omitted, the supplied model
    is reused unrefitted).
    """
    value = adjusted_value(dataset, outcome)
    n0, n1 = dataset.n_control, dataset.n_treated
    if ci_method == "bootstrap":
        fit = refit if refit is not None else (lambda d: outcome)
        lo, hi = bootstrap_ci(
            lambda d: adjusted_value(d, fit(d)), dataset,
            replicates=bootstrap_replicates, level=level, seed=seed,
        )
        return AteEstimate("Unmatched2", value,
                           ConfidenceInterval(lo, hi, level, "bootstrap"), n0, n1)
    if ci_method == "asymptotic":
        m0, m1 = outcome.counterfactuals(dataset.x)
        se = float((m1 - m0).std(ddof=1) / np.sqrt(dataset.n))
        return AteEstimate("Unmatched2", value, _normal_ci(value, se, level), n0, n1)
    raise ValueError(f"unknown ci method {ci_method!r}")


def ate_matched(
    w0: matching.WeightedSample,
    w1: matching.WeightedSample,
    level: float = 0.95,
    tag: str = "MatchedEuc",
) -> AteEstimate:
    """Weighted difference of outcome means on matched samples.

    The CI is the difference-of-proportions interval with effective
    sample sizes (sum w)^2 / sum w^2.
    """
    p0 = float(w0.weights @ w0.y)
    p1 = float(w1.weights @ w1.y)
    value = p1 - p0
    ne0 = effective_sample_size(w0.weights)
    ne1 = effective_sample_size(w1.weights)
    if ne0 <= 0 or ne1 <= 0:
        raise ValueError("zero effective sample size")
    se = float(np.sqrt(p1 * (1 - p1) / ne1 + p0 * (1 - p0) / ne0))
    flags = ("degenerate-ci",) if se == 0.0 else ()
    return AteEstimate(tag, value, _normal_ci(value, se, level), w0.n, w1.n, flags)


def effective_sample_size(weights: np.ndarray) -> float:
    total_sq = float(weights.sum()) ** 2
    denom = float((weights * weights).sum())
    return total_sq / denom if denom > 0 else 0.0


def dr_value(
    dataset: ObservationalDataset, e: np.ndarray, m0: np.ndarray, m1: np.ndarray
) -> np.ndarray:
    """Per-row doubly robust scores; their mean is the estimate."""
    y, z = dataset.y, dataset.z
    return (m1 - m0
            + z * (y - m1) / e
            - (1.0 - z) * (y - m0) / (1.0 - e))


def ate_ipw_dr(
    dataset: ObservationalDataset,
    outcome: OutcomeModel,
    prop: PropensityModel,
    level: float = 0.95,
) -> AteEstimate:
    """Doubly robust estimator; CI from the normal approximation on the
    per-row scores (influence function)."""
    e = prop.predict(dataset.x)
    _require_clipped(e)
    m0, m1 = outcome.counterfactuals(dataset.x)
    scores = dr_value(dataset, e, m0, m1)
    value = float(scores.mean())
    se = float(scores.std(ddof=1) / np.sqrt(dataset.n))
    return AteEstimate("InverseWeighting", value, _normal_ci(value, se, level),
                       dataset.n_control, dataset.n_treated)


def ht_value(dataset: ObservationalDataset, e: np.ndarray) -> np.ndarray:
    y, z = dataset.y, dataset.z
    return z * y / e - (1.0 - z) * y / (1.0 - e)


def ate_ipw_ht(
    dataset: ObservationalDataset, prop: PropensityModel, level: float = 0.95
) -> AteEstimate:
    """Horvitz-Thompson inverse weighting; normal CI on per-row scores."""
    e = prop.predict(dataset.x)
    _require_clipped(e)
    scores = ht_value(dataset, e)
    value = float(scores.mean())
    se = float(scores.std(ddof=1) / np.sqrt(dataset.n))
    return AteEstimate("InverseWeighting2", value, _normal_ci(value, se, level),
                       dataset.n_control, dataset.n_treated)


def _require_clipped(e: np.ndarray) -> None:
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ValueError("propensity predictions must be clipped away from 0 and 1")


def _canonical_order(dataset: ObservationalDataset) -> np.ndarray:
    keys = [dataset.x[:, j] for j in range(dataset.x.shape[1] - 1, -1, -1)]
    keys += [dataset.y, dataset.z]
    return np.lexsort(tuple(keys))


def bootstrap_ci(
    estimator: Callable[[ObservationalDataset], float],
    dataset: ObservationalDataset,
    *,
    replicates: int = 100,
    level: float = 0.95,
    seed: int = 0,
    max_failure_rate: float = 0.1,
) -> tuple[float, float]:
    """Percentile interval over stratified nonparametric resamples.

    Rows are resampled with replacement within each z class.  Replicate
    seeds derive from (seed, replicate index), and rows are put in a
    canonical sort order first, so the interval does not depend on row
    order or scheduling.  Failed replicates are dropped with a warning
    unless they exceed `max_failure_rate`.
    """
    if replicates < 50:
        raise ValueError("need at least 50 bootstrap replicates")
    order = _canonical_order(dataset)
    sorted_ds = dataset.subset(order)
    idx0 = np.flatnonzero(sorted_ds.z == 0)
    idx1 = np.flatnonzero(sorted_ds.z == 1)
    values = []
    failures = 0
    for b in range(replicates):
        rng = np.random.default_rng([seed, b])
        take0 = rng.choice(idx0, size=idx0.shape[0], replace=True) if idx0.size else idx0
        take1 = rng.choice(idx1, size=idx1.shape[0], replace=True) if idx1.size else idx1
        resample = sorted_ds.subset(np.concatenate([take0, take1]))
        try:
            values.append(float(estimator(resample)))
        except Exception as exc:  # noqa: BLE001 - replicate failures are data-driven
            failures += 1
            last_error = exc
    if failures > max_failure_rate * replicates:
        raise RuntimeError(
            f"{failures}/{replicates} bootstrap replicates failed; last: {last_error}"
        )
    if failures:
        warnings.warn(f"dropped {failures} failed bootstrap replicates")
    lo, hi = np.percentile(values, [100 * (0.5 - level / 2), 100 * (0.5 + level / 2)])
    return float(lo), float(hi)


def fairness_verdict(estimate: AteEstimate) -> str:
    """No evidence of unfairness iff the CI contains zero."""
    return NO_EVIDENCE if estimate.ci.contains(0.0) else EVIDENCE


@dataclass(frozen=True)
class BatteryConfig:
    """Settings for run_battery.

    Trim levels and distance weights default to untrimmed/unweighted; pass
    `outcome_kind` and `period` to pull the built-in presets instead.
    """

    covariates: tuple[str, ...] | None = None
    level: float = 0.95
    seed: int = 0
    bootstrap_replicates: int = 100
    majority_threshold: float = 0.6
    trim: dict[str, matching.TrimSpec] | None = None
    distance_weights: np.ndarray | None = None
    outcome_kind: str | None = None
    period: int | None = None
    propensity_config: object = None
    outcome_config: object = None
    propensity_model: PropensityModel | None = None
    outcome_model: OutcomeModel | None = None
    refit_in_bootstrap: bool = True
    ci_method: dict[str, str] = field(default_factory=dict)
    subsample_cap: int = 20_000
    cross_fit_folds: int = 0  # 0 disables cross-fitting


@dataclass(frozen=True)
class BatteryReport:
    estimates: tuple[AteEstimate, ...]
    verdicts: dict[str, str]
    evidence_fraction: float
    majority_verdict: str
    meta: str | None = None


def _battery_trim(config: BatteryConfig) -> dict[str, matching.TrimSpec]:
    if config.trim is not None:
        trim = dict(config.trim)
        for tag in matching.MATCHED_VARIANTS:
            trim.setdefault(tag, matching.TrimSpec())
        return trim
    if config.outcome_kind is not None and config.period is not None:
        return matching.default_trim_levels(config.outcome_kind, config.period)
    return {tag: matching.TrimSpec() for tag in matching.MATCHED_VARIANTS}


def _battery_distance_weights(config: BatteryConfig, names: Sequence[str]) -> np.ndarray:
    if config.distance_weights is not None:
        return np.asarray(config.distance_weights, dtype=float)
    if config.outcome_kind is not None and config.period is not None:
        return matching.default_distance_weights(config.outcome_kind, config.period, names)
    return np.ones(len(names))


def _cross_fit_nuisances(dataset, prop_config, outcome_config, folds, seed):
    """Out-of-fold propensity and counterfactual predictions."""
    rng = np.random.default_rng([seed, 104729])
    perm = rng.permutation(dataset.n)
    parts = np.array_split(perm, folds)
    e = np.empty(dataset.n)
    m0 = np.empty(dataset.n)
    m1 = np.empty(dataset.n)
    for k, val in enumerate(parts):
        train = np.concatenate([parts[i] for i in range(folds) if i != k])
        sub = dataset.subset(train)
        prop = fit_propensity(sub, prop_config, seed=seed)
        outcome = fit_outcome(sub, outcome_config, seed=seed)
        e[val] = prop.predict(dataset.x[val])
        m0[val], m1[val] = outcome.counterfactuals(dataset.x[val])
    return e, m0, m1


def run_battery(dataset: ObservationalDataset, config: BatteryConfig | None = None) -> BatteryReport:
    """Compute all eight estimators with CIs and the majority verdict."""
    config = config or BatteryConfig()
    ds = dataset
    if config.covariates is not None:
        ds = ds.select_covariates(config.covariates)
    if ds.n_treated == 0 or ds.n_control == 0:
        raise ValueError("both treatment classes must be nonempty")
    names = ds.schema.names

    def run(tag: str, compute: Callable[[], AteEstimate]) -> AteEstimate:
        try:
            return compute()
        except Exception as exc:
            raise RuntimeError(f"estimator {tag} failed: {exc}") from exc

    level = config.level
    propensity = config.propensity_model or fit_propensity(
        ds, config.propensity_config, seed=config.seed
    )
    outcome = config.outcome_model or fit_outcome(
        ds, config.outcome_config, seed=config.seed
    )

    cross_fitted = None
    if config.cross_fit_folds and config.propensity_model is None and config.outcome_model is None:
        cross_fitted = _cross_fit_nuisances(
            ds, config.propensity_config, config.outcome_config,
            config.cross_fit_folds, config.seed,
        )

    estimates = [run("Unmatched", lambda: ate_unmatched(ds, level))]

    def adjusted() -> AteEstimate:
        method = config.ci_method.get("Unmatched2", "bootstrap")
        refit = None
        if config.refit_in_bootstrap and config.outcome_model is None:
            refit = lambda d: fit_outcome(d, config.outcome_config, seed=config.seed)
        est = ate_adjusted(
            ds, outcome, level=level, ci_method=method,
            bootstrap_replicates=config.bootstrap_replicates,
            seed=config.seed, refit=refit,
        )
        if cross_fitted is not None:
            e_cf, m0_cf, m1_cf = cross_fitted
            est = AteEstimate(est.estimator, float((m1_cf - m0_cf).mean()), est.ci,
                              est.n0, est.n1, est.flags + ("cross-fitted",))
        return est

    estimates.append(run("Unmatched2", adjusted))

    group0, group1 = ds.split_groups()
    rng = np.random.default_rng([config.seed, 15485863])
    if group0.n > config.subsample_cap:
        keep = np.sort(rng.choice(group0.n, size=config.subsample_cap, replace=False))
        group0 = GroupView(group0.y[keep], group0.x[keep], group0.index[keep])
    if group1.n > config.subsample_cap:
        keep = np.sort(rng.choice(group1.n, size=config.subsample_cap, replace=False))
        group1 = GroupView(group1.y[keep], group1.x[keep], group1.index[keep])

    trim = _battery_trim(config)
    dist_w = _battery_distance_weights(config, names)

    def matched(tag: str) -> AteEstimate:
        if tag.startswith("MatchedEuc"):
            normalization = fit_normalization(ds)
            cost = matching.build_cost_euclidean(
                group0, group1, normalization, dist_w, names=names
            )
        else:
            cost = matching.build_cost_propensity(group0, group1, propensity)
        plan = matching.solve_trimmed_transport(cost, trim[tag])
        w0, w1 = matching.matched_weighted_samples(plan, group0, group1)
        return ate_matched(w0, w1, level, tag)

    for tag in matching.MATCHED_VARIANTS:
        estimates.append(run(tag, lambda tag=tag: matched(tag)))

    def ipw_dr() -> AteEstimate:
        if cross_fitted is not None:
            e_cf, m0_cf, m1_cf = cross_fitted
            _require_clipped(e_cf)
            scores = dr_value(ds, e_cf, m0_cf, m1_cf)
            value = float(scores.mean())
            se = float(scores.std(ddof=1) / np.sqrt(ds.n))
            return AteEstimate("InverseWeighting", value, _normal_ci(value, se, level),
                               ds.n_control, ds.n_treated, ("cross-fitted",))
        return ate_ipw_dr(ds, outcome, propensity, level)

    def ipw_ht() -> AteEstimate:
        if cross_fitted is not None:
            e_cf, _, _ = cross_fitted
            _require_clipped(e_cf)
            scores = ht_value(ds, e_cf)
            value = float(scores.mean())
            se = float(scores.std(ddof=1) / np.sqrt(ds.n))
            return AteEstimate("InverseWeighting2", value, _normal_ci(value, se, level),
                               ds.n_control, ds.n_treated, ("cross-fitted",))
        return ate_ipw_ht(ds, propensity, level)

    estimates.append(run("InverseWeighting", ipw_dr))
    estimates.append(run("InverseWeighting2", ipw_ht))

    verdicts = {est.estimator: fairness_verdict(est) for est in estimates}
    fraction = float(np.mean([v == EVIDENCE for v in verdicts.values()]))
    majority = EVIDENCE if fraction > config.majority_threshold else NO_EVIDENCE
    return BatteryReport(tuple(estimates), verdicts, fraction, majority, ds.meta)
