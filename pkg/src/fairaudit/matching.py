"""Cost matrices, the trimmed optimal transport problem, and matched
weighted samples.

The trimmed problem augments the n0 x n1 cost matrix with one dummy row
and column (zero cost to every real point, dummy-to-dummy prohibited).
Real rows must ship (1/n0)/(1-a0) each, real columns receive
(1/n1)/(1-a1) each, the dummy row carries a1/(1-a1) and the dummy column
a0/(1-a0); mass sent to a dummy is trimmed away.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import solve_transport
from .data import NormalizationSpec

__all__ = [
    "TrimSpec",
    "CostMatrix",
    "TransportPlan",
    "WeightedSample",
    "build_cost_euclidean",
    "build_cost_propensity",
    "solve_trimmed_transport",
    "matched_weighted_samples",
    "default_trim_levels",
    "default_distance_weights",
    "MATCHED_VARIANTS",
    "OUTCOME_KINDS",
]

MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class TrimSpec:
    """Trim fractions: a0 for the non-treated group, a1 for the treated."""

    alpha0: float = 0.0
    alpha1: float = 0.0

    def __post_init__(self):
        for label, alpha in (("alpha0", self.alpha0), ("alpha1", self.alpha1)):
            if not (0.0 <= alpha < 1.0):
                raise ValueError(f"{label} must be in [0, 1)")


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise matching costs between the two groups."""

    values: np.ndarray
    kind: str  # "euclidean" or "propensity"
    weights: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("cost matrix must be 2-d")
        if not np.all(np.isfinite(values)):
            raise ValueError("cost matrix must be finite")
        if np.any(values < 0):
            raise ValueError("cost matrix must be nonnegative")
        if self.kind not in ("euclidean", "propensity"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class TransportPlan:
    """Solved plan for the trimmed problem; dummy row/column come last."""

    matrix: np.ndarray  # (n0+1, n1+1)
    trim: TrimSpec
    objective: float
    n_iter: int = 0

    @property
    def n0(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def n1(self) -> int:
        return self.matrix.shape[1] - 1

    def real_row_mass(self) -> np.ndarray:
        """Per-row mass shipped to real points (dummy column excluded)."""
        return self.matrix[: self.n0, : self.n1].sum(axis=1)

    def real_col_mass(self) -> np.ndarray:
        return self.matrix[: self.n0, : self.n1].sum(axis=0)


@dataclass(frozen=True)
class WeightedSample:
    """Rows (y, z, x) with nonnegative weights summing to 1."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.y.shape[0],):
            raise ValueError("one weight per row required")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


def _group_matrix(group) -> np.ndarray:
    x = group.x if hasattr(group, "x") else group
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def build_cost_euclidean(
    group0,
    group1,
    normalization: NormalizationSpec,
    w: np.ndarray | None = None,
    *,
    names: Sequence[str],
) -> CostMatrix:
    """Squared weighted Euclidean costs on normalized covariates.

    C_ij = || w * (x0_i - x1_j) ||^2 where each covariate was divided by
    its normalization scale first, so a weight of 5 scales that
    coordinate's squared difference by 25.
    """
    x0 = _group_matrix(group0)
    x1 = _group_matrix(group1)
    if x0.shape[0] == 0 or x1.shape[0] == 0:
        raise ValueError("both groups must be nonempty")
    if x0.shape[1] != len(names) or x1.shape[1] != len(names):
        raise ValueError("names must label every covariate column")
    weights = np.ones(len(names)) if w is None else np.asarray(w, dtype=float)
    if weights.shape != (len(names),) or np.any(weights < 0):
        raise ValueError("need one nonnegative weight per covariate")
    scales = normalization.scale_vector(names)
    a = (x0 / scales) * weights
    b = (x1 / scales) * weights
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return CostMatrix(np.maximum(sq, 0.0), "euclidean", weights)


def build_cost_propensity(group0, group1, model) -> CostMatrix:
    """C_ij = |e(x0_i) - e(x1_j)| under the fitted propensity model."""
    e0 = model.predict(_group_matrix(group0))
    e1 = model.predict(_group_matrix(group1))
    return CostMatrix(np.abs(e0[:, None] - e1[None, :]), "propensity")


def solve_trimmed_transport(
    cost: CostMatrix | np.ndarray,
    trim: TrimSpec,
    *,
    max_iter: int | None = None,
    method: str = "exact",
    epsilon: float = 1e-2,
    backend: str | None = None,
) -> TransportPlan:
    """Solve the trimmed transportation problem for the given costs.

    method "exact" runs the network-simplex kernel; "entropic" runs
    log-domain Sinkhorn with regularization `epsilon` (approximate, for
    large problems; marginals still honored to 1e-10 or it raises).
    """
    values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("cost matrix must be 2-d and nonempty")
    n0, n1 = values.shape
    a_real = (1.0 / n0) / (1.0 - trim.alpha0)
    b_real = (1.0 / n1) / (1.0 - trim.alpha1)
    a_dummy = trim.alpha1 / (1.0 - trim.alpha1)
    b_dummy = trim.alpha0 / (1.0 - trim.alpha0)

    # dummy row first / dummy column last so the northwest-corner start
    # never touches the prohibited dummy-to-dummy cell
    aug = np.zeros((n0 + 1, n1 + 1))
    aug[1:, :n1] = values
    a = np.concatenate([[a_dummy], np.full(n0, a_real)])
    b = np.concatenate([np.full(n1, b_real), [b_dummy]])

    if method == "exact":
        forbidden = np.zeros((n0 + 1, n1 + 1), dtype=bool)
        forbidden[0, n1] = True
        flows, objective, n_iter = solve_transport(
            aug, a, b, forbidden=forbidden, max_iter=max_iter, backend=backend
        )
    elif method == "entropic":
        flows, n_iter = _sinkhorn(aug, a, b, epsilon, max_iter or 200_000)
        objective = float((flows * aug).sum())
    else:
        raise ValueError(f"unknown method {method!r}")

    plan = np.vstack([flows[1:, :], flows[:1, :]])  # dummy row moves last
    if float(plan.min()) < -MARGINAL_TOL:
        raise RuntimeError(f"plan carries negative mass: {float(plan.min())!r}")
    plan = np.maximum(plan, 0.0)
    result = TransportPlan(plan, trim, objective, n_iter)
    _check_plan(result, a_real, b_real, a_dummy, b_dummy)
    return result


def _sinkhorn(cost, a, b, epsilon, max_iter):
    """Log-domain Sinkhorn on the augmented matrix; (0, n1) is prohibited."""
    m, n = cost.shape
    work = cost.copy()
    work[0, n - 1] = np.inf
    log_a = np.log(np.where(a > 0, a, 1.0))
    log_b = np.log(np.where(b > 0, b, 1.0))
    f = np.zeros(m)
    g = np.zeros(n)
    neg = -work / epsilon
    for it in range(1, max_iter + 1):
        with np.errstate(divide="ignore"):
            f = epsilon * (log_a - _lse(neg + g[None, :] / epsilon, axis=1))
            f[a == 0] = -np.inf
            g = epsilon * (log_b - _lse(neg.T + f[None, :] / epsilon, axis=1))
            g[b == 0] = -np.inf
        plan = np.exp(neg + f[:, None] / epsilon + g[None, :] / epsilon)
        plan[a == 0, :] = 0.0
        plan[:, b == 0] = 0.0
        err = max(
            float(np.abs(plan.sum(axis=1) - a).max()),
            float(np.abs(plan.sum(axis=0) - b).max()),
        )
        if err < 1e-10:
            return plan, it
    raise RuntimeError(
        f"entropic solver did not reach marginal tolerance in {max_iter} sweeps"
    )


def _lse(m, axis):
    top = np.max(m, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.squeeze(top, axis) + np.log(np.exp(m - top).sum(axis=axis))


def _check_plan(plan: TransportPlan, a_real, b_real, a_dummy, b_dummy) -> None:
    mat = plan.matrix
    n0, n1 = plan.n0, plan.n1
    deviations = {
        "real row sums": float(np.abs(mat[:n0].sum(axis=1) - a_real).max()),
        "real column sums": float(np.abs(mat[:, :n1].sum(axis=0) - b_real).max()),
        "dummy row total": abs(float(mat[n0].sum()) - a_dummy),
        "dummy column total": abs(float(mat[:, n1].sum()) - b_dummy),
    }
    for label, deviation in deviations.items():
        if deviation > MARGINAL_TOL:
            raise RuntimeError(f"plan violates {label} beyond tolerance: {deviation!r}")
    if mat[n0, n1] != 0.0:
        raise RuntimeError("dummy-to-dummy cell must carry exactly zero mass")


def matched_weighted_samples(
    plan: TransportPlan, group0, group1
) -> tuple[WeightedSample, WeightedSample]:
    """Weight each row by its real (untrimmed) mass, renormalized to sum 1.

    group0/group1 carry y and x arrays (GroupView or equivalent); rows
    fully trimmed away keep weight 0.
    """
    x0 = _group_matrix(group0)
    x1 = _group_matrix(group1)
    if x0.shape[0] != plan.n0 or x1.shape[0] != plan.n1:
        raise ValueError("plan dimensions do not match the groups")
    w0 = plan.real_row_mass()
    w1 = plan.real_col_mass()
    if w0.sum() <= 0 or w1.sum() <= 0:
        raise ValueError("all real mass is zero; cannot form matched samples")
    return (
        WeightedSample(np.asarray(group0.y, dtype=float), np.zeros(plan.n0), x0, _renorm(w0)),
        WeightedSample(np.asarray(group1.y, dtype=float), np.ones(plan.n1), x1, _renorm(w1)),
    )


def _renorm(w: np.ndarray) -> np.ndarray:
    w = w / w.sum()
    total = w.sum()
    return w if total == 1.0 else w / total


MATCHED_VARIANTS = ("MatchedEuc", "MatchedEuc2", "MatchedProp", "MatchedProp2")
OUTCOME_KINDS = ("hospitalisation_death", "death_in_hospital")

# built-in trimming presets keyed by outcome kind, then variant, then
# period 1..4; (alpha0, alpha1) with alpha0 applying to the non-treated
_TRIM_TABLE = {
    "hospitalisation_death": {
        "MatchedEuc": ((0.4234, 0.0), (0.8791, 0.0), (0.9530, 0.0), (0.9590, 0.0)),
        "MatchedEuc2": ((0.85, 0.75), (0.9099, 0.075), (0.9625, 0.075), (0.9686, 0.075)),
        "MatchedProp": ((0.4234, 0.0), (0.8791, 0.0), (0.9530, 0.0), (0.9590, 0.0)),
        "MatchedProp2": ((0.70, 0.60), (0.9099, 0.075), (0.9625, 0.075), (0.9686, 0.075)),
    },
    "death_in_hospital": {
        "MatchedEuc": ((0.8126, 0.0), (0.8836, 0.0), (0.9535, 0.0), (0.9267, 0.0)),
        "MatchedEuc2": ((0.8736, 0.30), (0.9720, 0.075), (0.9630, 0.075), (0.9360, 0.075)),
        "MatchedProp": ((0.8126, 0.0), (0.8836, 0.0), (0.9535, 0.0), (0.9267, 0.0)),
        "MatchedProp2": ((0.8736, 0.30), (0.8924, 0.075), (0.9630, 0.075), (0.9360, 0.075)),
    },
}

# per-covariate distance weights for the death_in_hospital cohort, one
# column per period; every other outcome kind uses all ones
_DISTANCE_WEIGHTS = {
    "age": (1, 1, 2, 1),
    "charlson_index": (2, 1, 1, 3),
    "time_until_test": (2, 1, 1, 2),
    "time_until_hosp": (2, 1, 1, 1),
    "time_positive_to_hosp": (5, 4, 8, 1),
    "cancer": (1, 1, 8, 6),
    "respiratory_illness": (1, 1, 1, 1),
    "cardiopathy": (1, 1, 1, 1),
    "heart_failure": (1, 1, 1, 1),
    "interstitial_lung_disease": (1, 1, 1, 1),
    "liver_disease": (1, 1, 1, 1),
    "cystic_fibrosis": (1, 1, 1, 1),
    "dementia": (1, 1, 1, 1),
}


def default_trim_levels(outcome_kind: str, period: int) -> dict[str, TrimSpec]:
    """Built-in TrimSpec per matched-estimator variant."""
    if outcome_kind not in _TRIM_TABLE:
        raise KeyError(f"unknown outcome kind {outcome_kind!r}")
    if period not in (1, 2, 3, 4):
        raise KeyError(f"unknown period {period!r}")
    table = _TRIM_TABLE[outcome_kind]
    return {
        variant: TrimSpec(*table[variant][period - 1]) for variant in MATCHED_VARIANTS
    }


def default_distance_weights(
    outcome_kind: str, period: int, names: Sequence[str]
) -> np.ndarray:
    """Per-covariate weights for the weighted Euclidean cost."""
    if outcome_kind not in OUTCOME_KINDS:
        raise KeyError(f"unknown outcome kind {outcome_kind!r}")
    if period not in (1, 2, 3, 4):
        raise KeyError(f"unknown period {period!r}")
    if outcome_kind != "death_in_hospital":
        return np.ones(len(names))
    out = []
    for name in names:
        weights = _DISTANCE_WEIGHTS.get(name)
        out.append(float(weights[period - 1]) if weights is not None else 1.0)
    return np.array(out)
