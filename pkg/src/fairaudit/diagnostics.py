"""Balance diagnostics between weighted treated and non-treated samples.

Per-covariate total variation distances, a radial-kernel MMD^2 with a
permutation test, the 2-Wasserstein distance between weighted empirical
measures, and propensity density overlays.  All functions are pure and
symmetric in their two sample arguments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import solve_transport
from .matching import WeightedSample

__all__ = [
    "KernelSpec",
    "PermutationTest",
    "BalanceReport",
    "tv_marginal",
    "mmd2",
    "mmd_permutation_test",
    "w2",
    "propensity_density_compare",
    "balance_report",
    "render_report",
]

_UNIFORM_RTOL = 1e-9

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _as_matrix(sample) -> np.ndarray:
    x = sample.x if isinstance(sample, WeightedSample) else np.asarray(sample, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("sample must be a nonempty 1-d or 2-d array")
    return x


def _weights_of(sample, n: int) -> np.ndarray:
    if isinstance(sample, WeightedSample):
        return np.asarray(sample.weights, dtype=float)
    return np.full(n, 1.0 / n)


def _is_uniform(w: np.ndarray) -> bool:
    return np.ptp(w) <= _UNIFORM_RTOL * max(w.mean(), np.finfo(float).tiny)


# ---------------------------------------------------------------------------
# total variation over one marginal


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values, kind="stable")
    v = values[order]
    cum = np.cumsum(weights[order])
    cum /= cum[-1]
    idx = int(np.searchsorted(cum, q, side="left"))
    return float(v[min(idx, len(v) - 1)])


def _silverman_bandwidth(values: np.ndarray, weights: np.ndarray) -> float:
    """Silverman's rule with the effective sample size of the weights."""
    total = weights.sum()
    mean = float(np.dot(weights, values) / total)
    sd = float(np.sqrt(np.dot(weights, (values - mean) ** 2) / total))
    iqr = (_weighted_quantile(values, weights, 0.75)
           - _weighted_quantile(values, weights, 0.25))
    candidates = [s for s in (sd, iqr / 1.34) if s > 0]
    if not candidates:
        return 0.0
    n_eff = total ** 2 / np.dot(weights, weights)
    return 0.9 * min(candidates) * n_eff ** (-0.2)


def _kde_on_grid(values: np.ndarray, weights: np.ndarray, grid: np.ndarray,
                 bandwidth: float) -> np.ndarray:
    w = weights / weights.sum()
    u = (grid[:, None] - values[None, :]) / bandwidth
    dens = np.exp(-0.5 * u * u) @ w
    return dens / (bandwidth * np.sqrt(2.0 * np.pi))


def _discrete_tv(v0, w0, v1, w1) -> float:
    support = np.unique(np.concatenate([v0, v1]))
    p0 = np.zeros(support.size)
    p1 = np.zeros(support.size)
    np.add.at(p0, np.searchsorted(support, v0), w0 / w0.sum())
    np.add.at(p1, np.searchsorted(support, v1), w1 / w1.sum())
    return float(0.5 * np.abs(p0 - p1).sum())


def tv_marginal(sample0, sample1, covariate: int, kind: str) -> float:
    """Total variation distance between one covariate's two marginals.

    Binary covariates use exact weighted frequencies, 0.5 * sum |p0 - p1|.
    Continuous ones use weighted Gaussian kernel density estimates with
    Silverman bandwidths on a shared 512-point grid and trapezoidal
    integration of |f0 - f1| / 2.  A group with a single distinct value has
    no usable bandwidth; both groups then fall back to the discrete rule
    and a warning is issued.
    """
    x0, x1 = _as_matrix(sample0), _as_matrix(sample1)
    v0 = x0[:, covariate]
    v1 = x1[:, covariate]
    w0 = _weights_of(sample0, v0.size)
    w1 = _weights_of(sample1, v1.size)
    if kind not in ("binary", "continuous"):
        raise ValueError(f"kind must be 'binary' or 'continuous', got {kind!r}")
    if kind == "binary":
        return _discrete_tv(v0, w0, v1, w1)

    h0 = _silverman_bandwidth(v0, w0)
    h1 = _silverman_bandwidth(v1, w1)
    if not (np.isfinite(h0) and np.isfinite(h1)) or h0 <= 0 or h1 <= 0:
        warnings.warn(
            "degenerate KDE bandwidth; treating the covariate as discrete",
            stacklevel=2,
        )
        return _discrete_tv(v0, w0, v1, w1)

    pad = 3.0 * max(h0, h1)
    pooled = np.concatenate([v0, v1])
    grid = np.linspace(pooled.min() - pad, pooled.max() + pad, 512)
    f0 = _kde_on_grid(v0, w0, grid, h0)
    f1 = _kde_on_grid(v1, w1, grid, h1)
    return float(0.5 * _trapezoid(np.abs(f0 - f1), grid))


# ---------------------------------------------------------------------------
# maximum mean discrepancy


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel exp(-sigma * ||s - t||^2).

    sigma "auto" uses the median heuristic: 1 / median of the squared
    pairwise distances on a pooled subsample of at most `subsample_cap`
    points drawn with `seed`.
    """

    sigma: float | str = "auto"
    subsample_cap: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.sigma != "auto":
            if not (float(self.sigma) > 0):
                raise ValueError("sigma must be positive or 'auto'")


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :]
    sq -= 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


def _sq_dists_exact(a: np.ndarray, b: np.ndarray, block: int = 128) -> np.ndarray:
    """Squared distances via explicit differences, blocked over rows of a.

    Slower than the inner-product expansion but free of its cancellation
    dust; equal rows get a cost of exactly zero, which the Wasserstein
    root needs.
    """
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], block):
        stop = min(start + block, a.shape[0])
        diff = a[start:stop, None, :] - b[None, :, :]
        out[start:stop] = (diff * diff).sum(axis=2)
    return out


def resolve_sigma(pooled: np.ndarray, spec: KernelSpec) -> float:
    """Concrete kernel scale for a pooled sample under the given settings."""
    if spec.sigma != "auto":
        return float(spec.sigma)
    if pooled.shape[0] > spec.subsample_cap:
        rng = np.random.default_rng([spec.seed, pooled.shape[0]])
        keep = rng.choice(pooled.shape[0], size=spec.subsample_cap, replace=False)
        pooled = pooled[keep]
    d2 = _sq_dists(pooled, pooled)
    upper = d2[np.triu_indices(pooled.shape[0], k=1)]
    med = float(np.median(upper)) if upper.size else 0.0
    if med <= 0:
        warnings.warn("median pairwise distance is zero; using sigma = 1.0",
                      stacklevel=2)
        return 1.0
    return 1.0 / med


def _require_unweighted(sample, n: int, name: str) -> None:
    w = _weights_of(sample, n)
    if not _is_uniform(w):
        raise ValueError(
            f"{name} carries non-uniform weights; the MMD estimator has no "
            "weighted form, use w2 for weighted samples"
        )


def mmd2(sample0, sample1, kernel: KernelSpec | None = None) -> float:
    """Biased (V-statistic) squared maximum mean discrepancy.

    Both samples must be unweighted or carry uniform weights.  The kernel
    is the radial exp(-sigma ||s - t||^2); sigma defaults to the median
    heuristic on the pooled rows.
    """
    x0, x1 = _as_matrix(sample0), _as_matrix(sample1)
    _require_unweighted(sample0, x0.shape[0], "sample0")
    _require_unweighted(sample1, x1.shape[0], "sample1")
    if x0.shape[1] != x1.shape[1]:
        raise ValueError("samples must share the covariate dimension")
    kernel = kernel or KernelSpec()
    sigma = resolve_sigma(np.vstack([x0, x1]), kernel)
    k00 = np.exp(-sigma * _sq_dists(x0, x0)).mean()
    k01 = np.exp(-sigma * _sq_dists(x0, x1)).mean()
    k11 = np.exp(-sigma * _sq_dists(x1, x1)).mean()
    return float(k00 - 2.0 * k01 + k11)


@dataclass(frozen=True)
class PermutationTest:
    statistic: float
    threshold: float
    reject: bool
    permutations: int
    level: float


def mmd_permutation_test(
    sample0,
    sample1,
    kernel: KernelSpec | None = None,
    level: float = 0.05,
    permutations: int = 100,
    seed: int = 0,
) -> PermutationTest:
    """Pooled-relabeling permutation test for MMD^2.

    The kernel scale is resolved once on the pooled rows, which keeps it
    invariant under relabeling.  The threshold is the empirical (1 - level)
    quantile of the permuted statistics, i.e. the ceil((1 - level) * B)-th
    order statistic, and the test rejects when the observed statistic
    strictly exceeds it.
    """
    if permutations < 100:
        raise ValueError("at least 100 permutations required")
    x0, x1 = _as_matrix(sample0), _as_matrix(sample1)
    _require_unweighted(sample0, x0.shape[0], "sample0")
    _require_unweighted(sample1, x1.shape[0], "sample1")
    n0 = x0.shape[0]
    pooled = np.vstack([x0, x1])
    kernel = kernel or KernelSpec()
    sigma = resolve_sigma(pooled, kernel)
    gram = np.exp(-sigma * _sq_dists(pooled, pooled))

    def stat(idx0: np.ndarray, idx1: np.ndarray) -> float:
        k00 = gram[np.ix_(idx0, idx0)].mean()
        k01 = gram[np.ix_(idx0, idx1)].mean()
        k11 = gram[np.ix_(idx1, idx1)].mean()
        return float(k00 - 2.0 * k01 + k11)

    base = np.arange(pooled.shape[0])
    statistic = stat(base[:n0], base[n0:])
    draws = np.empty(permutations)
    for b in range(permutations):
        rng = np.random.default_rng([seed, b])
        perm = rng.permutation(pooled.shape[0])
        draws[b] = stat(perm[:n0], perm[n0:])
    order = np.sort(draws)
    k = max(1, int(np.ceil((1.0 - level) * permutations)))
    threshold = float(order[k - 1])
    return PermutationTest(
        statistic=statistic,
        threshold=threshold,
        reject=bool(statistic > threshold),
        permutations=permutations,
        level=level,
    )


# ---------------------------------------------------------------------------
# Wasserstein distance


def w2(sample0, sample1) -> float:
    """2-Wasserstein distance between two weighted empirical measures.

    Solves the exact transportation problem under squared Euclidean ground
    cost with the samples' own weights as marginals (no trimming) and
    returns the square root of the optimal cost.
    """
    x0, x1 = _as_matrix(sample0), _as_matrix(sample1)
    if x0.shape[1] != x1.shape[1]:
        raise ValueError("samples must share the covariate dimension")
    w0 = _weights_of(sample0, x0.shape[0])
    w1 = _weights_of(sample1, x1.shape[0])
    w0 = w0 / w0.sum()
    w1 = w1 / w1.sum()
    cost = _sq_dists_exact(x0, x1)
    _, objective, _ = solve_transport(cost, w0, w1)
    return float(np.sqrt(max(objective, 0.0)))


# ---------------------------------------------------------------------------
# propensity density overlay


def propensity_density_compare(
    sample0,
    sample1,
    prop,
    grid: int | np.ndarray = 512,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted KDE curves of the propensity estimates for both classes.

    Returns (grid, density0, density1) on [0, 1]; each curve is
    renormalized to unit mass on the grid so boundary truncation does not
    leak probability.
    """
    x0, x1 = _as_matrix(sample0), _as_matrix(sample1)
    w0 = _weights_of(sample0, x0.shape[0])
    w1 = _weights_of(sample1, x1.shape[0])
    e0 = np.asarray(prop.predict(x0), dtype=float)
    e1 = np.asarray(prop.predict(x1), dtype=float)
    pts = np.linspace(0.0, 1.0, int(grid)) if np.isscalar(grid) else np.asarray(grid, dtype=float)

    curves = []
    for values, weights in ((e0, w0), (e1, w1)):
        h = _silverman_bandwidth(values, weights)
        if not np.isfinite(h) or h <= 0:
            warnings.warn(
                "degenerate propensity bandwidth; using 0.01", stacklevel=2
            )
            h = 0.01
        dens = _kde_on_grid(values, weights, pts, h)
        mass = _trapezoid(dens, pts)
        curves.append(dens / mass if mass > 0 else dens)
    return pts, curves[0], curves[1]


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class BalanceReport:
    """Balance diagnostics for a family of labeled sample pairs.

    `tv` maps label -> covariate name -> total variation.  `w2` maps label
    to the weighted Wasserstein distance.  `mmd2` maps label to the squared
    MMD, or None when the pair carries non-uniform weights over its full
    support (that estimator has no weighted form).  The permutation test
    refers to the "original" pair.
    """

    covariates: tuple[str, ...]
    labels: tuple[str, ...]
    tv: dict = field(default_factory=dict)
    w2: dict = field(default_factory=dict)
    mmd2: dict = field(default_factory=dict)
    mmd_test: PermutationTest | None = None
    propensity: tuple | None = None


def _support_unweighted(sample: WeightedSample) -> WeightedSample | None:
    """Positive-weight rows as a uniform-weight sample.

    Trimming concentrates weight on a strict subset of rows; those rows,
    taken unweighted, admit the MMD estimator.  When every row keeps
    positive weight there is no such subset and None signals that the
    squared MMD stays undefined for the pair.
    """
    w = np.asarray(sample.weights, dtype=float)
    if _is_uniform(w):
        return sample
    keep = w > 0
    if keep.all():
        return None
    n = int(keep.sum())
    return WeightedSample(
        y=sample.y[keep], z=sample.z[keep], x=sample.x[keep],
        weights=np.full(n, 1.0 / n),
    )


def balance_report(
    pairs: dict,
    covariates: tuple[str, ...],
    kinds: dict,
    *,
    kernel: KernelSpec | None = None,
    prop=None,
    level: float = 0.05,
    permutations: int = 100,
    seed: int = 0,
) -> BalanceReport:
    """Assemble diagnostics for labeled (sample0, sample1) pairs.

    `pairs` maps a label such as "original" or "matched" to a tuple of two
    WeightedSamples whose columns follow `covariates`; `kinds` maps each
    covariate name to "binary" or "continuous".  The permutation test and
    the propensity overlay run on the "original" pair when present.
    """
    labels = tuple(pairs)
    tv: dict = {}
    w2_table: dict = {}
    mmd_table: dict = {}
    for label, (s0, s1) in pairs.items():
        tv[label] = {
            name: tv_marginal(s0, s1, j, kinds[name])
            for j, name in enumerate(covariates)
        }
        w2_table[label] = w2(s0, s1)
        u0, u1 = _support_unweighted(s0), _support_unweighted(s1)
        if u0 is None or u1 is None:
            mmd_table[label] = None
        else:
            mmd_table[label] = mmd2(u0, u1, kernel)

    test = None
    curves = None
    if "original" in pairs:
        s0, s1 = pairs["original"]
        test = mmd_permutation_test(
            s0, s1, kernel, level=level, permutations=permutations, seed=seed
        )
        if prop is not None:
            curves = propensity_density_compare(s0, s1, prop)
    return BalanceReport(
        covariates=tuple(covariates),
        labels=labels,
        tv=tv,
        w2=w2_table,
        mmd2=mmd_table,
        mmd_test=test,
        propensity=curves,
    )


def render_report(report: BalanceReport) -> str:
    """Structured text: a TV block per covariate row, then the
    multivariate (MMD^2, W2) block, then the permutation test."""
    lines = ["== total variation per covariate =="]
    header = "covariate".ljust(28) + "".join(lbl.rjust(16) for lbl in report.labels)
    lines.append(header)
    for name in report.covariates:
        row = name.ljust(28)
        for label in report.labels:
            row += f"{report.tv[label][name]:16.6f}"
        lines.append(row)
    lines.append("")
    lines.append("== multivariate distances ==")
    lines.append("sample".ljust(28) + "MMD^2".rjust(16) + "W2".rjust(16))
    for label in report.labels:
        m = report.mmd2[label]
        mtxt = f"{m:16.6f}" if m is not None else " " * 15 + "-"
        lines.append(label.ljust(28) + mtxt + f"{report.w2[label]:16.6f}")
    if report.mmd_test is not None:
        t = report.mmd_test
        lines.append("")
        lines.append("== permutation test (original) ==")
        lines.append(
            f"statistic={t.statistic!r} threshold={t.threshold!r} "
            f"reject={t.reject} permutations={t.permutations} level={t.level!r}"
        )
    return "\n".join(lines) + "\n"
