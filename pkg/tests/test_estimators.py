"""The eight average-effect estimators, their intervals, and the battery."""

from __future__ import annotations

import numpy as np
import pytest

from fairaudit.data import CovariateSchema, ObservationalDataset
from fairaudit.estimators import (
    ESTIMATOR_TAGS,
    EVIDENCE,
    NO_EVIDENCE,
    AteEstimate,
    BatteryConfig,
    ConfidenceInterval,
    ate_adjusted,
    ate_ipw_dr,
    ate_ipw_ht,
    ate_matched,
    ate_unmatched,
    bootstrap_ci,
    dr_value,
    effective_sample_size,
    fairness_verdict,
    ht_value,
    run_battery,
)
from fairaudit.matching import WeightedSample
from fairaudit.models import FunctionPredictor, OutcomeModel, PropensityModel

from conftest import make_dataset


def constant_propensity(value: float, clip: float = 0.01) -> PropensityModel:
    return PropensityModel(
        FunctionPredictor(lambda x: np.full(x.shape[0], value)), clip
    )


def linear_outcome(base: float, lift: float) -> OutcomeModel:
    return OutcomeModel(
        FunctionPredictor(lambda f: base + lift * f[:, 0]), clip=0.001
    )


class TestConfidenceInterval:
    def test_contains_is_closed(self):
        ci = ConfidenceInterval(-0.2, 0.3, 0.95, "asymptotic")
        assert ci.contains(-0.2) and ci.contains(0.3) and ci.contains(0.0)
        assert not ci.contains(0.31)

    def test_validation(self):
        with pytest.raises(ValueError, match="level"):
            ConfidenceInterval(0.0, 1.0, 1.0, "asymptotic")
        with pytest.raises(ValueError, match="out of order"):
            ConfidenceInterval(1.0, 0.0, 0.95, "asymptotic")
        with pytest.raises(ValueError, match="method"):
            ConfidenceInterval(0.0, 1.0, 0.95, "jackknife")


class TestUnmatched:
    def test_hand_value(self):
        schema = CovariateSchema.of(("a", "continuous"))
        y = np.array([0.0, 1.0, 1.0, 1.0, 0.0, 1.0])
        z = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        ds = ObservationalDataset(schema, y, z, np.arange(6, dtype=float)[:, None])
        est = ate_unmatched(ds)
        p0, p1 = 2.0 / 3.0, 2.0 / 3.0
        assert est.value == pytest.approx(p1 - p0, abs=1e-15)
        se = np.sqrt(p1 * (1 - p1) / 3 + p0 * (1 - p0) / 3)
        assert est.ci.hi - est.ci.lo == pytest.approx(2 * 1.959963984540054 * se, rel=1e-9)
        assert (est.n0, est.n1) == (3, 3)

    def test_degenerate_groups_flagged(self):
        schema = CovariateSchema.of(("a", "continuous"))
        ds = ObservationalDataset(
            schema,
            np.array([0.0, 0.0, 1.0, 1.0]),
            np.array([0.0, 0.0, 1.0, 1.0]),
            np.arange(4, dtype=float)[:, None],
        )
        est = ate_unmatched(ds)
        assert est.value == 1.0
        assert "degenerate-ci" in est.flags
        assert est.ci.lo == est.ci.hi == 1.0

    def test_single_class_rejected(self, small_dataset):
        all_treated = small_dataset.subset(np.flatnonzero(small_dataset.z == 1))
        with pytest.raises(ValueError, match="treatment classes"):
            ate_unmatched(all_treated)


class TestAdjusted:
    def test_constant_effect_model(self, small_dataset):
        outcome = linear_outcome(0.3, 0.25)
        est = ate_adjusted(small_dataset, outcome, seed=1)
        assert est.estimator == "Unmatched2"
        assert est.value == pytest.approx(0.25, abs=1e-12)
        # the model ignores covariates, so every bootstrap replicate
        # reproduces the same constant difference
        assert est.ci.hi - est.ci.lo < 1e-9
        assert est.ci.method == "bootstrap"

    def test_asymptotic_interval(self, small_dataset):
        outcome = OutcomeModel(
            FunctionPredictor(lambda f: 0.3 + 0.2 * f[:, 0] + 0.1 * (f[:, 1] > 0)),
            clip=0.001,
        )
        est = ate_adjusted(small_dataset, outcome, ci_method="asymptotic")
        assert est.ci.method == "asymptotic"
        m0, m1 = outcome.counterfactuals(small_dataset.x)
        se = (m1 - m0).std(ddof=1) / np.sqrt(small_dataset.n)
        assert est.ci.hi - est.value == pytest.approx(1.959963984540054 * se, rel=1e-9)

    def test_unknown_ci_method(self, small_dataset):
        with pytest.raises(ValueError, match="ci method"):
            ate_adjusted(small_dataset, linear_outcome(0.3, 0.2), ci_method="exact")


class TestInverseWeighting:
    def test_ht_equals_unmatched_under_flat_propensity(self, confounded_dataset):
        share = confounded_dataset.n_treated / confounded_dataset.n
        est = ate_ipw_ht(confounded_dataset, constant_propensity(share))
        plain = ate_unmatched(confounded_dataset)
        assert est.value == pytest.approx(plain.value, abs=1e-12)
        assert est.estimator == "InverseWeighting2"

    def test_dr_reduces_to_ht_with_zero_outcome_model(self, confounded_dataset):
        e = np.full(confounded_dataset.n, 0.4)
        zeros = np.zeros(confounded_dataset.n)
        np.testing.assert_array_equal(
            dr_value(confounded_dataset, e, zeros, zeros),
            ht_value(confounded_dataset, e),
        )

    def test_dr_is_adjusted_plus_weighted_residuals(self, confounded_dataset):
        rng = np.random.default_rng(0)
        e = rng.uniform(0.2, 0.8, size=confounded_dataset.n)
        m0 = rng.uniform(0.1, 0.9, size=confounded_dataset.n)
        m1 = rng.uniform(0.1, 0.9, size=confounded_dataset.n)
        scores = dr_value(confounded_dataset, e, m0, m1)
        y, z = confounded_dataset.y, confounded_dataset.z
        manual = m1 - m0 + z * (y - m1) / e - (1 - z) * (y - m0) / (1 - e)
        np.testing.assert_allclose(scores, manual, atol=1e-15)

    def test_unclipped_propensity_rejected(self, confounded_dataset):
        bad = PropensityModel.__new__(PropensityModel)
        object.__setattr__(bad, "predictor",
                           FunctionPredictor(lambda x: np.zeros(x.shape[0])))
        object.__setattr__(bad, "clip", 0.01)
        object.__setattr__(bad, "predict",
                           lambda x: np.zeros(x.shape[0]))
        with pytest.raises(ValueError, match="clipped"):
            ate_ipw_ht(confounded_dataset, bad)


class TestMatched:
    def test_uniform_weights_reduce_to_unmatched(self, small_dataset):
        control, treated = small_dataset.split_groups()
        w0 = WeightedSample(
            control.y, np.zeros(control.n), control.x,
            np.full(control.n, 1.0 / control.n),
        )
        w1 = WeightedSample(
            treated.y, np.ones(treated.n), treated.x,
            np.full(treated.n, 1.0 / treated.n),
        )
        est = ate_matched(w0, w1, tag="MatchedEuc")
        plain = ate_unmatched(small_dataset)
        assert est.value == pytest.approx(plain.value, abs=1e-12)
        assert est.ci.lo == pytest.approx(plain.ci.lo, abs=1e-9)
        assert est.ci.hi == pytest.approx(plain.ci.hi, abs=1e-9)

    def test_effective_sample_size(self):
        assert effective_sample_size(np.full(8, 1.0 / 8)) == pytest.approx(8.0)
        point = np.zeros(5)
        point[2] = 1.0
        assert effective_sample_size(point) == 1.0
        assert effective_sample_size(np.zeros(3)) == 0.0


class TestBootstrap:
    @staticmethod
    def _diff(ds):
        return float(ds.y[ds.z == 1].mean() - ds.y[ds.z == 0].mean())

    def test_row_order_invariance(self, confounded_dataset):
        rng = np.random.default_rng(5)
        shuffled = confounded_dataset.subset(rng.permutation(confounded_dataset.n))
        assert bootstrap_ci(self._diff, confounded_dataset, seed=9) == bootstrap_ci(
            self._diff, shuffled, seed=9
        )

    def test_interval_brackets_estimate(self, confounded_dataset):
        lo, hi = bootstrap_ci(self._diff, confounded_dataset, seed=0)
        assert lo < self._diff(confounded_dataset) < hi

    def test_minimum_replicates(self, small_dataset):
        with pytest.raises(ValueError, match="at least 50"):
            bootstrap_ci(self._diff, small_dataset, replicates=10)

    def test_rare_failures_warn(self, small_dataset):
        calls = {"n": 0}

        def flaky(ds):
            calls["n"] += 1
            if calls["n"] <= 5:
                raise RuntimeError("synthetic failure")
            return self._diff(ds)

        with pytest.warns(UserWarning, match="dropped 5"):
            lo, hi = bootstrap_ci(flaky, small_dataset, seed=0)
        assert lo < hi

    def test_pervasive_failures_raise(self, small_dataset):
        def broken(ds):
            raise RuntimeError("synthetic failure")

        with pytest.raises(RuntimeError, match="bootstrap replicates failed"):
            bootstrap_ci(broken, small_dataset, seed=0)


class TestVerdict:
    def test_interval_fully_negative_is_evidence(self):
        ci = ConfidenceInterval(-0.39, -0.35, 0.95, "asymptotic")
        est = AteEstimate("Unmatched", -0.37, ci, 50, 50)
        assert fairness_verdict(est) == EVIDENCE

    def test_interval_straddling_zero_is_no_evidence(self):
        ci = ConfidenceInterval(-0.03, 0.01, 0.95, "asymptotic")
        est = AteEstimate("Unmatched", -0.01, ci, 50, 50)
        assert fairness_verdict(est) == NO_EVIDENCE

    def test_zero_endpoint_counts_as_contained(self):
        ci = ConfidenceInterval(0.0, 0.2, 0.95, "asymptotic")
        assert fairness_verdict(AteEstimate("Unmatched", 0.1, ci, 5, 5)) == NO_EVIDENCE


class TestRunBattery:
    def _quick_config(self, **kwargs):
        defaults = dict(bootstrap_replicates=50, refit_in_bootstrap=False)
        defaults.update(kwargs)
        return BatteryConfig(**defaults)

    def test_tag_order(self, confounded_dataset):
        report = run_battery(confounded_dataset, self._quick_config())
        assert tuple(e.estimator for e in report.estimates) == ESTIMATOR_TAGS

    def test_deterministic_reruns(self, confounded_dataset):
        config = self._quick_config(seed=3)
        a = run_battery(confounded_dataset, config)
        b = run_battery(confounded_dataset, config)
        for ea, eb in zip(a.estimates, b.estimates):
            assert ea == eb
        assert a.verdicts == b.verdicts
        assert a.evidence_fraction == b.evidence_fraction

    def test_subsample_cap_is_deterministic(self, confounded_dataset):
        config = self._quick_config(seed=11, subsample_cap=80)
        a = run_battery(confounded_dataset, config)
        b = run_battery(confounded_dataset, config)
        for ea, eb in zip(a.estimates, b.estimates):
            assert ea == eb
        matched = {e.estimator: e for e in a.estimates}["MatchedEuc"]
        assert matched.n0 <= 80 and matched.n1 <= 80

    def test_failure_names_the_estimator(self, confounded_dataset):
        def boom(f):
            raise ArithmeticError("synthetic model failure")

        config = self._quick_config(
            outcome_model=OutcomeModel(FunctionPredictor(boom))
        )
        with pytest.raises(RuntimeError, match="estimator Unmatched2 failed"):
            run_battery(confounded_dataset, config)

    def test_covariate_selection(self, confounded_dataset):
        report = run_battery(
            confounded_dataset, self._quick_config(covariates=("a",))
        )
        assert len(report.estimates) == 8

    def test_majority_rule_matches_fraction(self, confounded_dataset):
        config = self._quick_config(majority_threshold=0.6)
        report = run_battery(confounded_dataset, config)
        fraction = np.mean([v == EVIDENCE for v in report.verdicts.values()])
        assert report.evidence_fraction == pytest.approx(fraction)
        expected = EVIDENCE if fraction > 0.6 else NO_EVIDENCE
        assert report.majority_verdict == expected

    def test_ci_method_override(self, confounded_dataset):
        config = self._quick_config(ci_method={"Unmatched2": "asymptotic"})
        report = run_battery(confounded_dataset, config)
        adjusted = {e.estimator: e for e in report.estimates}["Unmatched2"]
        assert adjusted.ci.method == "asymptotic"

    def test_cross_fitting_flags(self, confounded_dataset):
        config = self._quick_config(cross_fit_folds=3)
        report = run_battery(confounded_dataset, config)
        by_tag = {e.estimator: e for e in report.estimates}
        for tag in ("Unmatched2", "InverseWeighting", "InverseWeighting2"):
            assert "cross-fitted" in by_tag[tag].flags
        assert "cross-fitted" not in by_tag["Unmatched"].flags

    def test_meta_propagates(self, small_dataset):
        tagged = small_dataset.subset(np.arange(small_dataset.n), meta="cell-a")
        report = run_battery(tagged, self._quick_config())
        assert report.meta == "cell-a"

    def test_empty_group_rejected(self, small_dataset):
        control_only = small_dataset.subset(np.flatnonzero(small_dataset.z == 0))
        with pytest.raises(ValueError, match="treatment classes"):
            run_battery(control_only, self._quick_config())
