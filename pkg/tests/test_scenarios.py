"""Synthetic scenario generator and its ground-truth effect values."""

from __future__ import annotations

import numpy as np
import pytest

from fairaudit.scenarios import (
    PRESET_NAMES,
    AffineLogisticForm,
    ConfounderSpec,
    CovariateGen,
    LinearLogit,
    LogisticForm,
    ScenarioSpec,
    ShiftedForm,
    generate,
    preset,
    true_ate,
)


def sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


class TestGenerate:
    def test_deterministic_per_seed(self):
        spec = preset("confounded-shift", 500, seed=4)
        a = generate(spec)
        b = generate(spec)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.z, b.z)
        np.testing.assert_array_equal(a.x, b.x)

    def test_zero_strength_confounder_keeps_the_stream(self):
        # U is always drawn, so adding a strength-0 confounder must not
        # perturb any generated value
        plain = preset("null-randomized", 400, seed=2)
        with_u = ScenarioSpec(
            n=plain.n,
            covariates=plain.covariates,
            propensity=plain.propensity,
            outcome1=plain.outcome1,
            outcome0=plain.outcome0,
            confounder=ConfounderSpec(strength_z=0.0, strength_y=0.0),
            seed=plain.seed,
        )
        a = generate(plain)
        b = generate(with_u)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.z, b.z)
        np.testing.assert_array_equal(a.x, b.x)

    def test_exported_confounder_column(self):
        spec = preset("hidden-confounder", 300, seed=1, export_confounder=True)
        ds = generate(spec)
        assert ds.schema.names == ("x1", "u")
        hidden = generate(preset("hidden-confounder", 300, seed=1))
        assert hidden.schema.names == ("x1",)
        np.testing.assert_array_equal(hidden.y, ds.y)
        np.testing.assert_array_equal(hidden.z, ds.z)
        np.testing.assert_array_equal(hidden.x[:, 0], ds.x[:, 0])

    def test_covariate_distributions(self):
        spec = preset("confounded-shift", 20000, seed=7)
        ds = generate(spec)
        x1 = ds.covariate("x1")
        x2 = ds.covariate("x2")
        assert abs(x1.mean()) < 0.03 and abs(x1.std() - 1.0) < 0.03
        assert set(np.unique(x2)) <= {0.0, 1.0}
        assert abs(x2.mean() - 0.4) < 0.02

    def test_unknown_distribution_rejected(self):
        gen = CovariateGen("bad", "continuous", ("poisson", 2.0))
        with pytest.raises(ValueError, match="unknown distribution"):
            gen.sample(np.random.default_rng(0), 5)


class TestPropensityClipping:
    def test_extreme_logits_stay_inside_bounds(self):
        spec = ScenarioSpec(
            n=5000,
            covariates=(CovariateGen("x1", "continuous", ("normal", 0.0, 1.0)),),
            propensity=LinearLogit(0.0, {"x1": 10.0}),
            outcome1=LogisticForm(LinearLogit(0.0, {})),
            outcome0=LogisticForm(LinearLogit(0.0, {})),
            seed=0,
        )
        rng = np.random.default_rng(0)
        columns = {"x1": rng.normal(size=5000)}
        e = spec.propensity_values(columns, np.zeros(5000))
        assert e.min() == pytest.approx(0.02)
        assert e.max() == pytest.approx(0.98)


class TestTrueAte:
    def test_identical_forms_are_exactly_null(self):
        truth = true_ate(preset("null-randomized", 100))
        assert truth.value == 0.0 and truth.se == 0.0
        assert truth.method == "analytic"

    def test_constant_shift_is_analytic(self):
        truth = true_ate(preset("confounded-shift", 100))
        assert truth.value == 0.2 and truth.se == 0.0
        assert truth.method == "analytic"

    def test_monte_carlo_agrees_with_direct_integration(self):
        spec = preset("hidden-confounder", 100)
        truth = true_ate(spec, mc_draws=400_000, mc_seed=11)
        assert truth.method == "monte-carlo"
        # independent check with a fresh stream and explicit forms
        rng = np.random.default_rng(2024)
        x1 = rng.normal(size=400_000)
        u = rng.normal(size=400_000)
        p1 = sigmoid(-0.4 + 0.7 * x1 + 1.0 * u)
        p0 = sigmoid(-1.1 + 0.7 * x1 + 1.0 * u)
        direct = (p1 - p0).mean()
        assert truth.value == pytest.approx(direct, abs=4 * truth.se + 4 * 1e-3)
        assert truth.se < 1e-3

    def test_negated_shift(self):
        base = LogisticForm(LinearLogit(-0.5, {"x1": 0.3}))
        spec = ScenarioSpec(
            n=10,
            covariates=(CovariateGen("x1", "continuous", ("normal", 0.0, 1.0)),),
            propensity=LinearLogit(0.0, {}),
            outcome1=base,
            outcome0=ShiftedForm(base, 0.1),
            seed=0,
        )
        truth = true_ate(spec)
        assert truth.value == pytest.approx(-0.1)
        assert truth.method == "analytic"


class TestTrueModels:
    def test_propensity_model_reproduces_generating_probabilities(self):
        spec = preset("confounded-shift", 1000, seed=3)
        ds = generate(spec)
        model = spec.propensity_model(clip=0.01)
        e = model.predict(ds.x)
        x1, x2 = ds.covariate("x1"), ds.covariate("x2")
        expected = np.clip(sigmoid(-0.4 + 1.3 * x1 + 0.7 * x2), 0.02, 0.98)
        np.testing.assert_allclose(e, expected, atol=1e-12)

    def test_outcome_model_reproduces_both_arms(self):
        spec = preset("confounded-shift", 1000, seed=3)
        ds = generate(spec)
        model = spec.outcome_model(clip=0.001)
        m0, m1 = model.counterfactuals(ds.x)
        x1, x2 = ds.covariate("x1"), ds.covariate("x2")
        base = 0.05 + 0.6 * sigmoid(-1.2 + 0.9 * x1 + 0.5 * x2)
        np.testing.assert_allclose(m0, base, atol=1e-12)
        np.testing.assert_allclose(m1, base + 0.2, atol=1e-12)

    def test_exported_confounder_feeds_the_true_models(self):
        spec = preset("hidden-confounder", 500, seed=9, export_confounder=True)
        ds = generate(spec)
        e = spec.propensity_model().predict(ds.x)
        x1 = ds.covariate("x1")
        u = ds.covariate("u")
        expected = np.clip(sigmoid(-0.4 + 0.6 * x1 + 1.0 * u), 0.02, 0.98)
        np.testing.assert_allclose(e, expected, atol=1e-12)


class TestPresets:
    def test_names(self):
        assert set(PRESET_NAMES) == {
            "null-randomized",
            "confounded-shift",
            "confounded-null",
            "hidden-confounder",
        }
        with pytest.raises(KeyError, match="unknown preset"):
            preset("utopia", 100)

    def test_every_preset_generates(self):
        for name in PRESET_NAMES:
            ds = generate(preset(name, 200, seed=1))
            assert ds.n == 200
            assert 0 < ds.n_treated < 200

    def test_confounded_null_has_zero_effect_but_confounding(self):
        spec = preset("confounded-null", 20000, seed=5)
        assert true_ate(spec).value == 0.0
        ds = generate(spec)
        # naive comparison is visibly biased away from the true zero
        naive = ds.y[ds.z == 1].mean() - ds.y[ds.z == 0].mean()
        assert naive > 0.1

    def test_invalid_probability_form_rejected(self):
        bad = ScenarioSpec(
            n=100,
            covariates=(CovariateGen("x1", "continuous", ("normal", 0.0, 1.0)),),
            propensity=LinearLogit(0.0, {}),
            outcome1=ShiftedForm(AffineLogisticForm(0.5, 0.6, LinearLogit(0.0, {"x1": 1.0})), 0.0),
            outcome0=AffineLogisticForm(0.5, 0.6, LinearLogit(0.0, {"x1": 1.0})),
            seed=0,
        )
        with pytest.raises(ValueError, match="invalid probability form"):
            generate(bad)
