"""Logistic and boosted-stump fits, model selection, and the propensity
and outcome wrappers."""

from __future__ import annotations

import warnings

import numpy as np
import pytest

from fairaudit.data import CovariateSchema, ObservationalDataset
from fairaudit.models import (
    BoostedStumpsConfig,
    BoostedStumpsModel,
    FunctionPredictor,
    LogisticConfig,
    LogisticModel,
    OutcomeModel,
    PropensityModel,
    fit_boosted_stumps,
    fit_logistic,
    fit_outcome,
    fit_propensity,
    load_model,
    log_loss,
    save_model,
    select_model,
)

from conftest import make_dataset


class TestLogLoss:
    def test_hand_value(self):
        y = np.array([1.0, 0.0])
        p = np.array([0.8, 0.4])
        expected = -(np.log(0.8) + np.log(0.6)) / 2
        assert log_loss(y, p) == pytest.approx(expected, abs=1e-15)

    def test_weights_reweight_rows(self):
        y = np.array([1.0, 0.0])
        p = np.array([0.8, 0.4])
        w = np.array([3.0, 1.0])
        expected = -(3 * np.log(0.8) + np.log(0.6)) / 4
        assert log_loss(y, p, w) == pytest.approx(expected, abs=1e-15)

    def test_extreme_probabilities_stay_finite(self):
        assert np.isfinite(log_loss(np.array([1.0]), np.array([0.0])))


class TestFitLogistic:
    def test_recovers_generating_coefficients(self):
        rng = np.random.default_rng(0)
        n = 20000
        x = rng.normal(size=(n, 2))
        logit = -0.5 + 1.2 * x[:, 0] - 0.8 * x[:, 1]
        y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(float)
        model = fit_logistic(x, y)
        assert model.converged
        assert model.intercept == pytest.approx(-0.5, abs=0.08)
        np.testing.assert_allclose(model.coef, [1.2, -0.8], atol=0.08)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(300, 2))
        y = (rng.random(300) < 0.4).astype(float)
        if len(np.unique(y)) < 2:
            y[0] = 1.0 - y[0]
        model = fit_logistic(x, y, weights=rng.uniform(0.5, 2.0, size=300))
        beta = np.array([0.3, -0.4, 0.9])
        analytic = model.gradient(beta)
        numeric = np.empty_like(beta)
        h = 1e-6
        for i in range(beta.size):
            up, down = beta.copy(), beta.copy()
            up[i] += h
            down[i] -= h
            numeric[i] = (model.objective(up) - model.objective(down)) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-7)

    def test_separated_data_warns(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        with pytest.warns(UserWarning, match="separation"):
            model = fit_logistic(x, y, config=LogisticConfig(l2=1e-8, max_iter=2000))
        assert model.separation_warning

    def test_binary_columns_left_unstandardized(self):
        rng = np.random.default_rng(1)
        x = np.column_stack([rng.normal(size=100), rng.integers(0, 2, size=100)])
        y = (rng.random(100) < 0.5).astype(float)
        model = fit_logistic(x, y)
        assert model.mean[1] == 0.0
        assert model.scale[1] == 1.0
        assert model.mean[0] != 0.0

    def test_input_validation(self):
        x = np.ones((4, 1))
        with pytest.raises(ValueError, match="both label classes"):
            fit_logistic(x, np.zeros(4))
        with pytest.raises(ValueError, match="binary"):
            fit_logistic(x, np.array([0.0, 0.5, 1.0, 1.0]))
        with pytest.raises(ValueError, match="row count"):
            fit_logistic(x, np.array([0.0, 1.0]))
        with pytest.raises(ValueError, match="nonnegative"):
            fit_logistic(x, np.array([0.0, 1.0, 0.0, 1.0]), np.array([1.0, -1.0, 1.0, 1.0]))


class TestFitBoostedStumps:
    def _step_data(self, n=3000, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, size=(n, 1))
        p = np.where(np.abs(x[:, 0]) > 1.0, 0.85, 0.15)
        y = (rng.random(n) < p).astype(float)
        return x, y

    def test_identical_refits(self):
        x, y = self._step_data()
        a = fit_boosted_stumps(x, y)
        b = fit_boosted_stumps(x, y)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.thresholds, b.thresholds)
        np.testing.assert_array_equal(a.left, b.left)
        np.testing.assert_array_equal(a.right, b.right)

    def test_beats_prior_and_captures_step(self):
        x, y = self._step_data()
        model = fit_boosted_stumps(x, y)
        fitted = log_loss(y, model.predict_probability(x))
        prior = log_loss(y, np.full(y.shape, y.mean()))
        assert fitted < prior - 0.2
        inner = model.predict_probability(np.array([[0.0]]))[0]
        outer = model.predict_probability(np.array([[1.8]]))[0]
        assert inner < 0.3 and outer > 0.7

    def test_more_rounds_do_not_hurt_training_loss(self):
        x, y = self._step_data(n=800, seed=4)
        short = fit_boosted_stumps(x, y, config=BoostedStumpsConfig(rounds=20))
        long = fit_boosted_stumps(x, y, config=BoostedStumpsConfig(rounds=200))
        assert log_loss(y, long.predict_probability(x)) <= log_loss(
            y, short.predict_probability(x)
        ) + 1e-12

    def test_constant_features_fall_back_to_prior(self):
        x = np.ones((40, 1))
        y = np.array([1.0] * 10 + [0.0] * 30)
        model = fit_boosted_stumps(x, y, config=BoostedStumpsConfig(rounds=5))
        p = model.predict_probability(x)
        np.testing.assert_allclose(p, p[0])
        assert p[0] == pytest.approx(0.25, abs=0.02)


class TestSelectModel:
    def test_prefers_correct_family_on_linear_data(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(600, 2))
        p = 1 / (1 + np.exp(-(0.2 + 1.0 * x[:, 0])))
        y = (rng.random(600) < p).astype(float)
        best = select_model(
            [LogisticConfig(), BoostedStumpsConfig(rounds=60)], x, y, folds=4, seed=1
        )
        assert isinstance(best, LogisticModel)

    def test_single_class_folds_skipped_then_rejected(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(20, 1))
        y = np.zeros(20)
        y[3] = 1.0
        with pytest.warns(UserWarning, match="single-class fold"):
            with pytest.raises(ValueError, match="every fold is single-class"):
                select_model([LogisticConfig()], x, y, folds=2, seed=0)

    def test_argument_validation(self):
        x = np.random.default_rng(0).normal(size=(30, 1))
        y = np.tile([0.0, 1.0], 15)
        with pytest.raises(ValueError, match="no candidates"):
            select_model([], x, y)
        with pytest.raises(ValueError, match="at least 2 folds"):
            select_model([LogisticConfig()], x, y, folds=1)
        with pytest.raises(ValueError, match="2 rows per fold"):
            select_model([LogisticConfig()], x[:6], y[:6], folds=5)


class TestWrappers:
    def test_propensity_clips_predictions(self):
        model = PropensityModel(FunctionPredictor(lambda x: x[:, 0]), clip=0.05)
        p = model.predict(np.array([[0.001], [0.5], [0.999]]))
        np.testing.assert_allclose(p, [0.05, 0.5, 0.95])

    def test_clip_range_validated(self):
        stub = FunctionPredictor(lambda x: np.full(x.shape[0], 0.5))
        with pytest.raises(ValueError, match="clip"):
            PropensityModel(stub, clip=0.5)
        with pytest.raises(ValueError, match="clip"):
            OutcomeModel(stub, clip=0.0)

    def test_outcome_stacks_group_flag_first(self):
        model = OutcomeModel(FunctionPredictor(lambda f: 0.2 + 0.6 * f[:, 0]))
        x = np.zeros((3, 2))
        np.testing.assert_allclose(model.predict(0.0, x), 0.2)
        np.testing.assert_allclose(model.predict(1.0, x), 0.8)
        m0, m1 = model.counterfactuals(x)
        np.testing.assert_allclose(m0, 0.2)
        np.testing.assert_allclose(m1, 0.8)

    def test_fit_helpers_validate_dataset(self):
        schema = CovariateSchema.of(("a", "continuous"))
        all_treated = ObservationalDataset(
            schema, np.array([0.0, 1.0]), np.array([1.0, 1.0]), np.array([[1.0], [2.0]])
        )
        with pytest.raises(ValueError, match="both treatment classes"):
            fit_outcome(all_treated)

    def test_fit_helpers_on_real_dataset(self):
        ds = make_dataset(n=300, seed=8, confounded=True)
        prop = fit_propensity(ds, clip=0.02)
        e = prop.predict(ds.x)
        assert np.all(e >= 0.02) and np.all(e <= 0.98)
        out = fit_outcome(ds)
        m0, m1 = out.counterfactuals(ds.x)
        assert m0.shape == (ds.n,) and m1.shape == (ds.n,)
        assert np.all((m0 >= 0.01) & (m0 <= 0.99))

    def test_fit_with_candidate_list(self):
        ds = make_dataset(n=200, seed=9, confounded=True)
        prop = fit_propensity(ds, [LogisticConfig(), LogisticConfig(l2=1.0)], folds=3)
        assert isinstance(prop.predictor, LogisticModel)


class TestSaveLoad:
    def test_logistic_round_trip(self, tmp_path):
        ds = make_dataset(n=200, seed=4, confounded=True)
        prop = fit_propensity(ds, clip=0.03)
        path = tmp_path / "prop.json"
        save_model(prop, path)
        again = load_model(path)
        assert isinstance(again, PropensityModel)
        assert again.clip == 0.03
        np.testing.assert_array_equal(again.predict(ds.x), prop.predict(ds.x))

    def test_boosted_round_trip(self, tmp_path):
        ds = make_dataset(n=250, seed=5, confounded=True)
        out = fit_outcome(ds, BoostedStumpsConfig(rounds=40))
        path = tmp_path / "out.json"
        save_model(out, path)
        again = load_model(path)
        assert isinstance(again, OutcomeModel)
        assert isinstance(again.predictor, BoostedStumpsModel)
        np.testing.assert_array_equal(
            again.predict(1.0, ds.x), out.predict(1.0, ds.x)
        )

    def test_bare_model_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(100, 1))
        y = (rng.random(100) < 0.5).astype(float)
        model = fit_logistic(x, y)
        path = tmp_path / "bare.json"
        save_model(model, path)
        again = load_model(path)
        np.testing.assert_array_equal(
            again.predict_probability(x), model.predict_probability(x)
        )

    def test_function_predictor_not_serializable(self, tmp_path):
        wrapped = PropensityModel(FunctionPredictor(lambda x: np.full(x.shape[0], 0.5)))
        with pytest.raises(TypeError, match="cannot serialize"):
            save_model(wrapped, tmp_path / "nope.json")
