import numpy as np
import pytest

from nudgelab.errors import OutOfRangeError, ParameterError, ValidationError
from nudgelab.market import synthesize_series, true_class
from nudgelab.predictor import (
    ClassProbabilities, SoftmaxPredictor,
    extract_features, make_calibrated_predictor, softmax_loss_and_grad,
)

from conftest import make_series


class TestClassProbabilities:
    def test_sum_enforced(self):
        with pytest.raises(ValidationError):
            ClassProbabilities(0.5, 0.5, 0.5)

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            ClassProbabilities(-0.1, 0.6, 0.5)

    def test_argmax_plain(self):
        assert ClassProbabilities(0.6, 0.3, 0.1).argmax_class() == "BULL"

    def test_argmax_tie_is_conservative(self):
        third = 1.0 / 3.0
        assert ClassProbabilities(third, third, third).argmax_class() == "BEAR"
        assert ClassProbabilities(0.4, 0.4, 0.2).argmax_class() == "NEUTRAL"


class TestExtractFeatures:
    def test_constant_series_all_zero(self):
        series = make_series([2000] * 15)
        feats = extract_features(series, 12, lookback=10)
        assert np.all(feats.values == 0.0)

    def test_scale_invariance(self):
        closes = [2000, 2030, 1990, 2010, 2050, 2040, 2060, 2080, 2020, 2000, 2010, 2030]
        a = extract_features(make_series(closes), 11, lookback=10)
        b = extract_features(make_series([2 * c for c in closes]), 11, lookback=10)
        assert np.allclose(a.values, b.values, atol=1e-15)

    def test_hand_computed_five_day(self):
        closes = [100.0, 110.0, 99.0, 105.0, 126.0]
        feats = extract_features(make_series(closes), 4, lookback=4)
        returns = [0.10, 99 / 110 - 1, 105 / 99 - 1, 0.2]
        expected = returns + [float(np.std(returns)), 126 / 100 - 1, 126 / 100 - 1]
        assert np.allclose(feats.values, expected, atol=1e-12)

    def test_insufficient_history(self):
        series = make_series([2000] * 8)
        with pytest.raises(OutOfRangeError):
            extract_features(series, 5, lookback=10)


class TestSoftmaxGradient:
    def test_matches_central_differences(self, rng):
        for point in range(10):
            x = rng.standard_normal((12, 6))
            y = rng.integers(0, 3, 12)
            w = rng.standard_normal((3, 6)) * 0.5
            b = rng.standard_normal(3) * 0.2
            _, gw, gb = softmax_loss_and_grad(w, b, x, y, l2=1e-3)
            eps = 1e-6
            direction = rng.standard_normal(w.shape)
            direction /= np.linalg.norm(direction)
            analytic = float(np.sum(gw * direction))
            lp = softmax_loss_and_grad(w + eps * direction, b, x, y, 1e-3)[0]
            lm = softmax_loss_and_grad(w - eps * direction, b, x, y, 1e-3)[0]
            numeric = (lp - lm) / (2 * eps)
            assert abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-12) < 1e-4


class TestSoftmaxPredictor:
    def test_separable_clusters(self, rng):
        n = 150
        x0 = rng.normal((-3, -3), 0.3, size=(n, 2))
        x1 = rng.normal((3, 3), 0.3, size=(n, 2))
        x = np.vstack([x0, x1])
        y = ["BULL"] * n + ["BEAR"] * n
        model = SoftmaxPredictor(epochs=100, learning_rate=0.5, seed=1)
        model.fit(x, y)
        accuracy = np.mean([pred == label for pred, label in zip(model.predict(x), y)])
        assert accuracy >= 0.95

    def test_zero_epochs_uniform_and_loss_unchanged(self, rng):
        x = rng.standard_normal((20, 4))
        y = rng.integers(0, 3, 20)
        model = SoftmaxPredictor(epochs=0)
        model.fit(x, y)
        assert len(model.loss_curve_) == 1
        probs = model.predict_proba(x)
        assert np.allclose(probs, 1.0 / 3.0, atol=1e-12)

    def test_single_class_converges(self, rng):
        x = rng.standard_normal((30, 3))
        y = ["NEUTRAL"] * 30
        model = SoftmaxPredictor(epochs=100, learning_rate=0.5)
        model.fit(x, y)
        assert all(pred == "NEUTRAL" for pred in model.predict(x))

    def test_loss_never_worse_at_end(self, rng):
        x = rng.standard_normal((60, 5))
        y = rng.integers(0, 3, 60)
        model = SoftmaxPredictor(epochs=50, learning_rate=0.2)
        model.fit(x, y)
        assert model.loss_curve_[-1] <= model.loss_curve_[0]

    def test_inconsistent_feature_lengths(self):
        from nudgelab.predictor import ChartFeatures

        feats = [ChartFeatures(np.zeros(5), 2), ChartFeatures(np.zeros(6), 3)]
        with pytest.raises(ValidationError):
            SoftmaxPredictor().fit(feats, ["BULL", "BEAR"])

    def test_dimension_mismatch_on_predict(self, rng):
        model = SoftmaxPredictor(epochs=1)
        model.fit(rng.standard_normal((10, 4)), rng.integers(0, 3, 10))
        with pytest.raises(ValidationError):
            model.predict_proba(rng.standard_normal((2, 5)))

    def test_constructed_bull_weights_dominate(self, rng):
        model = SoftmaxPredictor(epochs=0, standardize=False)
        model.fit(rng.standard_normal((5, 3)), [0] * 5)
        model.coef_ = np.array([[8.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        model.intercept_ = np.zeros(3)
        probs = model.predict_proba(np.array([[1.0, 0.0, 0.0]]))
        assert probs[0][0] > 0.99

    def test_probabilities_on_simplex(self, rng):
        model = SoftmaxPredictor(epochs=5)
        model.fit(rng.standard_normal((30, 4)), rng.integers(0, 3, 30))
        probs = model.predict_proba(rng.standard_normal((50, 4)))
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_json_roundtrip(self, rng):
        model = SoftmaxPredictor(epochs=20, seed=3)
        x = rng.standard_normal((40, 4))
        model.fit(x, rng.integers(0, 3, 40))
        clone = SoftmaxPredictor.from_json(model.to_json())
        assert np.allclose(model.predict_proba(x), clone.predict_proba(x), atol=0)

    def test_sklearn_get_params(self):
        params = SoftmaxPredictor(lookback=7).get_params()
        assert params["lookback"] == 7 and "learning_rate" in params


class TestCalibratedPredictor:
    def test_perfect_calibration(self):
        series = synthesize_series(21, 300, volatility=0.02)
        predictor = make_calibrated_predictor(series, seed=1, target_accuracy=1.0)
        for t in range(len(series) - 1):
            assert predictor.p_for_day(t).argmax_class() == true_class(series, t)

    def test_accuracy_converges_to_target(self):
        series = synthesize_series(11, 10001, volatility=0.015)
        predictor = make_calibrated_predictor(series, seed=5, target_accuracy=0.6)
        hits = sum(predictor.p_for_day(t).argmax_class() == true_class(series, t)
                   for t in range(10000))
        assert 0.57 <= hits / 10000 <= 0.63   # 3 sigma of Bernoulli(0.6) over 10k

    def test_confidence_is_argmax_mass(self):
        series = synthesize_series(3, 200, volatility=0.02)
        predictor = make_calibrated_predictor(series, seed=2, target_accuracy=0.8,
                                              confidence_profile=0.5)
        for t in range(100):
            p = predictor.p_for_day(t)
            assert max(p.p_bull, p.p_neutral, p.p_bear) == pytest.approx(0.5, abs=1e-12)

    def test_below_chance_rejected(self):
        series = synthesize_series(3, 50)
        with pytest.raises(ParameterError):
            make_calibrated_predictor(series, seed=1, target_accuracy=0.2)

    def test_low_confidence_rejected(self):
        series = synthesize_series(3, 50)
        with pytest.raises(ParameterError):
            make_calibrated_predictor(series, seed=1, target_accuracy=0.6, confidence_profile=0.4)

    def test_deterministic_per_day(self):
        series = synthesize_series(3, 100, volatility=0.02)
        predictor = make_calibrated_predictor(series, seed=9)
        assert predictor.p_for_day(7) == predictor.p_for_day(7)

    def test_out_of_range_day(self):
        series = synthesize_series(3, 50)
        predictor = make_calibrated_predictor(series, seed=9)
        with pytest.raises(OutOfRangeError):
            predictor.p_for_day(49)   # last day has no lookahead
