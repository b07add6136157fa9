"""Per-day class probability vectors over {BULL, NEUTRAL, BEAR}.

Two predictor families fill the forecaster role: a trainable softmax
classifier over numeric chart features, and a synthetic predictor whose
argmax accuracy is calibrated to a target so experiments can pin the
forecast quality (the comparative runs use 0.6).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .constants import CLASSES
from .errors import OutOfRangeError, ParameterError, ValidationError
from .market import PriceSeries, true_class
from .seeding import rng_for

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ClassProbabilities:
    """A point on the 3-simplex: P(BULL), P(NEUTRAL), P(BEAR)."""

    p_bull: float
    p_neutral: float
    p_bear: float

    def __post_init__(self):
        vals = (self.p_bull, self.p_neutral, self.p_bear)
        for v in vals:
            if not (math.isfinite(v) and -SIMPLEX_TOL <= v <= 1.0 + SIMPLEX_TOL):
                raise ValidationError(f"probability {v!r} outside [0, 1]")
        if abs(sum(vals) - 1.0) > SIMPLEX_TOL:
            raise ValidationError(f"probabilities sum to {sum(vals)!r}, not 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_bull, self.p_neutral, self.p_bear], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ClassProbabilities":
        a = np.asarray(arr, dtype=float)
        if a.shape != (3,):
            raise ValidationError(f"expected 3 probabilities, got shape {a.shape}")
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def argmax_class(self) -> str:
        """Most probable class; exact ties resolve to the most conservative
        (BEAR over NEUTRAL over BULL), so tied forecasts never trigger a buy."""
        vals = (self.p_bull, self.p_neutral, self.p_bear)
        best = max(vals)
        for i in (2, 1, 0):
            if vals[i] == best:
                return CLASSES[i]
        raise AssertionError("unreachable")


@dataclass
class ChartFeatures:
    """Fixed-length numeric summary of recent price action."""

    values: np.ndarray
    lookback: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("chart features must be finite")


def feature_length(lookback: int) -> int:
    return lookback + 3


def extract_features(series: PriceSeries, t: int, lookback: int = 10) -> ChartFeatures:
    """Lagged returns over ``lookback`` days, their volatility, and two momentum terms.

    All entries are price ratios, so scaling every price by a common factor
    leaves the features unchanged.
    """
    if t < lookback:
        raise OutOfRangeError(f"day {t}: need {lookback} days of history")
    closes = series.closes[t - lookback : t + 1]
    returns = closes[1:] / closes[:-1] - 1.0
    vol = float(np.std(returns))
    short = min(5, lookback)
    mom_short = float(closes[-1] / closes[-1 - short] - 1.0)
    mom_long = float(closes[-1] / closes[0] - 1.0)
    return ChartFeatures(np.concatenate([returns, [vol, mom_short, mom_long]]), lookback)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_loss_and_grad(weights, bias, x, y_idx, l2=0.0):
    """Mean cross-entropy of a linear softmax classifier and its gradient.

    ``weights`` is (3, F), ``bias`` (3,), ``x`` (n, F), ``y_idx`` (n,) in {0,1,2}.
    """
    n = x.shape[0]
    logits = x @ weights.T + bias
    probs = softmax(logits)
    loss = -np.mean(np.log(probs[np.arange(n), y_idx] + 1e-300))
    loss += 0.5 * l2 * float(np.sum(weights * weights))
    delta = probs.copy()
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    grad_w = delta.T @ x + l2 * weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


class SoftmaxPredictor(BaseEstimator):
    """Multinomial logistic classifier trained by mini-batch gradient descent.

    sklearn-compatible: ``fit(X, y)`` / ``predict_proba`` / ``predict`` with
    ``get_params``/``set_params`` inherited. Weights start at zero, so an
    untrained model predicts the uniform distribution.
    """

    def __init__(self, lookback=10, learning_rate=0.5, epochs=200, batch_size=64,
                 l2=1e-4, seed=0, standardize=True):
        self.lookback = lookback
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.seed = seed
        self.standardize = standardize

    def _as_matrix(self, X) -> np.ndarray:
        if isinstance(X, ChartFeatures):
            X = [X]
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], ChartFeatures):
            lengths = {f.values.shape[0] for f in X}
            if len(lengths) != 1:
                raise ValidationError(f"inconsistent feature lengths: {sorted(lengths)}")
            X = np.stack([f.values for f in X])
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if not np.all(np.isfinite(X)):
            raise ValidationError("features must be finite")
        return X

    @staticmethod
    def _as_labels(y) -> np.ndarray:
        idx = []
        for label in y:
            if isinstance(label, str):
                if label not in CLASSES:
                    raise ValidationError(f"unknown class label {label!r}")
                idx.append(CLASSES.index(label))
            else:
                if int(label) not in (0, 1, 2):
                    raise ValidationError(f"class index {label!r} outside 0..2")
                idx.append(int(label))
        return np.array(idx, dtype=int)

    def fit(self, X, y):
        X = self._as_matrix(X)
        y_idx = self._as_labels(y)
        if X.shape[0] == 0:
            raise ValidationError("empty training set")
        if X.shape[0] != y_idx.shape[0]:
            raise ValidationError(f"{X.shape[0]} feature rows vs {y_idx.shape[0]} labels")

        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0] = 1.0
            self.scale_ = scale
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        Xs = (X - self.mean_) / self.scale_

        n, n_features = Xs.shape
        rng = rng_for(self.seed, "softmax-train")
        w = np.zeros((3, n_features))
        b = np.zeros(3)
        losses = [softmax_loss_and_grad(w, b, Xs, y_idx, self.l2)[0]]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start : start + self.batch_size]
                _, gw, gb = softmax_loss_and_grad(w, b, Xs[batch], y_idx[batch], self.l2)
                w -= self.learning_rate * gw
                b -= self.learning_rate * gb
            losses.append(softmax_loss_and_grad(w, b, Xs, y_idx, self.l2)[0])
        self.coef_ = w
        self.intercept_ = b
        self.n_features_in_ = n_features
        self.loss_curve_ = losses
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise ValidationError("predictor is not fitted")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        X = self._as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"feature dimension {X.shape[1]} != trained {self.n_features_in_}")
        Xs = (X - self.mean_) / self.scale_
        return softmax(Xs @ self.coef_.T + self.intercept_)

    def predict(self, X):
        probs = self.predict_proba(X)
        return [ClassProbabilities.from_array(row).argmax_class() for row in probs]

    def probabilities(self, features: ChartFeatures) -> ClassProbabilities:
        return ClassProbabilities.from_array(self.predict_proba(features)[0])

    def to_json(self) -> dict:
        self._check_fitted()
        return {
            "kind": "softmax",
            "config": {
                "lookback": self.lookback, "learning_rate": self.learning_rate,
                "epochs": self.epochs, "batch_size": self.batch_size,
                "l2": self.l2, "seed": self.seed, "standardize": self.standardize,
            },
            "classes": list(CLASSES),
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_.tolist(),
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SoftmaxPredictor":
        model = cls(**doc["config"])
        model.coef_ = np.array(doc["coef"], dtype=float)
        model.intercept_ = np.array(doc["intercept"], dtype=float)
        model.mean_ = np.array(doc["mean"], dtype=float)
        model.scale_ = np.array(doc["scale"], dtype=float)
        model.n_features_in_ = model.coef_.shape[1]
        return model


class BoundSoftmaxPredictor:
    """A trained softmax classifier bound to a series: exposes ``p_for_day``.

    Days before ``min_day`` lack the feature lookback and cannot be scored.
    """

    def __init__(self, predictor: SoftmaxPredictor, series: PriceSeries):
        self.predictor = predictor
        self.series = series

    @property
    def min_day(self) -> int:
        return self.predictor.lookback

    def p_for_day(self, t: int) -> ClassProbabilities:
        return self.predictor.probabilities(extract_features(self.series, t, self.predictor.lookback))


class CalibratedPredictor:
    """Synthetic forecaster whose argmax hits the true class at a target rate.

    Per day an independent seeded coin decides whether the emitted argmax
    equals the ground truth; on failure one of the two wrong classes is
    picked uniformly. ``confidence`` mass goes to the chosen class and the
    remainder is split between the other two by a seeded draw bounded away
    from the edges, so the chosen class is always the strict argmax (this
    needs confidence >= 0.5).
    """

    def __init__(self, series: PriceSeries, seed: int, target_accuracy: float = 0.6,
                 confidence: float = 0.6):
        if not (1.0 / 3.0 <= target_accuracy <= 1.0):
            raise ParameterError(f"target_accuracy {target_accuracy} below chance (1/3) or above 1")
        if not (0.5 <= confidence <= 1.0):
            raise ParameterError(f"confidence {confidence} must be in [0.5, 1.0]")
        self.series = series
        self.seed = seed
        self.target_accuracy = target_accuracy
        self.confidence = confidence
        self._table = self._build(series, seed, target_accuracy, confidence)

    @staticmethod
    def _build(series, seed, target, confidence):
        rng = rng_for(seed, "calibrated")
        n = len(series) - 1
        table = np.empty((n, 3))
        for t in range(n):
            truth = CLASSES.index(true_class(series, t))
            correct = rng.random() < target
            if correct:
                chosen = truth
            else:
                others = [i for i in range(3) if i != truth]
                chosen = others[int(rng.integers(2))]
            rest = 1.0 - confidence
            split = rng.uniform(0.05, 0.95)
            others = [i for i in range(3) if i != chosen]
            p = np.empty(3)
            p[chosen] = confidence
            p[others[0]] = rest * split
            p[others[1]] = rest * (1.0 - split)
            table[t] = p
        return table

    def p_for_day(self, t: int) -> ClassProbabilities:
        if t < 0 or t >= self._table.shape[0]:
            raise OutOfRangeError(f"day {t}: predictions exist for days 0..{self._table.shape[0] - 1}")
        return ClassProbabilities.from_array(self._table[t])

    def to_json(self) -> dict:
        return {
            "kind": "calibrated",
            "seed": self.seed,
            "target_accuracy": self.target_accuracy,
            "confidence": self.confidence,
            "source_id": self.series.source_id,
            "p_by_day": self._table.tolist(),
        }


def make_calibrated_predictor(series: PriceSeries, seed: int, target_accuracy: float = 0.6,
                              confidence_profile: float = 0.6) -> CalibratedPredictor:
    return CalibratedPredictor(series, seed, target_accuracy, confidence_profile)


def save_predictor(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj.to_json(), fh)
        fh.write("\n")


def load_softmax_predictor(path) -> SoftmaxPredictor:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") != "softmax":
        raise ValidationError(f"{path}: not a softmax predictor document")
    return SoftmaxPredictor.from_json(doc)
