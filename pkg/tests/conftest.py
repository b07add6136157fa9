"""Shared fixtures: small substrates plus the reference closed-loop pipeline.

The heavy session fixtures (data collection, decision-model training, the
four-condition evaluation run, RL training) are built once and shared by
the module tests and the acceptance suite.
"""

from __future__ import annotations

import numpy as np
import pytest

from nudgelab.harness import ExperimentConfig, run_experiment
from nudgelab.market import PriceBar, PriceSeries, synthesize_series, true_class
from nudgelab.policy import RLHyperparams, train_rl_policy
from nudgelab.predictor import CalibratedPredictor, ClassProbabilities
from nudgelab.simulation import TradingEnv
from nudgelab.user_model import UserModel

# Reference experiment configuration shared by module and acceptance tests.
REF_SHARED = {
    "series": {"synth": {"seed": 101, "days": 560, "regime": "random_walk",
                          "volatility": 0.015, "drift": 0.0, "start_price": 1800}},
    "predictor": {"calibrated": {"seed": 202, "target_accuracy": 0.6, "confidence": 0.6}},
    "window": {"length": 45, "target_accuracy": 0.6, "tolerance": 0.03},
    "corpus": {"generate": {"seed": 5}},
}
REF_POPULATION = {"groups": [{"kind": "susceptible", "count": 80, "beta": 0.7}]}

COLLECTION_CONFIG = {
    **REF_SHARED,
    "master_seed": 7001,
    "strategies": [{"id": "roulette", "kind": "roulette", "policy": {"kind": "oracle"}}],
    "population": REF_POPULATION,
}

RL_SERIES = {"seed": 31, "days": 560, "regime": "momentum", "volatility": 0.012,
             "drift": 0.003, "start_price": 2000.0, "momentum": 0.25}
RL_TRAIN_PRED_SEED = 41
RL_TRAIN_RANGE = range(5, 400)
RL_EVAL_RANGE_START = 446


def eval_config(user_model_path: str) -> dict:
    return {
        **REF_SHARED,
        "master_seed": 9001,
        "strategies": [
            {"id": "flat", "kind": "flat", "policy": {"kind": "oracle"}},
            {"id": "argmax", "kind": "argmax", "policy": {"kind": "oracle"}},
            {"id": "roulette", "kind": "roulette", "policy": {"kind": "oracle"}},
            {"id": "method-oracle", "kind": "method", "policy": {"kind": "oracle"},
             "user_model": user_model_path},
        ],
        "population": {"groups": [{"kind": "susceptible", "count": 100, "beta": 0.7}]},
    }


def make_series(closes, start_index: int = 0, source_id: str = "test") -> PriceSeries:
    """A minimal valid series from a list of closes (open = previous close)."""
    bars = []
    prev = closes[0]
    for i, close in enumerate(closes):
        open_ = prev if i > 0 else close
        high = float(max(open_, close))
        low = float(min(open_, close))
        bars.append(PriceBar(start_index + i, float(open_), high, low, float(close)))
        prev = close
    return PriceSeries(bars, source_id)


class PerfectPredictor:
    """One-hot forecasts equal to the true class; accuracy 1.0 by construction."""

    def __init__(self, series: PriceSeries):
        self.series = series

    def p_for_day(self, t: int) -> ClassProbabilities:
        truth = true_class(self.series, t)
        return ClassProbabilities(
            0.98 if truth == "BULL" else 0.01,
            0.98 if truth == "NEUTRAL" else 0.01,
            0.98 if truth == "BEAR" else 0.01,
        )


class WrongPredictor:
    """Always argmaxes a wrong class; accuracy 0.0 by construction."""

    def __init__(self, series: PriceSeries):
        self.series = series

    def p_for_day(self, t: int) -> ClassProbabilities:
        truth = true_class(self.series, t)
        wrong = {"BULL": "BEAR", "NEUTRAL": "BULL", "BEAR": "NEUTRAL"}[truth]
        return ClassProbabilities(
            0.98 if wrong == "BULL" else 0.01,
            0.98 if wrong == "NEUTRAL" else 0.01,
            0.98 if wrong == "BEAR" else 0.01,
        )


@pytest.fixture(scope="session")
def collection_run():
    """ROULETTE data-collection run: 80 susceptible users, compliance 0.7."""
    return run_experiment(ExperimentConfig.from_dict(COLLECTION_CONFIG))


@pytest.fixture(scope="session")
def trained_user_model(collection_run):
    """Decision model trained on 64 of the 80 collection users (80/20 split)."""
    episodes = collection_run.episodes["roulette"]
    model = UserModel(embed_dim=32, epochs=150, learning_rate=0.08, batch_size=8, seed=0)
    model.fit(episodes[:64])
    return model


@pytest.fixture(scope="session")
def holdout_episodes(collection_run):
    return collection_run.episodes["roulette"][64:]


@pytest.fixture(scope="session")
def user_model_path(trained_user_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "usermodel.json"
    trained_user_model.save(path)
    return str(path)


@pytest.fixture(scope="session")
def eval_run(user_model_path):
    """Paired 100-user evaluation over flat/argmax/roulette/method-oracle."""
    return run_experiment(ExperimentConfig.from_dict(eval_config(user_model_path)))


@pytest.fixture(scope="session")
def rl_training():
    """DDPG policy trained on the momentum series with the 0.9-accuracy forecaster."""
    series = synthesize_series(**RL_SERIES)
    predictor = CalibratedPredictor(series, seed=RL_TRAIN_PRED_SEED,
                                    target_accuracy=0.9, confidence=0.8)
    env = TradingEnv(series, predictor, start_days=RL_TRAIN_RANGE, seed=51)
    result = train_rl_policy(env, RLHyperparams(episodes=300, seed=61))
    return series, result


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
