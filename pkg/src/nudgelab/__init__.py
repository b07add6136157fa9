"""nudgelab: closed-loop simulator for emphasis-based decision guidance.

An advisor policy suggests trading positions, a trainable model predicts
how emphasizing per-class explanation texts shifts a user's decision,
and a selector emphasizes whichever explanations minimize the expected
gap between the predicted decision and the advisor's suggestion. The
package ships the market substrate, forecasters, explanation corpus and
embeddings, the decision model, advisor policies (oracle, naive, RL),
the selector, a seeded trading simulator with synthetic users, a batch
experiment harness, and an HTTP session service for human participants.
"""

from .constants import CLASSES, EPISODE_DAYS, INITIAL_CASH, POSITIONS
from .explanations import (
    EmphasisPattern, ExplanationSet, HashingEmbedder, embed_text,
    generate_template_explanations, load_corpus,
)
from .harness import ExperimentConfig, correlation_per_user, render_report, run_experiment
from .market import PriceBar, PriceSeries, load_series, select_window, synthesize_series, true_class
from .policy import (
    NaivePolicy, OraclePolicy, RLHyperparams, RLPolicy, naive_decide, oracle_decide,
    rl_decide, train_rl_policy,
)
from .predictor import (
    CalibratedPredictor, ChartFeatures, ClassProbabilities, SoftmaxPredictor,
    extract_features, make_calibrated_predictor,
)
from .selector import (
    SelectionResult, baseline_select, enumerate_patterns, expected_gap, select_emphasis,
)
from .simulation import (
    Episode, PortfolioState, SyntheticUser, TradingEnv, TrajectoryRecord,
    apply_order, max_affordable_position, run_episode, synthetic_decide,
)
from .user_model import (
    DayContext, DecisionDistribution, UserModel, UserModelParams,
    combine_explanations, counterfactual_query, encode_day, predict_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "CLASSES", "EPISODE_DAYS", "INITIAL_CASH", "POSITIONS",
    "EmphasisPattern", "ExplanationSet", "HashingEmbedder", "embed_text",
    "generate_template_explanations", "load_corpus",
    "ExperimentConfig", "correlation_per_user", "render_report", "run_experiment",
    "PriceBar", "PriceSeries", "load_series", "select_window", "synthesize_series", "true_class",
    "NaivePolicy", "OraclePolicy", "RLHyperparams", "RLPolicy", "naive_decide",
    "oracle_decide", "rl_decide", "train_rl_policy",
    "CalibratedPredictor", "ChartFeatures", "ClassProbabilities", "SoftmaxPredictor",
    "extract_features", "make_calibrated_predictor",
    "SelectionResult", "baseline_select", "enumerate_patterns", "expected_gap", "select_emphasis",
    "Episode", "PortfolioState", "SyntheticUser", "TradingEnv", "TrajectoryRecord",
    "apply_order", "max_affordable_position", "run_episode", "synthetic_decide",
    "DayContext", "DecisionDistribution", "UserModel", "UserModelParams",
    "combine_explanations", "counterfactual_query", "encode_day", "predict_distribution",
]
