"""Emphasis-pattern selection.

The method scores each of the seven candidate patterns (all boolean
triples except all-emphasized) by the expected absolute gap between the
predicted decision distribution and the advisor's suggested position,
and picks the argmin. Ties break toward the least intervention: fewest
emphasized classes first, then lexicographic order. FLAT, ARGMAX, and
ROULETTE live behind the same strategy surface as baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .constants import MAX_SHARES, POSITIONS
from .errors import ValidationError
from .explanations import EmphasisPattern, FLAT_PATTERN
from .predictor import ClassProbabilities
from .user_model import DayContext, DecisionDistribution, UserModelParams, counterfactual_batch

_POSITION_ARRAY = np.array(POSITIONS, dtype=float)

# Lexicographic over (bull, neutral, bear) with False < True, all-true excluded.
_PATTERNS = tuple(
    EmphasisPattern(*flags)
    for flags in product((False, True), repeat=3)
    if flags != (True, True, True)
)


def enumerate_patterns() -> list[EmphasisPattern]:
    """The 7 candidate patterns in fixed lexicographic order, FLAT first."""
    return list(_PATTERNS)


def expected_gap(dist: DecisionDistribution, d_ai: float) -> float:
    """Sum over positions of P(position) * |position - d_ai|."""
    if not isinstance(dist, DecisionDistribution):
        dist = DecisionDistribution.from_array(dist)
    if not 0.0 <= d_ai <= MAX_SHARES:
        raise ValidationError(f"d_ai {d_ai} outside [0, {MAX_SHARES}]")
    return float(np.dot(dist.as_array(), np.abs(_POSITION_ARRAY - d_ai)))


@dataclass(frozen=True)
class PatternScore:
    pattern: EmphasisPattern
    expected_gap: float
    distribution: DecisionDistribution


@dataclass(frozen=True)
class SelectionResult:
    chosen: EmphasisPattern
    scores: tuple
    strategy_id: str


def _tie_key(score: PatternScore):
    return (score.expected_gap, score.pattern.count, score.pattern.as_tuple())


def select_from_distributions(distributions, d_ai: float,
                              strategy_id: str = "method") -> SelectionResult:
    """Argmin over pre-computed per-pattern distributions (one per candidate)."""
    distributions = list(distributions)
    if len(distributions) != len(_PATTERNS):
        raise ValidationError(f"expected {len(_PATTERNS)} distributions, got {len(distributions)}")
    scores = tuple(
        PatternScore(pattern=pat, expected_gap=expected_gap(dist, d_ai), distribution=dist)
        for pat, dist in zip(_PATTERNS, distributions)
    )
    chosen = min(scores, key=_tie_key).pattern
    return SelectionResult(chosen=chosen, scores=scores, strategy_id=strategy_id)


def select_emphasis(history, current: DayContext, d_ai: float,
                    params: UserModelParams, embedder,
                    query_fn=None) -> SelectionResult:
    """Score all 7 patterns through the decision model and return the argmin.

    ``query_fn(pattern) -> DecisionDistribution`` may replace the model
    query, which keeps the argmin logic testable against stubbed models.
    """
    if query_fn is not None:
        dists = [query_fn(pattern) for pattern in _PATTERNS]
    else:
        raw = counterfactual_batch(history, current, _PATTERNS, params, embedder)
        dists = [DecisionDistribution.from_array(row) for row in raw]
    return select_from_distributions(dists, d_ai)


def baseline_select(strategy: str, p: ClassProbabilities,
                    rng: np.random.Generator | None = None) -> EmphasisPattern:
    """FLAT, ARGMAX, or ROULETTE baseline pattern for the day.

    ROULETTE emphasizes each class independently with its forecast
    probability (it may draw the all-emphasized pattern) and requires a
    seeded generator.
    """
    strategy = strategy.lower()
    if strategy == "flat":
        return FLAT_PATTERN
    if strategy == "argmax":
        top = p.argmax_class()
        return EmphasisPattern(top == "BULL", top == "NEUTRAL", top == "BEAR")
    if strategy == "roulette":
        if rng is None:
            raise ValidationError("ROULETTE needs a seeded generator")
        draws = rng.random(3)
        return EmphasisPattern(
            bool(draws[0] < p.p_bull),
            bool(draws[1] < p.p_neutral),
            bool(draws[2] < p.p_bear),
        )
    raise ValidationError(f"unknown baseline strategy {strategy!r}")
