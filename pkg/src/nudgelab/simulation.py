"""Portfolio accounting and the daily episode loop.

Orders execute at the same day's close with no fees or slippage, in lots
of 100 shares up to 500, against a 1,000,000 JPY starting budget. The
daily change in total assets therefore equals position x price change
exactly, which is also the RL reward.

An Episode binds predictor, explanation source, emphasis strategy, and
advisor policy into the 45-day loop; the decision each day comes either
from a synthetic user (batch runs) or a human through the session
service (which drives the same Episode one order at a time).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .constants import EPISODE_DAYS, INITIAL_CASH, LOT_SIZE, MAX_SHARES, POSITIONS
from .errors import RejectedOrderError, ValidationError
from .explanations import EmphasisPattern, ExplanationSet, FLAT_PATTERN, HashingEmbedder
from .market import PriceSeries
from .policy import PolicyContext, build_observation
from .predictor import ClassProbabilities
from .seeding import rng_for
from .selector import baseline_select, select_emphasis
from .user_model import DayContext, UserModelParams

USER_KINDS = ("susceptible", "contrarian", "independent")


@dataclass(frozen=True)
class PortfolioState:
    """Cash plus a share position marked at the latest execution price."""

    cash: float
    position: int
    last_price: float

    def __post_init__(self):
        if self.cash < 0:
            raise ValidationError(f"cash must be >= 0, got {self.cash}")
        if self.position not in POSITIONS:
            raise ValidationError(f"position {self.position} not in {POSITIONS}")
        if self.last_price <= 0:
            raise ValidationError(f"last_price must be > 0, got {self.last_price}")

    @property
    def total_assets(self) -> float:
        return self.cash + self.position * self.last_price

    def value_at(self, price: float) -> float:
        return self.cash + self.position * price

    def at_price(self, price: float) -> "PortfolioState":
        """The same holdings marked at a new price (no trade)."""
        return PortfolioState(cash=self.cash, position=self.position, last_price=price)


def initial_portfolio(price: float, cash: float = INITIAL_CASH) -> PortfolioState:
    return PortfolioState(cash=cash, position=0, last_price=price)


def apply_order(state: PortfolioState, target_position: int, price: float) -> PortfolioState:
    """Move the position to ``target_position`` at ``price``; no fees.

    Raises ValidationError for a target outside the lot grid and
    RejectedOrderError when the target is unaffordable; the input state is
    never mutated.
    """
    if target_position not in POSITIONS:
        raise ValidationError(
            f"target {target_position} must be a multiple of {LOT_SIZE} in [0, {MAX_SHARES}]"
        )
    new_cash = state.cash - (target_position - state.position) * price
    if new_cash < -1e-9:
        raise RejectedOrderError(
            f"cannot afford {target_position} shares at {price}: "
            f"assets {state.value_at(price):.0f} JPY cover at most "
            f"{max_affordable_position(state, price)}"
        )
    return PortfolioState(cash=max(new_cash, 0.0), position=target_position, last_price=price)


def max_affordable_position(state: PortfolioState, price: float) -> int:
    """Largest legal position affordable after liquidating into the order."""
    if price <= 0:
        raise ValidationError(f"price must be > 0, got {price}")
    lots = int((state.cash + state.position * price) / (price * LOT_SIZE) + 1e-9)
    return min(MAX_SHARES, lots * LOT_SIZE)


@dataclass(frozen=True)
class TrajectoryRecord:
    """One day of one session; the training and evaluation log atom."""

    day: int                 # absolute series day index
    episode_day: int         # 0-based day within the episode
    p: ClassProbabilities
    texts: ExplanationSet
    pattern: EmphasisPattern
    d_u: int
    d_ai: float
    delta_pct: float
    total_assets: float
    strategy_id: str

    def to_json(self) -> dict:
        return {
            "day": self.day,
            "episode_day": self.episode_day,
            "p": [self.p.p_bull, self.p.p_neutral, self.p.p_bear],
            "texts": {"bull": self.texts.bull, "neutral": self.texts.neutral, "bear": self.texts.bear},
            "pattern": list(self.pattern.as_tuple()),
            "d_u": self.d_u,
            "d_ai": self.d_ai,
            "delta_pct": self.delta_pct,
            "total_assets": self.total_assets,
            "strategy_id": self.strategy_id,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrajectoryRecord":
        return cls(
            day=int(doc["day"]),
            episode_day=int(doc["episode_day"]),
            p=ClassProbabilities(*(float(v) for v in doc["p"])),
            texts=ExplanationSet(day=int(doc["day"]), bull=doc["texts"]["bull"],
                                 neutral=doc["texts"]["neutral"], bear=doc["texts"]["bear"]),
            pattern=EmphasisPattern(*(bool(v) for v in doc["pattern"])),
            d_u=int(doc["d_u"]),
            d_ai=float(doc["d_ai"]),
            delta_pct=float(doc["delta_pct"]),
            total_assets=float(doc["total_assets"]),
            strategy_id=doc["strategy_id"],
        )


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()))
            fh.write("\n")


def read_records(path) -> list[TrajectoryRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(TrajectoryRecord.from_json(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# Synthetic users.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticUser:
    """Stand-in for a human participant.

    The base heuristic maps the forecast's expected direction into the
    {0, 300, 500} bands with seeded noise; ``kind`` controls how emphasis
    moves the decision (toward the implied position, away from it, or not
    at all) with compliance ``beta``.
    """

    kind: str
    beta: float
    threshold: float = 0.15
    noise_shares: float = 40.0
    optimism: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in USER_KINDS:
            raise ValidationError(f"kind {self.kind!r} not in {USER_KINDS}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError(f"beta must be in [0, 1], got {self.beta}")


def implied_position(pattern: EmphasisPattern, current_position: int) -> float | None:
    """Position the emphasized classes point at: BULL 500, BEAR 0, NEUTRAL hold.
    Multiple emphasized classes average; None when nothing is emphasized."""
    implied = []
    if pattern.bull:
        implied.append(float(MAX_SHARES))
    if pattern.neutral:
        implied.append(float(current_position))
    if pattern.bear:
        implied.append(0.0)
    if not implied:
        return None
    return float(np.mean(implied))


def synthetic_decide(user: SyntheticUser, p: ClassProbabilities, pattern: EmphasisPattern,
                     state: PortfolioState, day_index: int) -> int:
    """The user's position decision for the day, clamped affordable.

    The noise draw depends only on (user seed, day), never on the pattern
    or strategy, so paired comparisons across conditions see the same user.
    """
    rng = rng_for(user.seed, "decide", day_index)
    signal = (p.p_bull - p.p_bear) + user.optimism
    if signal > user.threshold:
        base = float(MAX_SHARES)
    elif signal < -user.threshold:
        base = 0.0
    else:
        base = 300.0
    target = base + rng.normal(0.0, user.noise_shares)

    implied = implied_position(pattern, state.position)
    if implied is not None and user.kind != "independent":
        goal = implied if user.kind == "susceptible" else (MAX_SHARES - implied)
        target += user.beta * (goal - target)

    lots = int(math.floor(target / LOT_SIZE + 0.5))
    decision = min(max(lots, 0), MAX_SHARES // LOT_SIZE) * LOT_SIZE
    return min(decision, max_affordable_position(state, state.last_price))


# ---------------------------------------------------------------------------
# Emphasis strategies behind one interface.
# ---------------------------------------------------------------------------


@dataclass
class StrategyInputs:
    """What a strategy may look at when choosing the day's pattern."""

    episode_day: int
    p: ClassProbabilities
    texts: ExplanationSet
    d_ai: float
    history: list              # DayContext of prior days, realized patterns
    current: DayContext        # current day; pattern field is a placeholder


class FlatStrategy:
    strategy_id = "flat"

    def choose(self, inputs: StrategyInputs):
        return FLAT_PATTERN, None


class ArgmaxStrategy:
    strategy_id = "argmax"

    def choose(self, inputs: StrategyInputs):
        return baseline_select("argmax", inputs.p), None


class RouletteStrategy:
    strategy_id = "roulette"

    def __init__(self, seed: int):
        self.seed = seed

    def choose(self, inputs: StrategyInputs):
        rng = rng_for(self.seed, "pattern", inputs.episode_day)
        return baseline_select("roulette", inputs.p, rng), None


class MethodStrategy:
    """Model-guided selection: argmin expected gap over the 7 patterns."""

    strategy_id = "method"

    def __init__(self, params: UserModelParams, embedder=None, strategy_id: str = "method"):
        self.params = params
        self.embedder = embedder or HashingEmbedder(params.embed_dim)
        self.strategy_id = strategy_id

    def choose(self, inputs: StrategyInputs):
        result = select_emphasis(inputs.history, inputs.current, inputs.d_ai,
                                 self.params, self.embedder)
        return result.chosen, result.scores


# ---------------------------------------------------------------------------
# The daily episode loop.
# ---------------------------------------------------------------------------


@dataclass
class DayView:
    """Everything computed for one day before the order arrives."""

    day: int
    episode_day: int
    p: ClassProbabilities
    texts: ExplanationSet
    pattern: EmphasisPattern
    d_ai: float
    delta_pct: float
    close: float
    portfolio: PortfolioState
    valid_targets: list
    scores: tuple | None = None


class Episode:
    """A 45-day trading session; one instance per user session.

    ``day_view()`` computes and caches the day's forecast, texts, advisor
    suggestion, and emphasis pattern (the pattern is drawn once per day,
    so repeated reads are idempotent); ``submit()`` executes the order at
    the day's close, records the day, and advances.
    """

    def __init__(self, series: PriceSeries, window_start: int, predictor, explanations,
                 strategy, policy, strategy_id: str | None = None,
                 episode_len: int = EPISODE_DAYS, initial_cash: float = INITIAL_CASH):
        if window_start < 0 or window_start + episode_len + 1 > len(series):
            raise ValidationError(
                f"episode needs closes for days {window_start}..{window_start + episode_len} "
                f"(settlement lookahead); series has {len(series)}"
            )
        self.series = series
        self.window_start = window_start
        self.predictor = predictor
        self._texts_for = explanations if callable(explanations) else explanations.__getitem__
        self.strategy = strategy
        self.policy = policy
        self.strategy_id = strategy_id or getattr(strategy, "strategy_id", "unknown")
        self.episode_len = episode_len

        self.day = 0
        self.portfolio = initial_portfolio(price=series.close(window_start), cash=initial_cash)
        self.prev_assets = initial_cash
        self.p_history: list[ClassProbabilities] = []
        self.history: list[DayContext] = []
        self.records: list[TrajectoryRecord] = []
        self._view: DayView | None = None

    @property
    def completed(self) -> bool:
        return self.day >= self.episode_len

    @property
    def final_assets(self) -> float:
        return self.prev_assets

    def day_view(self) -> DayView:
        if self.completed:
            raise ValidationError("episode already completed")
        if self._view is not None:
            return self._view
        abs_day = self.window_start + self.day
        close = self.series.close(abs_day)
        p = self.predictor.p_for_day(abs_day)
        marked = self.portfolio.value_at(close)
        delta_pct = (marked - self.prev_assets) / self.prev_assets * 100.0
        texts = self._texts_for(abs_day)
        d_ai = float(self.policy.decide(PolicyContext(
            series=self.series, t=abs_day, p_history=self.p_history + [p],
            position=self.portfolio.position,
        )))
        current = DayContext(t=self.day, delta_pct=delta_pct, p=p,
                             d_prev=self.portfolio.position, texts=texts, pattern=FLAT_PATTERN)
        pattern, scores = self.strategy.choose(StrategyInputs(
            episode_day=self.day, p=p, texts=texts, d_ai=d_ai,
            history=self.history, current=current,
        ))
        targets = [d for d in POSITIONS if d <= max_affordable_position(self.portfolio, close)]
        self._view = DayView(
            day=abs_day, episode_day=self.day, p=p, texts=texts, pattern=pattern,
            d_ai=d_ai, delta_pct=delta_pct, close=close, portfolio=self.portfolio,
            valid_targets=targets, scores=scores,
        )
        self.p_history.append(p)
        return self._view

    def submit(self, d_u: int) -> TrajectoryRecord:
        view = self.day_view()
        d_prev = self.portfolio.position
        self.portfolio = apply_order(self.portfolio, d_u, view.close)
        record = TrajectoryRecord(
            day=view.day, episode_day=view.episode_day, p=view.p, texts=view.texts,
            pattern=view.pattern, d_u=d_u, d_ai=view.d_ai, delta_pct=view.delta_pct,
            total_assets=self.portfolio.total_assets, strategy_id=self.strategy_id,
        )
        self.records.append(record)
        self.history.append(DayContext(
            t=view.episode_day, delta_pct=view.delta_pct, p=view.p,
            d_prev=d_prev, texts=view.texts, pattern=view.pattern,
        ))
        self.prev_assets = self.portfolio.total_assets
        self.day += 1
        self._view = None
        return record


def run_episode(series: PriceSeries, window_start: int, predictor, explanations,
                strategy, policy, user: SyntheticUser,
                strategy_id: str | None = None,
                episode_len: int = EPISODE_DAYS) -> list[TrajectoryRecord]:
    """Run a full episode with a synthetic user deciding each day.

    Unaffordable synthetic decisions are clamped to the maximum affordable
    position (humans are re-prompted through the service instead).
    """
    episode = Episode(series, window_start, predictor, explanations, strategy, policy,
                      strategy_id=strategy_id, episode_len=episode_len)
    for day in range(episode_len):
        view = episode.day_view()
        state = episode.portfolio.at_price(view.close)
        decision = synthetic_decide(user, view.p, view.pattern, state, day)
        episode.submit(decision)
    return episode.records


# ---------------------------------------------------------------------------
# RL training environment.
# ---------------------------------------------------------------------------


class TradingEnv:
    """Continuous-position trading environment for policy training.

    Each step sets the position (clamped affordable, fractional shares
    allowed) at the current close, advances one day, and pays the change
    in total assets in JPY as the reward. Episode starts are sampled from
    ``start_days`` by the env's own seeded generator.
    """

    def __init__(self, series: PriceSeries, predictor, start_days, seed: int = 0,
                 episode_len: int = EPISODE_DAYS, initial_cash: float = INITIAL_CASH):
        self.series = series
        self.predictor = predictor
        self.start_days = list(start_days)
        if not self.start_days:
            raise ValidationError("start_days must be non-empty")
        for start in self.start_days:
            if start + episode_len + 1 > len(series):
                raise ValidationError(f"start day {start} leaves fewer than {episode_len + 1} closes")
        self.episode_len = episode_len
        self.initial_cash = initial_cash
        self._rng = rng_for(seed, "trading-env")
        self._t = 0
        self._step_count = 0
        self._cash = 0.0
        self._position = 0.0
        self._p_history: list[ClassProbabilities] = []

    def _observe(self) -> np.ndarray:
        return build_observation(self._p_history, self._position).as_array()

    def reset(self) -> np.ndarray:
        self._t = int(self.start_days[self._rng.integers(len(self.start_days))])
        self._step_count = 0
        self._cash = self.initial_cash
        self._position = 0.0
        self._p_history = [self.predictor.p_for_day(self._t)]
        return self._observe()

    def step(self, action: float):
        close = self.series.close(self._t)
        total = self._cash + self._position * close
        affordable = min(float(MAX_SHARES), total / close)
        target = float(np.clip(action, 0.0, affordable))
        self._cash = total - target * close
        self._position = target

        self._t += 1
        self._step_count += 1
        next_close = self.series.close(self._t)
        reward = self._position * (next_close - close)
        done = self._step_count >= self.episode_len
        self._p_history.append(self.predictor.p_for_day(self._t) if not done
                               else self._p_history[-1])
        return self._observe(), float(reward), done


def rollout_policy(series: PriceSeries, predictor, policy, window_start: int,
                   episode_len: int = EPISODE_DAYS, initial_cash: float = INITIAL_CASH) -> float:
    """Deterministic episode profit (JPY) of an advisor policy trading alone.

    The policy's continuous suggestion is applied directly as the position.
    """
    cash = initial_cash
    position = 0.0
    p_history: list[ClassProbabilities] = []
    for day in range(episode_len):
        t = window_start + day
        close = series.close(t)
        if predictor is not None:
            p_history.append(predictor.p_for_day(t))
        d_ai = float(policy.decide(PolicyContext(
            series=series, t=t, p_history=p_history, position=position,
        )))
        total = cash + position * close
        target = float(np.clip(d_ai, 0.0, min(MAX_SHARES, total / close)))
        cash = total - target * close
        position = target
    final = cash + position * series.close(window_start + episode_len - 1)
    return final - initial_cash
