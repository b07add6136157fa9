"""Seeded batch experiments over synthetic user populations, with reports.

A config names the price series, forecaster, 45-day window, explanation
corpus, the emphasis strategies to compare (each with its advisor
policy), and the population. Every (strategy, user, replication) episode
gets independently derived seeds; user traits and decision noise derive
without the strategy id, so conditions are paired user-by-user, and
strategy-dependent draws use the strategy's string id, so adding a
condition never perturbs the others.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import EPISODE_DAYS, INITIAL_CASH
from .errors import ConfigError
from .explanations import generate_corpus, load_corpus
from .market import PriceSeries, load_series, select_window, synthesize_series
from .policy import make_policy
from .predictor import CalibratedPredictor, BoundSoftmaxPredictor, load_softmax_predictor
from .seeding import child_seed, rng_for
from .simulation import (
    ArgmaxStrategy, FlatStrategy, MethodStrategy, RouletteStrategy, SyntheticUser,
    read_records, run_episode, write_records,
)
from .user_model import UserModel

logger = logging.getLogger(__name__)


@dataclass
class PopulationSpec:
    """Counts per user kind plus trait heterogeneity.

    Defaults are calibrated so the un-emphasized condition shows the widest
    outcome dispersion: persistent per-user optimism spreads FLAT outcomes,
    while emphasis pulls compress both optimism and noise contributions.
    """

    groups: list          # dicts: {"kind", "count", "beta"}
    optimism_sd: float = 0.25
    noise_shares: tuple = (30.0, 90.0)
    threshold: float = 0.15

    def total(self) -> int:
        return sum(int(g["count"]) for g in self.groups)


@dataclass
class StrategySpec:
    id: str
    kind: str             # flat | argmax | roulette | method
    policy: dict          # {"kind": oracle|top1|top2|rl, "path": ...}
    user_model: str | None = None


@dataclass
class ExperimentConfig:
    master_seed: int
    series: dict
    predictor: dict
    window: dict
    corpus: dict
    strategies: list
    population: PopulationSpec
    replications: int = 1
    episode_len: int = EPISODE_DAYS
    report: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            strategies = [StrategySpec(**s) for s in doc["strategies"]]
            population = doc["population"]
            pop = PopulationSpec(
                groups=population["groups"],
                optimism_sd=float(population.get("optimism_sd", 0.25)),
                noise_shares=tuple(population.get("noise_shares", (30.0, 90.0))),
                threshold=float(population.get("threshold", 0.15)),
            )
            cfg = cls(
                master_seed=int(doc["master_seed"]),
                series=doc["series"],
                predictor=doc["predictor"],
                window=doc["window"],
                corpus=doc.get("corpus", {"generate": {"seed": 0}}),
                strategies=strategies,
                population=pop,
                replications=int(doc.get("replications", 1)),
                episode_len=int(doc.get("episode_len", EPISODE_DAYS)),
                report=doc.get("report", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        if self.population.total() < 1:
            raise ConfigError("population must contain at least one user")
        ids = [s.id for s in self.strategies]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate strategy ids: {ids}")
        for spec in self.strategies:
            if spec.kind not in ("flat", "argmax", "roulette", "method"):
                raise ConfigError(f"unknown strategy kind {spec.kind!r}")
            if spec.kind == "method" and not spec.user_model:
                raise ConfigError(f"strategy {spec.id!r}: method needs a user_model path")
            if spec.policy.get("kind") not in ("oracle", "top1", "top2", "rl"):
                raise ConfigError(f"strategy {spec.id!r}: unknown policy {spec.policy!r}")
        for group in self.population.groups:
            if group.get("kind") not in ("susceptible", "contrarian", "independent"):
                raise ConfigError(f"unknown user kind in population: {group!r}")


def build_series(spec: dict) -> PriceSeries:
    if "csv" in spec:
        return load_series(spec["csv"])
    if "synth" in spec:
        return synthesize_series(**spec["synth"])
    raise ConfigError(f"series spec needs 'csv' or 'synth': {spec!r}")


def build_predictor(spec: dict, series: PriceSeries):
    if "calibrated" in spec:
        params = dict(spec["calibrated"])
        return CalibratedPredictor(
            series, seed=int(params["seed"]),
            target_accuracy=float(params.get("target_accuracy", 0.6)),
            confidence=float(params.get("confidence", 0.6)),
        )
    if "softmax_path" in spec:
        return BoundSoftmaxPredictor(load_softmax_predictor(spec["softmax_path"]), series)
    raise ConfigError(f"predictor spec needs 'calibrated' or 'softmax_path': {spec!r}")


def resolve_window(spec: dict, series: PriceSeries, predictor) -> tuple[int, int]:
    length = int(spec.get("length", EPISODE_DAYS))
    if "start" in spec:
        return int(spec["start"]), length
    # feature-based predictors cannot score days before their lookback
    default_min = int(getattr(predictor, "min_day", 0))
    start = select_window(
        series, predictor, window=length,
        target_accuracy=float(spec.get("target_accuracy", 0.6)),
        tolerance=float(spec.get("tolerance", 0.03)),
        min_start=int(spec.get("min_start", default_min)),
    )
    return start, length


def build_corpus(spec: dict, series: PriceSeries, predictor, window_start: int, length: int):
    if "path" in spec:
        return load_corpus(spec["path"])
    if "generate" in spec:
        seed = int(spec["generate"].get("seed", 0))
        days = range(window_start, window_start + length)
        return generate_corpus(series, days, predictor, seed)
    raise ConfigError(f"corpus spec needs 'path' or 'generate': {spec!r}")


def build_population(config: ExperimentConfig, replication: int) -> list[SyntheticUser]:
    """Synthetic users for one replication; traits never depend on strategy."""
    users = []
    idx = 0
    pop = config.population
    for group in pop.groups:
        for _ in range(int(group["count"])):
            rng = rng_for(config.master_seed, "trait", idx, replication)
            users.append(SyntheticUser(
                kind=group["kind"],
                beta=float(group.get("beta", 0.7)),
                threshold=pop.threshold,
                noise_shares=float(rng.uniform(*pop.noise_shares)),
                optimism=float(rng.normal(0.0, pop.optimism_sd)),
                seed=child_seed(config.master_seed, "user", idx, replication),
            ))
            idx += 1
    return users


def _build_strategy(spec: StrategySpec, master_seed: int, user_idx: int, replication: int):
    if spec.kind == "flat":
        return FlatStrategy()
    if spec.kind == "argmax":
        return ArgmaxStrategy()
    if spec.kind == "roulette":
        return RouletteStrategy(seed=child_seed(master_seed, "pattern", spec.id, user_idx, replication))
    model = UserModel.load(spec.user_model)
    return MethodStrategy(model.params_, strategy_id=spec.id)


@dataclass
class ConditionSummary:
    """Per-strategy outcome statistics, recomputable from the raw logs."""

    strategy_id: str
    n: int
    mean_final: float
    sd_final: float            # sample SD (ddof=1); 0 when n == 1
    min_final: float
    max_final: float
    frac_below_initial: float
    correlations: list         # per-user Pearson r of (d_ai, d_u); None if undefined
    undefined_correlations: int
    finals: list

    def to_json(self) -> dict:
        return {
            "strategy_id": self.strategy_id,
            "n": self.n,
            "mean_final": self.mean_final,
            "sd_final": self.sd_final,
            "min_final": self.min_final,
            "max_final": self.max_final,
            "frac_below_initial": self.frac_below_initial,
            "correlations": self.correlations,
            "undefined_correlations": self.undefined_correlations,
            "finals": self.finals,
        }


def correlation_per_user(records) -> float | None:
    """Pearson correlation between the advisor and user position series.

    Returns None when either series has zero variance (undefined flag);
    callers must not silently coerce this to a number.
    """
    d_ai = np.array([r.d_ai for r in records], dtype=float)
    d_u = np.array([r.d_u for r in records], dtype=float)
    dev_ai = d_ai - d_ai.mean()
    dev_u = d_u - d_u.mean()
    var_ai = float(np.mean(dev_ai**2))
    var_u = float(np.mean(dev_u**2))
    if var_ai == 0.0 or var_u == 0.0:
        return None
    return float(np.mean(dev_ai * dev_u) / (np.sqrt(var_ai) * np.sqrt(var_u)))


def summarize_condition(strategy_id: str, episodes: list,
                        initial_cash: float = INITIAL_CASH) -> ConditionSummary:
    finals = [ep[-1].total_assets for ep in episodes]
    corrs = [correlation_per_user(ep) for ep in episodes]
    arr = np.array(finals)
    return ConditionSummary(
        strategy_id=strategy_id,
        n=len(finals),
        mean_final=float(arr.mean()),
        sd_final=float(arr.std(ddof=1)) if len(finals) > 1 else 0.0,
        min_final=float(arr.min()),
        max_final=float(arr.max()),
        frac_below_initial=float(np.mean(arr < initial_cash)),
        correlations=corrs,
        undefined_correlations=sum(1 for c in corrs if c is None),
        finals=[float(v) for v in finals],
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    window_start: int
    summaries: list
    episodes: dict          # strategy_id -> list of record lists
    out_dir: str | None = None


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every (strategy, user, replication) episode and summarize.

    Deterministic per master seed: rerunning with the same config produces
    byte-identical logs and reports.
    """
    series = build_series(config.series)
    predictor = build_predictor(config.predictor, series)
    window_start, length = resolve_window(config.window, series, predictor)
    if window_start + length + 1 > len(series):
        raise ConfigError(
            f"window start {window_start} needs {length + 1} lookahead closes; series has {len(series)}"
        )
    corpus = build_corpus(config.corpus, series, predictor, window_start, length)

    out_path = Path(out_dir) if out_dir is not None else None
    episodes_by_strategy: dict[str, list] = {}
    for spec in config.strategies:
        policy = make_policy(spec.policy["kind"], series=series, path=spec.policy.get("path"))
        episodes = []
        for replication in range(config.replications):
            users = build_population(config, replication)
            for user_idx, user in enumerate(users):
                strategy = _build_strategy(spec, config.master_seed, user_idx, replication)
                records = run_episode(
                    series, window_start, predictor, corpus, strategy, policy, user,
                    strategy_id=spec.id, episode_len=config.episode_len,
                )
                episodes.append(records)
                if out_path is not None:
                    log_dir = out_path / "logs" / spec.id
                    log_dir.mkdir(parents=True, exist_ok=True)
                    write_records(records, log_dir / f"user{user_idx:03d}_rep{replication:02d}.jsonl")
        episodes_by_strategy[spec.id] = episodes
        logger.info("strategy %s: %d episodes done", spec.id, len(episodes))

    summaries = [summarize_condition(spec.id, episodes_by_strategy[spec.id])
                 for spec in config.strategies]
    if out_path is not None:
        with open(out_path / "summaries.json", "w", encoding="utf-8") as fh:
            json.dump([s.to_json() for s in summaries], fh, indent=2, sort_keys=True)
            fh.write("\n")
        render_report(summaries, out_path / "report", **config.report)
    return ExperimentResult(config=config, window_start=window_start,
                            summaries=summaries, episodes=episodes_by_strategy,
                            out_dir=str(out_path) if out_path else None)


def load_condition_logs(log_dir) -> list:
    """All episodes of one strategy directory, ordered by file name."""
    return [read_records(path) for path in sorted(Path(log_dir).glob("*.jsonl"))]


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def render_report(summaries: list, out_dir, bins: int = 20, hist_range=None,
                  exclude_above: float | None = None) -> list[str]:
    """Write comparison table, per-condition histogram and box-plot data, and a
    markdown summary. Pure function of its inputs: reruns are byte-identical."""
    if not summaries:
        raise ConfigError("no summaries to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    all_finals = [v for s in summaries for v in s.finals
                  if exclude_above is None or v <= exclude_above]
    if not all_finals:
        raise ConfigError("no episodes left to report after outlier exclusion")
    if hist_range is None:
        lo, hi = min(all_finals), max(all_finals)
        pad = max((hi - lo) * 0.05, 1.0)
        hist_range = (lo - pad, hi + pad)

    comparison = out / "comparison.csv"
    with open(comparison, "w", encoding="utf-8") as fh:
        fh.write("strategy_id,n,excluded,mean_final,sd_final_ddof1,min_final,max_final,"
                 "frac_below_initial,mean_correlation,undefined_correlations\n")
        for s in summaries:
            finals = [v for v in s.finals if exclude_above is None or v <= exclude_above]
            excluded = s.n - len(finals)
            arr = np.array(finals)
            defined = [c for c in s.correlations if c is not None]
            mean_corr = float(np.mean(defined)) if defined else float("nan")
            fh.write(",".join([
                s.strategy_id, str(len(finals)), str(excluded),
                _fmt(arr.mean()), _fmt(arr.std(ddof=1) if len(finals) > 1 else 0.0),
                _fmt(arr.min()), _fmt(arr.max()),
                _fmt(float(np.mean(arr < INITIAL_CASH))),
                _fmt(mean_corr), str(s.undefined_correlations),
            ]) + "\n")
    written.append(str(comparison))

    for s in summaries:
        finals = np.array([v for v in s.finals if exclude_above is None or v <= exclude_above])
        counts, edges = np.histogram(finals, bins=bins, range=hist_range)
        hist_path = out / f"hist_{s.strategy_id}.csv"
        with open(hist_path, "w", encoding="utf-8") as fh:
            fh.write("bin_left,bin_right,count\n")
            for i, count in enumerate(counts):
                fh.write(f"{_fmt(edges[i])},{_fmt(edges[i + 1])},{count}\n")
        written.append(str(hist_path))

        q1, med, q3 = (float(np.percentile(finals, q)) for q in (25, 50, 75))
        box_path = out / f"box_{s.strategy_id}.csv"
        with open(box_path, "w", encoding="utf-8") as fh:
            fh.write("min,q1,median,q3,max\n")
            fh.write(",".join(_fmt(v) for v in
                              (finals.min(), q1, med, q3, finals.max())) + "\n")
        written.append(str(box_path))

    md = out / "report.md"
    with open(md, "w", encoding="utf-8") as fh:
        fh.write("# Experiment report\n\n")
        fh.write(f"Conditions: {', '.join(s.strategy_id for s in summaries)}. ")
        fh.write(f"Initial budget {INITIAL_CASH:.0f} JPY. SD is sample SD (ddof=1).\n\n")
        if exclude_above is not None:
            fh.write(f"Outlier exclusion: final assets above {_fmt(exclude_above)} dropped.\n\n")
        fh.write("| condition | n | mean final | SD | below 1M | mean corr(d_ai, d_u) | undefined |\n")
        fh.write("|---|---|---|---|---|---|---|\n")
        for s in summaries:
            finals = [v for v in s.finals if exclude_above is None or v <= exclude_above]
            arr = np.array(finals)
            defined = [c for c in s.correlations if c is not None]
            mean_corr = float(np.mean(defined)) if defined else float("nan")
            fh.write(f"| {s.strategy_id} | {len(finals)} | {_fmt(arr.mean())} | "
                     f"{_fmt(arr.std(ddof=1) if len(finals) > 1 else 0.0)} | "
                     f"{_fmt(float(np.mean(arr < INITIAL_CASH)))} | {_fmt(mean_corr)} | "
                     f"{s.undefined_correlations} |\n")
    written.append(str(md))
    return written
