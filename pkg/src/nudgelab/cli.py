"""Command-line interface.

Subcommands mirror the package surface: series synthesis, predictor
training/calibration/evaluation, corpus generation, user-model training,
policy training and evaluation, per-day emphasis selection, batch
experiments, and the HTTP service.
"""

from __future__ import annotations

import csv as csv_module
import json
import sys

import click
import numpy as np

from . import harness, market, simulation
from .constants import EPISODE_DAYS, POSITIONS
from .errors import NudgelabError
from .explanations import generate_corpus, load_corpus, save_corpus
from .market import load_series, save_series, synthesize_series, true_class
from .policy import (
    NaivePolicy, OraclePolicy, RLAdvisor, RLHyperparams, RLPolicy, train_rl_policy,
)
from .predictor import (
    CalibratedPredictor, SoftmaxPredictor, BoundSoftmaxPredictor,
    extract_features, load_softmax_predictor, save_predictor,
)
from .seeding import child_seed
from .simulation import SyntheticUser, TradingEnv
from .user_model import UserModel

_INT_KEYS = {"seed", "days", "start", "lookback"}


def _parse_kv(spec: str) -> dict:
    out = {}
    for item in spec.split(","):
        if not item.strip():
            continue
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        value = value.strip()
        if key in _INT_KEYS:
            out[key] = int(value)
        else:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
        if key == "regime":
            out[key] = str(value)
    return out


def _series_options(fn):
    fn = click.option("--series", "series_path", type=click.Path(exists=True),
                      help="CSV price series (date_index,open,high,low,close).")(fn)
    fn = click.option("--synth", "synth_spec", type=str,
                      help="Synthesize: seed=..,days=..,regime=..[,volatility=..,drift=..,start_price=..]")(fn)
    return fn


def _resolve_series(series_path, synth_spec) -> market.PriceSeries:
    if series_path and synth_spec:
        raise click.UsageError("use either --series or --synth, not both")
    if series_path:
        return load_series(series_path)
    if synth_spec:
        return synthesize_series(**_parse_kv(synth_spec))
    raise click.UsageError("one of --series or --synth is required")


def _resolve_predictor(series, calibrate_spec, predictor_path):
    if calibrate_spec:
        kv = _parse_kv(calibrate_spec)
        return CalibratedPredictor(
            series, seed=int(kv.get("seed", 0)),
            target_accuracy=float(kv.get("target_accuracy", kv.get("target", 0.6))),
            confidence=float(kv.get("confidence", 0.6)),
        )
    if predictor_path:
        return BoundSoftmaxPredictor(load_softmax_predictor(predictor_path), series)
    raise click.UsageError("one of --calibrated or --predictor is required")


@click.group()
def main():
    """Emphasis-guided decision support simulator."""


@main.group()
def series():
    """Price series utilities."""


@series.command("synth")
@click.option("--seed", type=int, required=True)
@click.option("--days", type=int, required=True)
@click.option("--regime", type=click.Choice(market.REGIMES), default="random_walk")
@click.option("--volatility", type=float, default=0.015)
@click.option("--drift", type=float, default=0.0)
@click.option("--start-price", type=float, default=2000.0)
@click.option("--out", type=click.Path(), required=True)
def series_synth(seed, days, regime, volatility, drift, start_price, out):
    """Generate a synthetic OHLC series and write it as CSV."""
    s = synthesize_series(seed=seed, days=days, regime=regime, volatility=volatility,
                          drift=drift, start_price=start_price)
    save_series(s, out)
    click.echo(f"wrote {len(s)} bars to {out}")


@main.group()
def predictor():
    """Forecaster training, calibration, and evaluation."""


@predictor.command("train")
@_series_options
@click.option("--lookback", type=int, default=10)
@click.option("--epochs", type=int, default=200)
@click.option("--learning-rate", type=float, default=0.5)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def predictor_train(series_path, synth_spec, lookback, epochs, learning_rate, seed, out):
    """Fit the softmax classifier on every day of the series with lookahead."""
    s = _resolve_series(series_path, synth_spec)
    days = range(lookback, len(s) - 1)
    features = [extract_features(s, t, lookback) for t in days]
    labels = [true_class(s, t) for t in days]
    model = SoftmaxPredictor(lookback=lookback, epochs=epochs,
                             learning_rate=learning_rate, seed=seed)
    model.fit(features, labels)
    save_predictor(model, out)
    click.echo(f"trained on {len(labels)} days; final loss {model.loss_curve_[-1]:.4f}; wrote {out}")


@predictor.command("eval")
@_series_options
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
def predictor_eval(series_path, synth_spec, model_path):
    """3-class and directional accuracy of a trained classifier on a series."""
    s = _resolve_series(series_path, synth_spec)
    model = load_softmax_predictor(model_path)
    bound = BoundSoftmaxPredictor(model, s)
    hits = 0
    sign_hits = 0
    n = 0
    for t in range(model.lookback, len(s) - 1):
        p = bound.p_for_day(t)
        truth = true_class(s, t)
        hits += int(p.argmax_class() == truth)
        went_up = market.daily_return(s, t) > 0
        leans_up = p.p_bull > p.p_bear
        sign_hits += int(went_up == leans_up)
        n += 1
    click.echo(f"days={n} accuracy={hits / n:.4f} directional={sign_hits / n:.4f}")


@predictor.command("calibrate")
@_series_options
@click.option("--seed", type=int, required=True)
@click.option("--target-accuracy", type=float, default=0.6)
@click.option("--confidence", type=float, default=0.6)
@click.option("--out", type=click.Path(), required=True)
def predictor_calibrate(series_path, synth_spec, seed, target_accuracy, confidence, out):
    """Build the accuracy-calibrated synthetic forecaster for a series."""
    s = _resolve_series(series_path, synth_spec)
    p = CalibratedPredictor(s, seed=seed, target_accuracy=target_accuracy, confidence=confidence)
    save_predictor(p, out)
    hits = sum(p.p_for_day(t).argmax_class() == true_class(s, t) for t in range(len(s) - 1))
    click.echo(f"empirical accuracy {hits / (len(s) - 1):.4f} over {len(s) - 1} days; wrote {out}")


@main.group()
def corpus():
    """Explanation corpus utilities."""


@corpus.command("generate")
@_series_options
@click.option("--calibrated", "calibrate_spec", type=str,
              help="seed=..,target_accuracy=..,confidence=..")
@click.option("--predictor", "predictor_path", type=click.Path(exists=True))
@click.option("--start", type=int, required=True)
@click.option("--days", type=int, default=EPISODE_DAYS)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def corpus_generate(series_path, synth_spec, calibrate_spec, predictor_path, start, days, seed, out):
    """Write template explanations for a day range as JSONL."""
    s = _resolve_series(series_path, synth_spec)
    pred = _resolve_predictor(s, calibrate_spec, predictor_path)
    corpus_map = generate_corpus(s, range(start, start + days), pred, seed)
    save_corpus(corpus_map, out)
    click.echo(f"wrote {len(corpus_map)} explanation sets to {out}")


@main.group()
def usermodel():
    """Decision-model training and evaluation."""


def _load_log_sequences(logs_dir):
    from pathlib import Path

    paths = sorted(Path(logs_dir).rglob("*.jsonl"))
    if not paths:
        raise click.UsageError(f"no .jsonl logs under {logs_dir}")
    return [simulation.read_records(p) for p in paths]


@usermodel.command("train")
@click.option("--logs", "logs_dir", type=click.Path(exists=True), required=True)
@click.option("--embed-dim", type=int, default=32)
@click.option("--epochs", type=int, default=200)
@click.option("--learning-rate", type=float, default=0.08)
@click.option("--batch-size", type=int, default=8)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def usermodel_train(logs_dir, embed_dim, epochs, learning_rate, batch_size, seed, out):
    """Train the decision model on trajectory logs (a directory of JSONL files)."""
    sequences = _load_log_sequences(logs_dir)
    model = UserModel(embed_dim=embed_dim, epochs=epochs, learning_rate=learning_rate,
                      batch_size=batch_size, seed=seed)
    model.fit(sequences)
    model.save(out)
    click.echo(f"trained on {len(sequences)} episodes; "
               f"loss {model.loss_curve_[0]:.4f} -> {model.loss_curve_[-1]:.4f}; wrote {out}")


@usermodel.command("eval")
@click.option("--logs", "logs_dir", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
def usermodel_eval(logs_dir, model_path):
    """Mean cross-entropy (nats/decision) of a trained model on logs."""
    sequences = _load_log_sequences(logs_dir)
    model = UserModel.load(model_path)
    ce = model.evaluate(sequences)
    click.echo(f"cross-entropy {ce:.4f} nats over {sum(len(s) for s in sequences)} decisions "
               f"(uniform baseline {np.log(len(POSITIONS)):.4f})")


@main.group()
def policy():
    """Advisor-policy training and evaluation."""


@policy.command("train-rl")
@_series_options
@click.option("--calibrated", "calibrate_spec", type=str, required=True,
              help="seed=..,target_accuracy=..,confidence=..")
@click.option("--train-start", type=int, required=True)
@click.option("--train-end", type=int, required=True)
@click.option("--episodes", type=int, default=200)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def policy_train_rl(series_path, synth_spec, calibrate_spec, train_start, train_end,
                    episodes, seed, out):
    """Train the actor-critic policy on a day range of a series."""
    s = _resolve_series(series_path, synth_spec)
    pred = _resolve_predictor(s, calibrate_spec, None)
    env = TradingEnv(s, pred, start_days=range(train_start, train_end), seed=seed)
    result = train_rl_policy(env, RLHyperparams(episodes=episodes, seed=seed))
    result.policy.save(out)
    tail = result.episode_returns[-20:]
    click.echo(f"trained {episodes} episodes; mean return of last {len(tail)}: "
               f"{np.mean(tail):.0f} JPY; wrote {out}")


@policy.command("eval")
@_series_options
@click.option("--strategy", type=click.Choice(["oracle", "rl", "top1", "top2"]), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True),
              help="Trained RL policy JSON (for --strategy rl).")
@click.option("--calibrated", "calibrate_spec", type=str,
              help="Forecaster for top1/top2/rl: seed=..,target_accuracy=..")
@click.option("--start", type=int, required=True)
@click.option("--days", type=int, default=EPISODE_DAYS)
@click.option("--out", type=click.Path(), required=True)
def policy_eval(series_path, synth_spec, strategy, model_path, calibrate_spec, start, days, out):
    """Roll a policy over a window and emit its per-day suggested position as CSV."""
    s = _resolve_series(series_path, synth_spec)
    if strategy == "oracle":
        pol = OraclePolicy()
        pred = _resolve_predictor(s, calibrate_spec, None) if calibrate_spec else None
    else:
        pred = _resolve_predictor(s, calibrate_spec, None)
        if strategy == "rl":
            if not model_path:
                raise click.UsageError("--strategy rl needs --model")
            pol = RLAdvisor(RLPolicy.load(model_path))
        else:
            pol = NaivePolicy(strategy)

    from .policy import PolicyContext

    p_history = []
    rows = []
    position = 0.0
    for i in range(days):
        t = start + i
        p_history.append(pred.p_for_day(t) if pred is not None else None)
        visible = [p for p in p_history if p is not None]
        ctx = PolicyContext(series=s, t=t, p_history=visible, position=position)
        d_ai = float(pol.decide(ctx))
        rows.append((t, d_ai, s.close(t)))
        position = d_ai
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv_module.writer(fh)
        writer.writerow(["day", "d_ai", "close"])
        writer.writerows(rows)
    profit = simulation.rollout_policy(s, pred, pol, start, episode_len=days) \
        if pred is not None or strategy == "oracle" else float("nan")
    click.echo(f"wrote {len(rows)} days to {out}; episode profit {profit:.0f} JPY")


@main.command("select")
@_series_options
@click.option("--strategy", "strategy_name",
              type=click.Choice(["method", "flat", "argmax", "roulette"]), required=True)
@click.option("--calibrated", "calibrate_spec", type=str, required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True),
              help="Explanation corpus JSONL; generated on the fly when omitted.")
@click.option("--model", "model_path", type=click.Path(exists=True),
              help="Trained user model (required for --strategy method).")
@click.option("--policy", "policy_kind", type=click.Choice(["oracle", "top1", "top2"]),
              default="oracle")
@click.option("--start", type=int, required=True)
@click.option("--days", type=int, default=EPISODE_DAYS)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
def select_cmd(series_path, synth_spec, strategy_name, calibrate_spec, corpus_path,
               model_path, policy_kind, start, days, seed, out):
    """Run one seeded episode and emit the chosen pattern (and the 7 scores
    for the method strategy) per day as JSONL."""
    s = _resolve_series(series_path, synth_spec)
    pred = _resolve_predictor(s, calibrate_spec, None)
    corpus_map = load_corpus(corpus_path) if corpus_path else \
        generate_corpus(s, range(start, start + days), pred, seed)

    if strategy_name == "method":
        if not model_path:
            raise click.UsageError("--strategy method needs --model")
        model = UserModel.load(model_path)
        strat = simulation.MethodStrategy(model.params_)
    elif strategy_name == "flat":
        strat = simulation.FlatStrategy()
    elif strategy_name == "argmax":
        strat = simulation.ArgmaxStrategy()
    else:
        strat = simulation.RouletteStrategy(seed=child_seed(seed, "pattern-cli"))

    pol = OraclePolicy() if policy_kind == "oracle" else NaivePolicy(policy_kind)
    user = SyntheticUser(kind="susceptible", beta=0.7, seed=child_seed(seed, "user-cli"))
    episode = simulation.Episode(s, start, pred, corpus_map, strat, pol,
                                 strategy_id=strategy_name, episode_len=days)
    rows = []
    for day in range(days):
        view = episode.day_view()
        doc = {"day": view.day, "pattern": list(view.pattern.as_tuple())}
        if view.scores is not None:
            doc["scores"] = [
                {"pattern": list(score.pattern.as_tuple()),
                 "expected_gap": score.expected_gap}
                for score in view.scores
            ]
        else:
            doc["scores"] = None
        state = episode.portfolio.at_price(view.close)
        decision = simulation.synthetic_decide(user, view.p, view.pattern, state, day)
        doc["d_u"] = episode.submit(decision).d_u
        rows.append(doc)
    with open(out, "w", encoding="utf-8") as fh:
        for doc in rows:
            fh.write(json.dumps(doc))
            fh.write("\n")
    click.echo(f"wrote {len(rows)} selections to {out}")


@main.group()
def experiment():
    """Batch experiments."""


@experiment.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def experiment_run(config_path, out_dir):
    """Run the configured experiment; exit nonzero on any episode failure."""
    config = harness.ExperimentConfig.from_json(config_path)
    result = harness.run_experiment(config, out_dir)
    for summary in result.summaries:
        click.echo(f"{summary.strategy_id}: n={summary.n} "
                   f"mean={summary.mean_final:.0f} sd={summary.sd_final:.0f} "
                   f"below-1M={summary.frac_below_initial:.2f}")
    click.echo(f"logs and report under {out_dir}")


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(config_path, host, port):
    """Start the interactive session service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(ServiceConfig.from_json(config_path))
    uvicorn.run(app, host=host, port=port, log_level="info")


def run() -> None:
    try:
        main(standalone_mode=False)
    except NudgelabError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)


if __name__ == "__main__":
    run()
