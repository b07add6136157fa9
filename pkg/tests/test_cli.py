import json

import pytest
from click.testing import CliRunner

from nudgelab.cli import main
from nudgelab.market import load_series


@pytest.fixture()
def runner():
    return CliRunner()


def invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


SYNTH = "seed=55,days=120,regime=random_walk,volatility=0.015,start_price=1800"


class TestSeriesCli:
    def test_synth_writes_csv(self, runner, tmp_path):
        out = tmp_path / "series.csv"
        invoke(runner, ["series", "synth", "--seed", "3", "--days", "80", "--out", str(out)])
        assert len(load_series(out)) == 80


class TestPredictorCli:
    def test_calibrate_and_eval(self, runner, tmp_path):
        pred = tmp_path / "pred.json"
        result = invoke(runner, ["predictor", "calibrate", "--synth", SYNTH,
                                 "--seed", "9", "--target-accuracy", "0.6", "--out", str(pred)])
        assert "empirical accuracy" in result.output
        doc = json.loads(pred.read_text())
        assert doc["kind"] == "calibrated"

    def test_train_softmax(self, runner, tmp_path):
        out = tmp_path / "softmax.json"
        result = invoke(runner, ["predictor", "train", "--synth", SYNTH,
                                 "--epochs", "5", "--out", str(out)])
        assert "trained on" in result.output
        invoke(runner, ["predictor", "eval", "--synth", SYNTH, "--model", str(out)])


class TestCorpusCli:
    def test_generate(self, runner, tmp_path):
        out = tmp_path / "corpus.jsonl"
        invoke(runner, ["corpus", "generate", "--synth", SYNTH,
                        "--calibrated", "seed=9,target_accuracy=0.6",
                        "--start", "10", "--days", "20", "--out", str(out)])
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 20
        assert set(json.loads(lines[0])) == {"day", "bull", "neutral", "bear"}


class TestSelectCli:
    def test_flat_episode(self, runner, tmp_path):
        out = tmp_path / "select.jsonl"
        invoke(runner, ["select", "--synth", SYNTH, "--strategy", "flat",
                        "--calibrated", "seed=9", "--start", "10", "--days", "45",
                        "--out", str(out)])
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 45
        first = json.loads(lines[0])
        assert first["pattern"] == [False, False, False]
        assert first["scores"] is None

    def test_method_emits_seven_scores(self, runner, tmp_path):
        out_dir = tmp_path / "logs"
        config = {
            "master_seed": 77,
            "series": {"synth": {"seed": 55, "days": 120, "regime": "random_walk",
                                  "volatility": 0.015, "start_price": 1800}},
            "predictor": {"calibrated": {"seed": 66, "target_accuracy": 0.6, "confidence": 0.6}},
            "window": {"start": 10, "length": 45},
            "corpus": {"generate": {"seed": 1}},
            "strategies": [{"id": "roulette", "kind": "roulette", "policy": {"kind": "oracle"}}],
            "population": {"groups": [{"kind": "susceptible", "count": 2, "beta": 0.7}]},
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        invoke(runner, ["experiment", "run", "--config", str(config_path), "--out", str(out_dir)])
        model_path = tmp_path / "model.json"
        invoke(runner, ["usermodel", "train", "--logs", str(out_dir / "logs"),
                        "--epochs", "2", "--out", str(model_path)])

        out = tmp_path / "select.jsonl"
        invoke(runner, ["select", "--synth", SYNTH, "--strategy", "method",
                        "--calibrated", "seed=66,target_accuracy=0.6",
                        "--model", str(model_path), "--start", "10", "--days", "5",
                        "--out", str(out)])
        rows = [json.loads(line) for line in out.read_text().strip().splitlines()]
        assert len(rows) == 5
        for row in rows:
            assert len(row["scores"]) == 7
            gaps = [s["expected_gap"] for s in row["scores"]]
            chosen_gap = min(gaps)
            chosen = [s for s in row["scores"] if s["pattern"] == row["pattern"]]
            assert chosen and chosen[0]["expected_gap"] == chosen_gap


class TestPolicyCli:
    def test_eval_oracle_csv(self, runner, tmp_path):
        out = tmp_path / "oracle.csv"
        result = invoke(runner, ["policy", "eval", "--synth", SYNTH, "--strategy", "oracle",
                                 "--start", "10", "--days", "30", "--out", str(out)])
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "day,d_ai,close"
        assert len(lines) == 31
        assert "episode profit" in result.output

    def test_train_rl_and_eval(self, runner, tmp_path):
        out = tmp_path / "policy.json"
        invoke(runner, ["policy", "train-rl", "--synth", SYNTH,
                        "--calibrated", "seed=9,target_accuracy=0.9,confidence=0.8",
                        "--train-start", "5", "--train-end", "40",
                        "--episodes", "5", "--out", str(out)])
        invoke(runner, ["policy", "eval", "--synth", SYNTH, "--strategy", "rl",
                        "--model", str(out), "--calibrated", "seed=9,target_accuracy=0.9",
                        "--start", "50", "--days", "20", "--out", str(tmp_path / "rl.csv")])


class TestExperimentCli:
    def test_run_and_usermodel_train(self, runner, tmp_path):
        config = {
            "master_seed": 77,
            "series": {"synth": {"seed": 55, "days": 120, "regime": "random_walk",
                                  "volatility": 0.015, "start_price": 1800}},
            "predictor": {"calibrated": {"seed": 66, "target_accuracy": 0.6, "confidence": 0.6}},
            "window": {"start": 10, "length": 45},
            "corpus": {"generate": {"seed": 1}},
            "strategies": [{"id": "roulette", "kind": "roulette", "policy": {"kind": "oracle"}}],
            "population": {"groups": [{"kind": "susceptible", "count": 3, "beta": 0.7}]},
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        out_dir = tmp_path / "out"
        result = invoke(runner, ["experiment", "run", "--config", str(config_path),
                                 "--out", str(out_dir)])
        assert "roulette: n=3" in result.output
        assert (out_dir / "summaries.json").exists()
        assert (out_dir / "report" / "comparison.csv").exists()

        model_path = tmp_path / "model.json"
        invoke(runner, ["usermodel", "train", "--logs", str(out_dir / "logs"),
                        "--epochs", "3", "--out", str(model_path)])
        result = invoke(runner, ["usermodel", "eval", "--logs", str(out_dir / "logs"),
                                 "--model", str(model_path)])
        assert "cross-entropy" in result.output
