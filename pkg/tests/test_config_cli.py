from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from riskgate import io
from riskgate.cli import EXIT_CALIBRATION, EXIT_CONFIG, EXIT_DATA, main
from riskgate.config import PARTITIONS, assign_days, load_config, split_dataset
from riskgate.errors import ConfigurationError, DataError
from riskgate.synth import GeneratorConfig, ScoredSample, generate_dataset

SPLITS = {"train": 0.5, "validation": 0.2, "calibration": 0.2, "test": 0.1}


# --------------------------------------------------------------------------
# configuration

def test_defaults_validate():
    cfg = load_config(env={})
    assert cfg.risk.alpha == 0.1 and cfg.risk.delta == 0.1
    assert sum(cfg.splits.values()) == pytest.approx(1.0)


def test_layering(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 5, "risk": {"alpha": 0.2}}))
    cfg = load_config(path, {"risk.delta": 0.05}, env={})
    assert (cfg.seed, cfg.risk.alpha, cfg.risk.delta) == (5, 0.2, 0.05)
    cfg = load_config(path, env={"RISKGATE_SEED": "9"})
    assert cfg.seed == 9


def test_preset():
    cfg = load_config(preset="hard-overlap", env={})
    assert cfg.generator.anomaly_magnitude == 1.5
    with pytest.raises(ConfigurationError):
        load_config(preset="nope", env={})


@pytest.mark.parametrize("overrides", [
    {"splits.test": 0.2},
    {"splits.test": 0.0, "splits.train": 0.6},
    {"bogus": 1},
    {"risk.alpha": 1.5},
    {"method": "magic"},
    {"generator.contamination": 0.9},
])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigurationError):
        load_config(overrides=overrides, env={})


def test_bad_config_files(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json", env={})
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigurationError):
        load_config(bad, env={})


# --------------------------------------------------------------------------
# splitting

def test_split_counts_on_100_days():
    parts = assign_days(range(100), SPLITS, seed=0)
    assert [parts[p].size for p in PARTITIONS] == [50, 20, 20, 10]


def test_split_is_deterministic_and_disjoint():
    a = assign_days(range(37), SPLITS, seed=3)
    b = assign_days(range(37), SPLITS, seed=3)
    for p in PARTITIONS:
        np.testing.assert_array_equal(a[p], b[p])
    days = np.concatenate([a[p] for p in PARTITIONS])
    assert sorted(days.tolist()) == list(range(37))


def test_split_too_few_days():
    with pytest.raises(DataError):
        assign_days(range(3), SPLITS, seed=0)


def test_split_dataset_cleans_training():
    data = generate_dataset(GeneratorConfig(seed=1, n_days=10))
    parts = split_dataset(data, SPLITS, seed=1)
    assert all(s.label is None and s.anomaly_kind is None for s in parts["train"])
    held = {p: {s.day_id for s in parts[p]} for p in PARTITIONS}
    for i, p in enumerate(PARTITIONS):
        for q in PARTITIONS[i + 1:]:
            assert not held[p] & held[q]
    n_train_days = len(held["train"])
    assert len(parts["train"]) == sum(1 for s in data if s.day_id in held["train"] and s.label == 0)
    assert n_train_days == 5


# --------------------------------------------------------------------------
# persistence

def test_sample_round_trip(tmp_path):
    data = generate_dataset(GeneratorConfig(seed=2, n_days=1))
    io.write_samples(tmp_path / "d.jsonl", data)
    assert io.read_samples(tmp_path / "d.jsonl") == data
    first = json.loads((tmp_path / "d.jsonl").read_text().splitlines()[0])
    assert set(first) == {"timestamp", "day_id", "features", "label", "anomaly_kind", "score"}


def test_malformed_records(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"timestamp": 1}\n')
    with pytest.raises(DataError):
        io.read_samples(p)
    p.write_text("not json\n")
    with pytest.raises(DataError):
        io.read_samples(p)
    with pytest.raises(DataError):
        io.sample_from_dict({"timestamp": 0, "day_id": 0, "features": [0.1], "label": 2})


# --------------------------------------------------------------------------
# CLI

@pytest.fixture
def small(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("RISKGATE_SEED", raising=False)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 4, "generator": {"n_days": 20}, "scorer": {"d_t": 16}}))
    return tmp_path, ["--config", str(cfg)]


def run(*argv):
    return main([str(a) for a in argv])


def test_pipeline_small(small):
    tmp, c = small
    assert run("simulate", *c) == 0
    assert run("fit-scorer", *c) == 0
    assert run("score", *c, "--score", "l") == 0
    scored = io.read_samples(tmp / "scored.jsonl")
    assert all(s.score_kind == "l" and s.score >= 0 for s in scored)
    assert run("calibrate", *c, "--alpha", 0.1, "--delta", 0.1) == 0
    doc = json.loads((tmp / "thresholds.json").read_text())
    assert doc["alpha"] == 0.1 and doc["delta"] == 0.1
    assert {"chosen", "fallback_used", "grid_size", "feasible_count", "diagnostics"} <= set(doc)
    assert run("decide", *c) == 0
    decisions = [json.loads(line)["decision"] for line in (tmp / "decisions.jsonl").read_text().splitlines()]
    assert set(decisions) <= {"normal", "anomalous", "abstain"}
    assert len(decisions) == len(scored)
    assert run("evaluate", *c) == 0
    report = json.loads((tmp / "report.json").read_text())
    assert report["partition"] == "test"
    for key in ("fpr", "fnr", "f1", "gmean", "abstention_rate", "auroc", "aupr"):
        assert 0.0 <= report[key] <= 1.0


@pytest.mark.parametrize("method", ["f1", "gmean", "zscore"])
def test_baseline_calibration(small, method):
    tmp, c = small
    for cmd in ("simulate", "fit-scorer", "score"):
        assert run(cmd, *c) == 0
    assert run("calibrate", *c, "--method", method) == 0
    doc = json.loads((tmp / "thresholds.json").read_text())
    assert doc["method"] == method and "lambda" in doc
    assert ("k" in doc) == (method == "zscore")
    assert run("decide", *c) == 0
    decisions = {json.loads(line)["decision"] for line in (tmp / "decisions.jsonl").read_text().splitlines()}
    assert "abstain" not in decisions


def test_simulate_is_deterministic(small):
    tmp, c = small
    assert run("simulate", *c, "--out", "a.jsonl") == 0
    assert run("simulate", *c, "--out", "b.jsonl") == 0
    assert (tmp / "a.jsonl").read_bytes() == (tmp / "b.jsonl").read_bytes()


def test_dotted_overrides(small):
    tmp, c = small
    assert run("simulate", *c, "--generator.n_days", 12, "--out", "x.jsonl") == 0
    assert len({s.day_id for s in io.read_samples(tmp / "x.jsonl")}) == 12
    assert run("simulate", *c, "--generator.n_days=8", "--out", "y.jsonl") == 0
    assert len({s.day_id for s in io.read_samples(tmp / "y.jsonl")}) == 8


def test_exit_codes(small, capsys):
    tmp, c = small
    assert run("simulate", *c, "--risk.alpha", 3) == EXIT_CONFIG
    assert run("simulate", *c, "--bogus") == EXIT_CONFIG
    assert run("score", *c) == EXIT_CONFIG  # inputs missing
    (tmp / "data.jsonl").write_text("garbage\n")
    (tmp / "model.json").write_text("{}")
    assert run("fit-scorer", *c) == EXIT_DATA
    err = capsys.readouterr().err.strip().splitlines()
    assert err and all(line.startswith("riskgate:") for line in err)


def test_calibration_error_exit(small):
    tmp, c = small
    rows = [ScoredSample(d * 1440.0 + i, d, (0.5,), 0, None, 1.0) for d in range(20) for i in range(5)]
    io.write_samples(tmp / "scored.jsonl", rows)
    assert run("calibrate", *c, "--method", "zscore") == EXIT_CALIBRATION


def test_fallback_is_success_with_warning(small, capsys):
    tmp, c = small
    rng = np.random.default_rng(0)
    rows = [ScoredSample(d * 1440.0 + i, d, (0.5,), int(i == 0), None, float(rng.normal())) for d in range(20) for i in range(2)]
    io.write_samples(tmp / "scored.jsonl", rows)
    assert run("calibrate", *c, "--alpha", 0.01, "--delta", 0.01) == 0
    doc = json.loads((tmp / "thresholds.json").read_text())
    assert doc["fallback_used"] and doc["chosen"] == {"lo": "-inf", "hi": "+inf"}
    assert "warning" in capsys.readouterr().err
    assert run("decide", *c) == 0
    decisions = {json.loads(line)["decision"] for line in (tmp / "decisions.jsonl").read_text().splitlines()}
    assert decisions == {"abstain"}


def test_deploy_sim_outputs(small):
    tmp, c = small
    assert run("deploy-sim", *c, "--months", 1, "--deploy.train_days", 10) == 0
    windows = [json.loads(line) for line in (tmp / "windows.jsonl").read_text().splitlines()]
    assert len(windows) == 1
    with open(tmp / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["window_id", "risk", "fpr", "fnr", "f1", "abstention_rate", "auroc", "aupr"]
    assert len(rows) == 2


def test_mc_validate_cli(small):
    tmp, c = small
    over = ["--mc.pool_size", 3000, "--mc.holdout_size", 3000, "--mc.train_days", 10,
            "--mc.n_calibration", 300, "--mc.n_validation", 300]
    assert run("mc-validate", *c, "--replications", 100, *over, "--no-rows") == 0
    doc = json.loads((tmp / "report.json").read_text())
    assert doc["replications"] == 100 and "rows" not in doc
    assert run("mc-validate", *c, "--replications", 10) == EXIT_CONFIG
