import csv
import json

import pytest

from causpref.cli import ExperimentConfig, UsageError, main

CONFIG = {
    "synthetic": {"n_users": 200, "n_items": 60, "n_interactions": 600},
    "split": {"kind": "region_bias", "train_region": "train", "test_region": "test"},
    "train": {"max_epochs": 2, "warmup_steps": 10, "batch_size": 128},
    "eval": {"ks": [5, 10]},
    "variants": ["causpref", "neumf"],
}


def _run(tmp_path, cmd, cfg=None, extra=()):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg or CONFIG))
    return main([cmd, "--config", str(path), "--out", str(tmp_path / "out"), *extra])


def test_pipeline(tmp_path):
    for cmd in ("synth", "split", "train", "eval", "export-dag"):
        assert _run(tmp_path, cmd) == 0, cmd
    out = tmp_path / "out"
    for name in ("dataset.json", "truth_edges.csv", "split.json", "model_causpref.json",
                 "model_neumf.json", "trainlog_causpref.csv", "metrics.csv", "dag.dot",
                 "dag_edges.csv", "synth.resolved.json"):
        assert (out / name).exists(), name
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert len(rows) == 2 * 2 * 2
    assert {r["setting"] for r in rows} == {"region_bias"}
    assert all(0.0 <= float(r["value"]) <= 1.0 for r in rows)


def _snapshot(out):
    snap = {}
    for p in out.iterdir():
        data = p.read_bytes()
        if p.name.startswith("trainlog_"):
            # the last column is wall-clock time
            data = b"\n".join(line.rsplit(b",", 1)[0] for line in data.splitlines())
        snap[p.name] = data
    return snap


def test_idempotent_outputs(tmp_path):
    for cmd in ("synth", "split", "train", "eval"):
        _run(tmp_path, cmd)
    first = _snapshot(tmp_path / "out")
    for cmd in ("synth", "split", "train", "eval"):
        _run(tmp_path, cmd)
    assert _snapshot(tmp_path / "out") == first


def test_exit_codes(tmp_path, capsys):
    assert main(["bogus"]) == 1
    assert main([]) == 1
    assert _run(tmp_path, "synth", {**CONFIG, "nope": 1}) == 1
    assert _run(tmp_path, "synth", {**CONFIG, "variants": ["other"]}) == 1
    assert _run(tmp_path, "train") == 2              # no dataset yet
    assert main(["synth", "--config", str(tmp_path / "missing.json")]) == 1
    bad = {**CONFIG, "synthetic": {"edge_density": 1.5}}
    assert _run(tmp_path, "synth", bad) == 2
    assert "data error" in capsys.readouterr().err


def test_seed_override_is_echoed(tmp_path):
    assert _run(tmp_path, "synth", extra=("--seed", "7")) == 0
    echo = json.loads((tmp_path / "out" / "synth.resolved.json").read_text())
    assert echo["seed"] == 7 and echo["config"]["variants"] == ["causpref", "neumf"]


def test_sweep_cardinality(tmp_path):
    cfg = {**CONFIG, "split": {"kind": "user_feature_bias"}, "seeds": [0, 1, 2],
           "sweep_ratios": [[0.8, 0.2], [0.5, 0.5]], "train": {**CONFIG["train"], "max_epochs": 1}}
    assert _run(tmp_path, "synth", cfg) == 0
    assert _run(tmp_path, "sweep", cfg) == 0
    rows = list(csv.DictReader((tmp_path / "out" / "sweep_metrics.csv").open()))
    ndcg10 = [r for r in rows if r["metric"] == "ndcg" and r["K"] == "10"]
    assert len(ndcg10) == 3 * 2 * 2
    assert {r["setting"] for r in rows} == {"user_feature_bias:0.8-0.2", "user_feature_bias:0.5-0.5"}


def test_config_validation():
    with pytest.raises(UsageError):
        ExperimentConfig.from_dict({"seeds": []})
    with pytest.raises(UsageError):
        ExperimentConfig.from_dict({"dag_hyper": {"gamma": 1}})
    assert ExperimentConfig.from_dict({}).variants == ["causpref"]
