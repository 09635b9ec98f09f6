import json
from pathlib import Path

import pytest

from calab.cli import main


@pytest.fixture()
def workspace(tmp_path):
    config = {
        "datasets": [
            {
                "id": "moons",
                "generate": {"name": "two_moons", "n": 120, "noise": 0.1, "seed": 1},
            }
        ],
        "methods": [
            {"id": "rbf-us", "model": "svm-rbf", "strategy": "us"},
            {"id": "rwm-4ds", "model": "svm-rwm", "strategy": "4ds"},
        ],
        "folds": 4,
        "run_folds": [0, 1],
        "seeds": [0],
        "learner": {"q": 1, "n_init": 4, "max_cycles": 5, "j_max": 6},
        "oracles": [{"id": "truth", "kind": "truth"}],
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    return tmp_path, cfg_path


def test_run_produces_records_and_manifest(workspace, monkeypatch):
    tmp_path, cfg_path = workspace
    out = tmp_path / "results"
    monkeypatch.delenv("CAL_LAB_OUT", raising=False)
    code = main(["run", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    files = sorted(p.name for p in out.glob("*.jsonl"))
    assert files == [
        "moons_rbf-us_0_0.jsonl",
        "moons_rbf-us_1_0.jsonl",
        "moons_rwm-4ds_0_0.jsonl",
        "moons_rwm-4ds_1_0.jsonl",
    ]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["format"] == "manifest-v1"
    assert all(r["status"] == "ok" for r in manifest["runs"])
    assert len(manifest["runs"]) == 4


def test_rerun_is_idempotent_and_force_rewrites(workspace, monkeypatch, capsys):
    tmp_path, cfg_path = workspace
    out = tmp_path / "results"
    monkeypatch.delenv("CAL_LAB_OUT", raising=False)
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    capsys.readouterr()
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    assert "0 run(s) executed" in capsys.readouterr().out


def test_parallel_matches_serial(workspace, monkeypatch):
    tmp_path, cfg_path = workspace
    monkeypatch.delenv("CAL_LAB_OUT", raising=False)
    out1, out2 = tmp_path / "serial", tmp_path / "parallel"
    assert main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(out2), "--parallel", "4"]) == 0
    for p1 in sorted(out1.glob("*.jsonl")):
        p2 = out2 / p1.name
        assert p1.read_text() == p2.read_text()


def test_env_var_overrides_out(workspace, monkeypatch):
    tmp_path, cfg_path = workspace
    env_out = tmp_path / "env_results"
    monkeypatch.setenv("CAL_LAB_OUT", str(env_out))
    main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "ignored")])
    assert list(env_out.glob("*.jsonl"))
    assert not (tmp_path / "ignored").exists()


def test_malformed_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"datasets\": []}")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err


def test_partial_failure_exits_two_and_lists_in_manifest(tmp_path, monkeypatch, capsys):
    config = {
        "datasets": [
            {"id": "ok", "generate": {"name": "blobs", "n_per": 20, "seed": 0}},
            {"id": "broken", "csv": "missing.csv", "schema": "missing.json"},
        ],
        "methods": [{"id": "cmm", "model": "cmm", "strategy": "us"}],
        "folds": 2,
        "seeds": [0],
        "learner": {"q": 1, "n_init": 2, "max_cycles": 2, "j_max": 3},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    monkeypatch.delenv("CAL_LAB_OUT", raising=False)
    out = tmp_path / "results"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    statuses = {r["file"]: r["status"] for r in manifest["runs"]}
    assert "failed" in statuses.values() and "ok" in statuses.values()


def test_verify_detects_tampering(workspace, monkeypatch, capsys):
    tmp_path, cfg_path = workspace
    out = tmp_path / "results"
    monkeypatch.delenv("CAL_LAB_OUT", raising=False)
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    assert main(["verify", "--results", str(out)]) == 0
    victim = next(out.glob("*.jsonl"))
    victim.write_text(victim.read_text() + "\n")
    assert main(["verify", "--results", str(out)]) == 2
    assert "hash mismatch" in capsys.readouterr().out


def test_eval_writes_reports(workspace, monkeypatch, capsys):
    tmp_path, cfg_path = workspace
    out = tmp_path / "results"
    monkeypatch.delenv("CAL_LAB_OUT", raising=False)
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    code = main(["eval", "--results", str(out), "--baseline", "rbf-us", "--alpha", "0.05"])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["format"] == "report-v1"
    assert report["baseline"] == "rbf-us"
    baseline_metrics = next(m for m in report["metrics"] if m["method"] == "rbf-us")
    assert baseline_metrics["aulc"] == pytest.approx(0.0)
    assert baseline_metrics["dur"] == pytest.approx(1.0)
    assert (out / "report.txt").exists()
    text = (out / "report.txt").read_text()
    assert "AULC" in text


def test_viz_emits_grid_and_history(workspace, monkeypatch):
    tmp_path, cfg_path = workspace
    out = tmp_path / "results"
    monkeypatch.delenv("CAL_LAB_OUT", raising=False)
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    run_file = out / "moons_rwm-4ds_0_0.jsonl"
    assert main(["viz", "--run", str(run_file), "--resolution", "24"]) == 0
    viz = json.loads(run_file.with_suffix(".viz.json").read_text())
    assert viz["format"] == "viz-v1"
    assert len(viz["grid"]["x"]) == 24
    assert len(viz["ellipses"]) >= 1
    assert viz["history"][0]["initial"] is True
    # grid decision values sign-consistent with predicted classes (binary)
    import numpy as np

    values = np.array(viz["grid"]["values"])
    predicted = np.array(viz["predicted"])
    pos = values > 0
    assert np.all(predicted[pos] == predicted[pos][0])


def test_datagen_writes_loadable_csv(tmp_path):
    out = tmp_path / "data"
    assert main(["datagen", "--name", "two_moons", "--n", "50", "--out", str(out), "--seed", "3"]) == 0
    from calab.data import load_dataset

    d = load_dataset(out / "two_moons.csv", out / "two_moons.schema.json")
    assert len(d) == 50
