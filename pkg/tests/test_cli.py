import json
from pathlib import Path

import numpy as np
import pytest

from emaudit.cli import main
from emaudit.config import ConfigError, ExperimentConfig, plan_corpus

BASE_CFG = {
    "name": "cli_test",
    "seed": 21,
    "corpus": {
        "skills": [
            {"preset": "cpu_heavy", "duration_s": 2.0},
            {"preset": "ram_heavy", "duration_s": 2.0},
            {"preset": "idle", "duration_s": 2.0},
        ],
        "cycles": 3,
        "records_per_skill_per_cycle": 2,
        "sample_rate": 200_000.0,
        "attacks": {"enabled": True, "victim_skills": ["ram_heavy"],
                    "payload_duration_s": 0.8, "records_per_cycle": 1},
    },
    "forest": {"n_trees": 20},
    "drift": {"k_sel": 30},
}


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg_path = tmp / "config.json"
    cfg_path.write_text(json.dumps(BASE_CFG))
    root = tmp / "exp"
    assert main(["--config", str(cfg_path), "--root", str(root), "--threads", "2",
                 "simulate"]) == 0
    assert main(["--config", str(cfg_path), "--root", str(root), "--threads", "2",
                 "extract"]) == 0
    return cfg_path, root


def test_simulate_record_count_contract(experiment):
    _, root = experiment
    manifest = json.loads((root / "corpus" / "manifest.json").read_text())
    # 3 skills x 2 records x 3 cycles benign + 1 attack record per cycle
    assert len(manifest["records"]) == 3 * 2 * 3 + 3
    labels = [e["label"] for e in manifest["records"]]
    assert labels.count("attack") == 3
    assert labels.count("background") == 6


def test_config_hash_embedded_everywhere(experiment):
    cfg_path, root = experiment
    cfg = ExperimentConfig.from_file(cfg_path)
    manifest = json.loads((root / "corpus" / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.config_hash()


def test_full_chain_emits_per_fold_macro_f1(experiment):
    cfg_path, root = experiment
    assert main(["--config", str(cfg_path), "--root", str(root), "evaluate",
                 "--stage", "1"]) == 0
    agg = json.loads((root / "eval" / "aggregate_stage1.json").read_text())
    assert len(agg["per_fold_macro_f1"]) == 3
    assert all(0.0 <= v <= 1.0 for v in agg["per_fold_macro_f1"].values())
    assert main(["--config", str(cfg_path), "--root", str(root), "report",
                 "--stage", "1"]) == 0
    metrics = json.loads((root / "report" / "metrics_stage1.json").read_text())
    assert set(metrics["classes"]) == {"cpu_heavy", "ram_heavy", "idle"}


def test_stage2_chain_writes_roc_and_verdicts(experiment):
    cfg_path, root = experiment
    assert main(["--config", str(cfg_path), "--root", str(root), "evaluate",
                 "--stage", "2"]) == 0
    assert main(["--config", str(cfg_path), "--root", str(root), "report",
                 "--stage", "2"]) == 0
    metrics = json.loads((root / "report" / "metrics_stage2.json").read_text())
    assert "roc_auc" in metrics and 0.0 <= metrics["roc_auc"] <= 1.0
    assert (root / "report" / "roc_points.csv").exists()
    assert (root / "report" / "reliability_bins.csv").exists()
    verdicts = [json.loads(l) for l in (root / "verdicts.jsonl").read_text().splitlines()]
    assert all(v["v"] in ("benign", "hijacked") for v in verdicts)


def test_train_writes_models(experiment):
    cfg_path, root = experiment
    assert main(["--config", str(cfg_path), "--root", str(root), "train",
                 "--stage", "1"]) == 0
    assert (root / "models" / "drift_stage1.json").exists()
    assert (root / "models" / "forest_stage1.bin").exists()


def test_verify_identity_is_benign(experiment, tmp_path):
    cfg_path, root = experiment
    a = tmp_path / "intended.json"
    b = tmp_path / "recovered.json"
    a.write_text(json.dumps({"alphabet": ["x", "y"], "sequence": ["x", "y", "x"]}))
    b.write_text(json.dumps({"sequence": ["x", "y", "x"]}))
    assert main(["--config", str(cfg_path), "--root", str(root), "verify",
                 "--intended", str(a), "--recovered", str(b)]) == 0
    result = json.loads((root / "verify_result.json").read_text())
    assert result["distance"] == 0.0 and result["decision"] == "benign"


def test_error_is_machine_readable(tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({"name": "x", "seed": 1}))  # missing corpus
    rc = main(["--config", str(cfg_path), "--root", str(tmp_path / "r"), "simulate"])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"


def test_schema_rejects_unknown_keys(tmp_path):
    bad = dict(BASE_CFG)
    bad["surprise"] = 1
    with pytest.raises(ConfigError, match="schema"):
        ExperimentConfig.from_dict(bad)


def test_plan_is_deterministic():
    cfg = ExperimentConfig.from_dict(BASE_CFG)
    a = plan_corpus(cfg)
    b = plan_corpus(cfg)
    assert [(p.record_id, p.seed) for p in a] == [(p.record_id, p.seed) for p in b]


def test_missing_input_reports_kind(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(BASE_CFG))
    rc = main(["--config", str(cfg_path), "--root", str(tmp_path / "empty"), "report",
               "--stage", "1"])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["kind"] == "missing_input"


def test_lock_file_blocks_concurrent_use(experiment, capsys):
    cfg_path, root = experiment
    (root / ".lock").write_text("12345")
    try:
        rc = main(["--config", str(cfg_path), "--root", str(root), "simulate"])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["kind"] == "locked"
    finally:
        (root / ".lock").unlink()
