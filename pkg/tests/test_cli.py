import json

import pytest

from twinsight.cli import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    echo_config,
    main,
    parse_config,
    partition_stats,
    run_experiment,
)

TINY = {
    "dataset": {"n_train": 300, "n_test": 80, "classes": 3, "dim": 4, "spread": 0.5},
    "clients": 4, "alpha": 0.5, "rounds": 2, "batch_size": 16, "hidden": [8], "proj_dim": 4,
    "seeds": [0, 1],
}


def write_cfg(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(json.dumps(raw), encoding="utf-8")
    return p


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("", encoding="utf-8")
    cfg = parse_config(p)
    assert cfg == ExperimentConfig()


def test_defaults_mirror_reference_regime():
    cfg = ExperimentConfig()
    assert (cfg.gamma, cfg.clients, cfg.sample_rate, cfg.alpha) == (0.1, 10, 0.5, 0.6)
    assert (cfg.lr, cfg.momentum, cfg.weight_decay, cfg.batch_size) == (0.01, 0.9, 1e-4, 64)


@pytest.mark.parametrize("raw, key", [
    ({"alpha": 0.55}, "alpha"),
    ({"bogus": 1}, "bogus"),
    ({"hyper": {"temprature": 0.5}}, "hyper.temprature"),
    ({"rounds": "ten"}, "rounds"),
    ({"rounds": 0}, "rounds"),
    ({"gamma": -1.0}, "gamma"),
    ({"seeds": []}, "seeds"),
    ({"sample_rate": 1.5}, "sample_rate"),
    ({"methods": ["fedprox"]}, "methods"),
    ({"hyper": {"threshold": 1.0}}, "hyper"),
    ({"alpha": None, "labeled_ratio": None}, "alpha"),
])
def test_validation_names_offending_key(raw, key):
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.key == key


def test_echo_roundtrip(tmp_path):
    cfg = config_from_dict({**TINY, "hyper": {"lambda_d": 2.5}, "labeled_ratio": 0.1, "alpha": None})
    echo_config(cfg, tmp_path / "echo.json")
    assert parse_config(tmp_path / "echo.json") == cfg


def test_run_writes_artifacts(tmp_path):
    cfg = config_from_dict({**TINY, "rounds": 1, "seeds": [3], "methods": ["twin_sight"]})
    summary = run_experiment(cfg, tmp_path / "out")
    lines = (tmp_path / "out" / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 2
    assert set(summary) == {"twin_sight"}
    assert summary["twin_sight"]["rounds_to_target"] == "None"  # no lower bound, no target
    assert parse_config(tmp_path / "out" / "config.json") == cfg


def test_row_count_and_summary(tmp_path):
    cfg = config_from_dict(TINY)
    summary = run_experiment(cfg, tmp_path / "o")
    rows = (tmp_path / "o" / "metrics.csv").read_text(encoding="utf-8").splitlines()[1:]
    assert len(rows) == cfg.rounds * len(cfg.methods) * len(cfg.seeds)
    saved = json.loads((tmp_path / "o" / "summary.json").read_text(encoding="utf-8"))
    assert saved == json.loads(json.dumps(summary))
    for entry in saved.values():
        assert set(entry) >= {"final_acc_mean", "final_acc_std", "rounds_to_target"}
        assert entry["rounds_to_target"] == "None" or isinstance(entry["rounds_to_target"], int)
    # the lower bound always reaches its own final mean at the latest by the last round
    assert isinstance(saved["fedavg_lower"]["rounds_to_target"], int)


def test_reproducible_csv_bytes(tmp_path):
    p = write_cfg(tmp_path, {**TINY, "rounds": 3})
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "a"), "--reproducible"]) == 0
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "b"), "--reproducible",
                 "--workers", "3"]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    p = write_cfg(tmp_path, {"alpha": 0.55})
    assert main(["run", "--config", str(p)]) == 2
    assert "alpha" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path):
    raw = json.dumps({**TINY, "methods": ["fedavg_lower"], "seeds": [0]})
    p = tmp_path / "blowup.yaml"
    p.write_text(raw[:-1] + ', "lr": 1.0e+200}', encoding="utf-8")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "x")]) == 3


def test_partition_stats(tmp_path, capsys):
    p = write_cfg(tmp_path, TINY)
    assert main(["partition-stats", "--config", str(p)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split("\t") == ["client", "designation", "n", "c0", "c1", "c2"]
    assert len(out) == 1 + TINY["clients"]
    assert sum(int(line.split("\t")[2]) for line in out[1:]) == TINY["dataset"]["n_train"]


def test_csv_dataset(tmp_path):
    from twinsight.data import blobs_split, save_csv
    tr, te = blobs_split(120, 40, 3, 4, 0.5, 0)
    save_csv(tr, tmp_path / "train.csv")
    save_csv(te, tmp_path / "test.csv")
    cfg = config_from_dict({**TINY, "rounds": 1, "seeds": [0], "methods": ["fedavg_pseudo"],
                            "dataset": {"kind": "csv", "train_path": str(tmp_path / "train.csv"),
                                        "test_path": str(tmp_path / "test.csv")}})
    summary = run_experiment(cfg, tmp_path / "csvrun")
    assert 0.0 <= summary["fedavg_pseudo"]["final_acc_mean"] <= 1.0
