import json
import time
from pathlib import Path

import numpy as np
import pytest

from mcsloc import pipeline
from mcsloc.cli import main
from mcsloc.config import ExperimentConfig, config_from_dict, default_config_dict, load_config
from mcsloc.dataset import Manifest, build_splits, load_windows, read_recording
from mcsloc.errors import ConfigError
from mcsloc.evaluation import read_csv
from mcsloc.optim import evaluate, read_history_csv
from mcsloc.tcn import load_checkpoint

TINY = {
    "dataset": {"mcs_values": [8, 16], "sinr_grid_db": [10.0, 20.0], "files_per_tuple": 2,
                "samples_per_file": 8192, "windows_per_recording": 12, "window_len": 256},
    "network": {"kernel_size": 3, "n_filters": 6, "n_blocks": 2, "hidden_width": 8, "n_classes": 2},
    "train": {"epochs": 2, "batch_size": 8},
    "localization": {"trials_per_tile": 1, "obs_per_trial": 3, "survey_obs_per_tile": 40},
}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def files_of(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfig:
    def test_default_round_trip(self):
        cfg = ExperimentConfig()
        assert config_from_dict(cfg.to_dict()) == cfg
        assert cfg.digest() == config_from_dict(json.loads(json.dumps(cfg.to_dict()))).digest()

    def test_print_default(self, capsys):
        assert main(["--print-default-config"]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed == default_config_dict()
        assert printed["network"]["dilations"] == [2, 4, 8, 16, 32, 64, 128, 256]
        assert printed["dataset"]["samples_per_file"] == 523776

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="dataset.bogus"):
            config_from_dict({"dataset": {"bogus": 1}})

    def test_class_mismatch(self):
        with pytest.raises(ConfigError):
            config_from_dict({"dataset": {"mcs_values": [8, 9]}})

    def test_depth_override_rederives_dilations(self):
        cfg = config_from_dict({"network": {"n_blocks": 3}})
        assert cfg.network.dilations == (2, 4, 8)

    def test_seed_override(self, tiny_config):
        assert load_config(tiny_config, seed=99).seed == 99
        assert load_config(tiny_config).digest() != load_config(tiny_config, seed=99).digest()

    def test_default_recording_count(self):
        metas = pipeline.recording_metas(ExperimentConfig())
        assert len(metas) == 1890
        train, val = build_splits(metas, ExperimentConfig().dataset)
        assert (len(train), len(val)) == (1701, 189)


class TestExitCodes:
    def test_bad_config_writes_nothing(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"epochs": 0}}))
        assert main(["gen-dataset", "--config", str(bad), "--out", str(tmp_path / "ws")]) == 2
        assert not (tmp_path / "ws").exists()
        assert main(["gen-dataset", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2

    def test_missing_dataset_is_format_error(self, tmp_path, tiny_config):
        assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "ws")]) == 3

    def test_missing_checkpoint_is_format_error(self, tmp_path, tiny_config):
        assert main(["simulate-locate", "--config", str(tiny_config), "--out", str(tmp_path / "ws")]) == 3

    def test_divergence_exit_code(self, tmp_path):
        cfg = dict(TINY, schedule={"max_lr": 1e30}, optimizer={"weight_decay": 0.0})
        p = tmp_path / "hot.json"
        p.write_text(json.dumps(cfg))
        ws = tmp_path / "ws"
        assert main(["gen-dataset", "--config", str(p), "--out", str(ws)]) == 0
        assert main(["train", "--config", str(p), "--out", str(ws)]) == 4

    def test_no_command(self):
        assert main([]) == 2

    def test_class_mismatch_between_checkpoint_and_dataset(self, tmp_path, tiny_config):
        ws = tmp_path / "ws"
        assert main(["gen-dataset", "--config", str(tiny_config), "--out", str(ws)]) == 0
        assert main(["train", "--config", str(tiny_config), "--out", str(ws)]) == 0
        three = dict(TINY, dataset=dict(TINY["dataset"], mcs_values=[8, 12, 16]),
                     network=dict(TINY["network"], n_classes=3))
        p = tmp_path / "three.json"
        p.write_text(json.dumps(three))
        assert main(["gen-dataset", "--config", str(p), "--out", str(tmp_path / "ws3")]) == 0
        assert main(["eval-mcs", "--config", str(p), "--out", str(tmp_path / "ws3"),
                     "--checkpoint", str(ws / "model" / "model.ckpt")]) == 2


def test_single_full_length_recording(tmp_path):
    cfg = config_from_dict({"dataset": {"mcs_values": [8], "sinr_grid_db": [10.0], "files_per_tuple": 1,
                                        "val_files_per_tuple": 0},
                            "network": {"n_classes": 1}})
    m = pipeline.cmd_gen_dataset(cfg, tmp_path / "ds")
    assert len(m.recordings) == 1
    name, meta = m.recordings[0]
    x, back = read_recording(tmp_path / "ds" / name)
    assert len(x) == 523776 and back == meta
    assert (tmp_path / "ds" / name).stat().st_size == 4_190_208
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ds"]


def test_regenerate_overwrites_identically(tmp_path, tiny_config):
    cfg = load_config(tiny_config)
    pipeline.cmd_gen_dataset(cfg, tmp_path / "ds")
    first = files_of(tmp_path / "ds")
    pipeline.cmd_gen_dataset(cfg, tmp_path / "ds")
    assert files_of(tmp_path / "ds") == first
    assert len(first) == 2 * 2 * 2 * 2 + 1


def test_refuses_to_replace_foreign_directory(tmp_path, tiny_config):
    (tmp_path / "ds").mkdir()
    (tmp_path / "ds" / "notes.txt").write_text("keep me")
    assert main(["gen-dataset", "--config", str(tiny_config), "--out", str(tmp_path)]) == 0  # writes tmp/dataset
    with pytest.raises(Exception):
        pipeline.cmd_gen_dataset(load_config(tiny_config), tmp_path / "ds")
    assert (tmp_path / "ds" / "notes.txt").read_text() == "keep me"
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_pipeline_outputs_and_consistency(tmp_path, tiny_config):
    ws = tmp_path / "ws"
    args = ["--config", str(tiny_config), "--out", str(ws)]
    for cmd in ("gen-dataset", "train", "eval-mcs", "simulate-locate", "report"):
        assert main([cmd, *args]) == 0, cmd

    hist = read_history_csv(ws / "model" / "history.csv")
    assert len(hist) == TINY["train"]["epochs"]

    ev = json.loads((ws / "eval" / "eval.json").read_text())
    cm = read_csv(ws / "eval" / "mcs_confusion.csv")
    assert list(cm.labels) == [8, 16]
    assert ev["accuracy"] == np.trace(cm.counts) / cm.counts.sum()

    # reloaded checkpoint reproduces the end-of-training validation accuracy
    man = Manifest.read(ws / "dataset" / "manifest.json")
    _, val = build_splits([m for _, m in man.recordings], man.spec)
    xv, yv, _ = load_windows(ws / "dataset", val, man.spec)
    assert evaluate(load_checkpoint(ws / "model" / "model.ckpt"), xv, yv)[1] == hist[-1].val_accuracy

    loc = json.loads((ws / "locate" / "locate.json").read_text())
    assert read_csv(ws / "locate" / "tile_confusion.csv").counts.shape == (54, 54)
    assert read_csv(ws / "locate" / "merged_confusion.csv").counts.shape == (15, 15)
    assert loc["merged_exact_accuracy"] >= loc["exact_accuracy"]
    assert json.loads((ws / "locate" / "map.json").read_text())["rows"] == 6

    report = (ws / "report.md").read_text()
    assert "357,129" in report and "355,854" in report and "4081" in report
    assert "Gaps" not in report


def test_determinism_and_jobs(tmp_path, tiny_config):
    outs = []
    for run, jobs in ((1, "1"), (2, "1"), (3, "3")):
        ws = tmp_path / f"ws{run}"
        args = ["--config", str(tiny_config), "--out", str(ws), "--jobs", jobs]
        assert main(["gen-dataset", *args]) == 0
        # training stays single-threaded; its inputs are the dataset produced above
        assert main(["train", "--config", str(tiny_config), "--out", str(ws)]) == 0
        assert main(["eval-mcs", *args]) == 0
        assert main(["simulate-locate", *args]) == 0
        outs.append({k: files_of(ws / k) for k in ("dataset", "model", "eval", "locate")})
    assert outs[0] == outs[1]
    assert outs[0] == outs[2]


def test_report_on_empty_workspace(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path / "empty")]) == 0
    err = capsys.readouterr().err
    assert err.count("warning: missing") == 4
    text = (tmp_path / "empty" / "report.md").read_text()
    assert "## Gaps" in text and "357,129" in text


@pytest.mark.slow
def test_smoke_training_budget(tmp_path):
    # two MCS values, two SINRs, 50 windows per recording, 3 epochs, default network
    cfg = config_from_dict({"dataset": {"mcs_values": [8, 16], "sinr_grid_db": [5.0, 15.0], "files_per_tuple": 2,
                                        "samples_per_file": 65536, "windows_per_recording": 50},
                            "network": {"n_classes": 2}, "train": {"epochs": 3}})
    pipeline.cmd_gen_dataset(cfg, tmp_path / "ds")
    start = time.perf_counter()
    summary = pipeline.cmd_train(cfg, tmp_path / "ds", tmp_path / "model")
    assert time.perf_counter() - start < 300
    assert summary["epochs"] == 3
