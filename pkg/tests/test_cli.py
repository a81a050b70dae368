"""Command-line interface, exercised end to end in-process."""

import json

import numpy as np
import pytest

from pointview.cli import main


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """A prepared dataset plus trained checkpoints, built through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    runs = root / "runs"
    config = {
        "data_root": str(data), "out_dir": str(runs),
        "n_points": 96, "image_size": 24, "n_classes": 3, "k": 6,
        "batch_size": 6, "epochs": 4, "freeze_epochs": 2,
        "point_mlp_widths": [12, 16], "point_feature_dim": 32,
        "transform_widths": [12, 16], "transform_hidden": 12,
        "view_plan": "small", "view_feature_dim": 32,
        "fusion_hidden": 16, "reduced_dim": 16,
        "classifier_widths": [16, 8], "dropout": 0.1, "augment": False,
        "lr_step_interval": 10, "seed": 5,
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config))
    code = main([
        "prepare-data", "--root", str(data), "--synthetic",
        "--classes", "cube,sphere,torus", "--per-class", "10",
        "--config", str(cfg_path),
    ])
    assert code == 0
    for branch in ("point", "view"):
        assert main(["pretrain", "--branch", branch, "--config", str(cfg_path)]) == 0
    assert main([
        "train", "--config", str(cfg_path),
        "--point-ckpt", str(runs / "point_pretrain.ckpt"),
        "--view-ckpt", str(runs / "view_pretrain.ckpt"),
    ]) == 0
    return root, cfg_path, data, runs


class TestCliPipeline:
    def test_prepare_data_emits_summary(self, cli_workspace, capsys):
        root, cfg_path, data, runs = cli_workspace
        assert (data / "manifest.json").exists()
        manifest = json.loads((data / "manifest.json").read_text())
        assert len(manifest["class_table"]) == 3

    def test_checkpoints_written(self, cli_workspace):
        _, _, _, runs = cli_workspace
        for name in ("point_pretrain.ckpt", "view_pretrain.ckpt", "fused.ckpt"):
            assert (runs / name).exists()

    def test_eval_classification(self, cli_workspace, capsys):
        root, cfg_path, data, runs = cli_workspace
        code = main(["eval", "--ckpt", str(runs / "fused.ckpt"),
                     "--split", "test", "--task", "cls"])
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert code == 0
        assert out["task"] == "cls"
        assert 0.0 <= out["overall_accuracy"] <= 1.0
        assert len(out["per_class"]) == 3

    def test_eval_retrieval(self, cli_workspace, capsys):
        root, cfg_path, data, runs = cli_workspace
        code = main(["eval", "--ckpt", str(runs / "fused.ckpt"),
                     "--split", "test", "--task", "retrieval"])
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert code == 0
        assert 0.0 <= out["mAP"] <= 1.0

    def test_dump_attention_records(self, cli_workspace, capsys, tmp_path):
        root, cfg_path, data, runs = cli_workspace
        out_path = tmp_path / "masks.jsonl"
        code = main(["dump-attention", "--ckpt", str(runs / "fused.ckpt"),
                     "--split", "test", "--out", str(out_path),
                     "--images", str(tmp_path / "imgs")])
        assert code == 0
        lines = out_path.read_text().strip().splitlines()
        n_test = sum(1 for e in json.loads((data / "manifest.json").read_text())["entries"]
                     if e["split"] == "test")
        assert len(lines) == n_test
        for line in lines:
            rec = json.loads(line)
            assert len(rec["weights"]) == 12
            assert rec["mode"] == "softmax"
            assert abs(sum(rec["weights"]) - 1.0) <= 1e-4
        assert len(list((tmp_path / "imgs").glob("*.png"))) == n_test

    def test_flag_overrides_config_key(self, cli_workspace, capsys):
        root, cfg_path, data, runs = cli_workspace
        # eval with the cosine retrieval metric via flag
        code = main(["eval", "--ckpt", str(runs / "fused.ckpt"),
                     "--task", "retrieval", "--retrieval-metric", "cosine"])
        assert code == 0
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert 0.0 <= out["mAP"] <= 1.0


class TestCliErrors:
    def test_missing_checkpoint_is_machine_readable(self, capsys):
        code = main(["eval", "--ckpt", "/nonexistent/x.ckpt"])
        captured = capsys.readouterr()
        assert code == 1
        record = json.loads(captured.err.strip().splitlines()[-1])
        assert set(record) == {"error", "message"}

    def test_bad_config_key_reported(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"warp": 9}))
        code = main(["pretrain", "--branch", "point", "--config", str(bad)])
        assert code == 1
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "warp" in record["message"]

    def test_empty_dataset_fatal(self, tmp_path, capsys):
        (tmp_path / "void").mkdir()
        code = main(["prepare-data", "--root", str(tmp_path / "void")])
        assert code == 1
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["error"] == "DatasetError"
