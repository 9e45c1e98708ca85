"""End-to-end tests for the patrack command line."""

import json

import pytest

from patrack.cli import main
from patrack.config import dump_run_config, load_run_config


@pytest.fixture
def config_path(tiny_run_config, tmp_path):
    path = tmp_path / "run.json"
    path.write_text(dump_run_config(tiny_run_config))
    return path


@pytest.fixture
def dataset(config_path, tmp_path):
    root = tmp_path / "data"
    assert main(["synth", "--config", str(config_path), "--out", str(root)]) == 0
    return root


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSynth:
    def test_same_seed_same_bytes(self, config_path, tmp_path):
        for name in ("a", "b"):
            main(["synth", "--config", str(config_path), "--out", str(tmp_path / name), "--seed", "5"])
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_layout_and_echo(self, dataset):
        assert sorted(p.name for p in dataset.iterdir() if p.is_dir()) == [
            "eval",
            "eval-low_illumination",
            "train",
            "train-low_illumination",
        ]
        assert (dataset / "train" / "train-000" / "groundtruth.txt").exists()
        assert (dataset / "config.json").exists()


class TestEval:
    def test_oracle_scores_one(self, dataset, config_path, tmp_path, capsys):
        out = tmp_path / "eval"
        args = ["eval", "--config", str(config_path), "--data", str(dataset / "eval"), "--oracle"]
        code = main([*args, "--out", str(out)])
        assert code == 0
        document = json.loads((out / "result.json").read_text())
        assert document["aggregate"]["sr"] == 1.0
        assert document["aggregate"]["pr"] == 1.0
        assert (out / "success_curve.csv").exists()
        assert load_run_config(out / "config.json") == load_run_config(config_path)
        assert "ALL" in capsys.readouterr().out

    def test_needs_exactly_one_tracker(self, dataset, tmp_path):
        assert main(["eval", "--data", str(dataset / "eval"), "--out", str(tmp_path / "o")]) == 2

    def test_missing_dataset(self, tmp_path):
        code = main(["eval", "--data", str(tmp_path / "absent"), "--oracle", "--out", str(tmp_path / "o")])
        assert code == 3

    def test_no_dataset_given(self, tmp_path):
        assert main(["eval", "--oracle", "--out", str(tmp_path / "o")]) == 2


class TestParams:
    def test_default_accounting(self, capsys):
        assert main(["params", "--json"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["trainable"] == 43240
        assert report["total"] == 437965
        assert report["components"]["ha"]["trainable"] == 520

    def test_writes_report(self, tmp_path):
        assert main(["params", "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "params.json").read_text())["mode"] == "adapter_tune"


class TestGradcheck:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--samples", "6"]) == 0
        assert "assembled" in capsys.readouterr().out

    def test_corrupted_gradients_exit_six(self, capsys):
        assert main(["gradcheck", "--samples", "6", "--corrupt"]) == 6
        assert "VERIFICATION_FAILED" in capsys.readouterr().err


class TestUsage:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["fly"])
        assert exc.value.code == 2

    def test_bad_config_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"train": {"epochz": 1}}')
        assert main(["params", "--config", str(path)]) == 2


def test_entropy_report(dataset, tmp_path, capsys):
    assert main(["entropy", "--data", str(dataset / "eval"), "--out", str(tmp_path / "h")]) == 0
    report = json.loads((tmp_path / "h" / "entropy.json").read_text())
    assert set(report["entropy"]) == {"rgb", "thermal"}
    assert "bits" in capsys.readouterr().out


@pytest.mark.slow
def test_pretrain_train_eval(dataset, config_path, tmp_path):
    base = tmp_path / "base.patk"
    tuned = tmp_path / "tuned.patk"
    train_split = str(dataset / "train")
    pretrain = ["pretrain", "--config", str(config_path), "--data", train_split]
    assert main([*pretrain, "--out-checkpoint", str(base)]) == 0
    assert (
        main(
            [
                "train",
                "--config",
                str(config_path),
                "--data",
                train_split,
                "--init-checkpoint",
                str(base),
                "--out-checkpoint",
                str(tuned),
            ]
        )
        == 0
    )
    out = tmp_path / "eval"
    args = ["eval", "--config", str(config_path), "--data", str(dataset / "eval"), "--checkpoint", str(tuned)]
    assert main([*args, "--out", str(out)]) == 0
    document = json.loads((out / "result.json").read_text())
    assert 0.0 <= document["aggregate"]["sr"] <= 1.0
