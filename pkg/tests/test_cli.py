"""End-to-end command-line tests: the synth/prep/train/eval round trip,
config handling, exit codes, and the selftest gate.

Commands run in-process through cli.main so exit codes and output are
asserted without interpreter startup overhead.
"""

import json
import os
import shutil

import numpy as np
import pytest

from xmodal import cli
from xmodal.numcore import load_mxt, save_mxt
from xmodal.trainer import RunReport


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def raw_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "raw"
    code = run_cli(
        "synth", "--out", str(d), "--classes", "2", "--per-class", "4",
        "--subjects", "5", "--frames", "8", "--size", "32", "--seed", "3",
    )
    assert code == 0
    return d


@pytest.fixture(scope="module")
def prepped_dir(raw_dir):
    d = raw_dir.parent / "prepped"
    assert run_cli("prep", "--in", str(raw_dir), "--out", str(d), "--frames", "8") == 0
    return d


@pytest.fixture(scope="module")
def run_dir(prepped_dir):
    d = prepped_dir.parent / "run"
    code = run_cli(
        "train", "--data", str(prepped_dir), "--out", str(d),
        "--epochs", "2", "--batch-size", "4", "--seed", "0",
    )
    assert code == 0
    return d


def read_manifest(d):
    with open(os.path.join(d, "manifest.jsonl")) as fh:
        return [json.loads(line) for line in fh if line.strip()]


class TestParsing:
    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as ei:
            run_cli("--help")
        assert ei.value.code == 0

    def test_missing_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as ei:
            run_cli()
        assert ei.value.code == 2


class TestSynth:
    def test_writes_manifest_and_clips(self, raw_dir):
        rows = read_manifest(raw_dir)
        assert len(rows) == 8
        for row in rows:
            assert os.path.exists(raw_dir / row["rgb_path"])

    def test_invalid_value_exits_two(self, tmp_path, capsys):
        assert run_cli("synth", "--out", str(tmp_path / "x"), "--classes", "1") == 2
        assert "n_classes" in capsys.readouterr().err


class TestPrep:
    def test_writes_flow_pairs(self, raw_dir, prepped_dir):
        rows = read_manifest(prepped_dir)
        assert len(rows) == 8
        for row in rows:
            assert row["flow_path"].endswith("_flow.mxt")
            assert load_mxt(prepped_dir / row["rgb_path"]).shape == (3, 8, 32, 32)
            assert load_mxt(prepped_dir / row["flow_path"]).shape == (2, 8, 32, 32)

    def test_idempotent(self, raw_dir, prepped_dir, tmp_path):
        again = tmp_path / "again"
        assert run_cli("prep", "--in", str(raw_dir), "--out", str(again), "--frames", "8") == 0
        for row in read_manifest(prepped_dir):
            a = (prepped_dir / row["flow_path"]).read_bytes()
            b = (again / row["flow_path"]).read_bytes()
            assert a == b

    def test_corrupt_clip_skipped_with_note(self, raw_dir, tmp_path, capsys):
        broken = tmp_path / "broken"
        shutil.copytree(raw_dir, broken)
        victim = read_manifest(broken)[2]["rgb_path"]
        (broken / victim).write_bytes(b"\x00" * 10)
        out = tmp_path / "out"
        assert run_cli("prep", "--in", str(broken), "--out", str(out), "--frames", "8") == 0
        assert "skipping sample 2" in capsys.readouterr().err
        assert len(read_manifest(out)) == 7

    def test_corrupt_clip_fails_under_strict(self, raw_dir, tmp_path):
        broken = tmp_path / "broken"
        shutil.copytree(raw_dir, broken)
        victim = read_manifest(broken)[2]["rgb_path"]
        (broken / victim).write_bytes(b"\x00" * 10)
        code = run_cli("prep", "--in", str(broken), "--out", str(tmp_path / "out"), "--frames", "8", "--strict")
        assert code == 1


class TestTrain:
    def test_writes_run_artifacts(self, run_dir):
        report = RunReport.from_json((run_dir / "report.json").read_text())
        assert report.epochs == 2
        assert len(report.l_total) == 2
        split = json.loads((run_dir / "split.json").read_text())
        assert sorted(split["train_ids"] + split["test_ids"]) == list(range(8))
        for stem in ("video", "attr", "head_video", "head_attr"):
            assert (run_dir / f"{stem}.mxt").exists()
            assert (run_dir / f"{stem}.json").exists()

    def test_deterministic_reruns(self, prepped_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            d = tmp_path / name
            assert run_cli(
                "train", "--data", str(prepped_dir), "--out", str(d),
                "--epochs", "1", "--batch-size", "4", "--seed", "5",
            ) == 0
            outs.append((d / "report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_unknown_config_key_named(self, prepped_dir, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"experiment": {"alpha": 0.5, "bogus": 1}}')
        code = run_cli("train", "--data", str(prepped_dir), "--out", str(tmp_path / "r"), "--config", str(cfg))
        assert code == 2
        assert "experiment.bogus" in capsys.readouterr().err

    def test_flags_override_config_file(self, prepped_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"experiment": {"epochs": 1, "batch_size": 4, "seed": 9, "alpha": 1.0}}')
        d = tmp_path / "r"
        assert run_cli(
            "train", "--data", str(prepped_dir), "--out", str(d), "--config", str(cfg), "--alpha", "0.25",
        ) == 0
        report = RunReport.from_json((d / "report.json").read_text())
        assert report.config["alpha"] == 0.25
        assert report.config["seed"] == 9

    def test_non_finite_data_exits_three(self, prepped_dir, tmp_path, capsys):
        poisoned = tmp_path / "poisoned"
        shutil.copytree(prepped_dir, poisoned)
        for row in read_manifest(poisoned):
            arr = load_mxt(poisoned / row["flow_path"])
            arr[0, 0, 0, 0] = np.nan
            save_mxt(poisoned / row["flow_path"], arr)
        code = run_cli(
            "train", "--data", str(poisoned), "--out", str(tmp_path / "r"),
            "--epochs", "1", "--batch-size", "4",
        )
        assert code == 3
        assert "non-finite" in capsys.readouterr().err


class TestEval:
    def test_matches_report_accuracies(self, run_dir, prepped_dir, capsys):
        report = RunReport.from_json((run_dir / "report.json").read_text())
        assert run_cli("eval", "--run", str(run_dir), "--data", str(prepped_dir)) == 0
        test_out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert test_out["accuracy"] == pytest.approx(report.test_accuracy)
        assert run_cli("eval", "--run", str(run_dir), "--data", str(prepped_dir), "--split", "train") == 0
        train_out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert train_out["accuracy"] == pytest.approx(report.train_accuracy)

    def test_eval_needs_only_video_checkpoints(self, run_dir, prepped_dir, tmp_path, capsys):
        # the attribute branch files may be absent entirely
        slim = tmp_path / "slim"
        slim.mkdir()
        for name in ("video.mxt", "video.json", "head_video.mxt", "head_video.json", "split.json"):
            shutil.copy(run_dir / name, slim / name)
        assert run_cli("eval", "--run", str(slim), "--data", str(prepped_dir)) == 0
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert 0.0 <= out["accuracy"] <= 1.0


class TestSweepAndAblate:
    def test_sweep_alpha_csv(self, prepped_dir, tmp_path):
        out = tmp_path / "alpha.csv"
        code = run_cli(
            "sweep-alpha", "--data", str(prepped_dir), "--alphas", "0,1", "--out", str(out),
            "--epochs", "1", "--batch-size", "4", "--n-repeats", "2",
        )
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "alpha,mean,std"
        assert len(lines) == 3

    def test_ablate_json(self, prepped_dir, tmp_path):
        out = tmp_path / "ablate.json"
        code = run_cli(
            "ablate", "--data", str(prepped_dir), "--out", str(out),
            "--epochs", "1", "--batch-size", "4", "--n-repeats", "2",
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert [row["label"] for row in doc["rows"]] == ["L_theta", "L"]
        assert doc["splits_identical"] is True


class TestSelftest:
    def test_passes_clean(self, capsys):
        assert run_cli("selftest") == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "12/12 checks passed" in out

    def test_injected_fault_fails_by_name(self, capsys):
        assert run_cli("selftest", "--inject-fault", "conv_stride") == 1
        captured = capsys.readouterr()
        assert "FAIL table1_depth10" in captured.out
        assert "table1_depth18" in captured.err
