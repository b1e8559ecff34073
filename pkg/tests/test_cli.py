import subprocess
import sys

import pytest

from timebalance.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from timebalance.datamodel import load_videos
from timebalance.evaluation import read_report
from timebalance.trainer import load_checkpoint

TRAIN_CFG = """\
epochs = 1
warmup_epochs = 1
batch_size = 4
F = 8
labeled_fraction = 0.5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    (ws / "synth.cfg").write_text("num_classes_atomic = 2\nnum_classes_composite = 2\nvideos_per_class = 3\n"
                                  "T = 32\nH = 16\nW = 16\n")
    (ws / "train.cfg").write_text(TRAIN_CFG)
    (ws / "eval.cfg").write_text("num_clips = 2\nscales = 1\n")
    return ws


def run(*argv):
    return main([str(a) for a in argv])


def test_full_command_chain(workspace):
    ws = workspace
    data, cfg = ws / "data", ws / "train.cfg"
    assert run("gen-synthetic", "--spec", ws / "synth.cfg", "--out", data) == EXIT_OK
    assert len(load_videos(data)) == 12
    for obj in ("invariant", "distinctive"):
        assert run("pretrain", "--objective", obj, "--config", cfg, "--data", data, "--out", ws / "pre") == EXIT_OK
    I, D = ws / "pre" / "pretrain_invariant.ckpt", ws / "pre" / "pretrain_distinctive.ckpt"
    assert run("compute-similarity", "--teachers", I, D, "--config", cfg, "--data", data,
               "--out", ws / "scores.tsv") == EXIT_OK
    assert (ws / "scores.tsv").read_text().startswith("# timebalance-scores")
    for ck in (I, D):
        assert run("finetune-teacher", "--checkpoint", ck, "--config", cfg, "--data", data,
                   "--out", ws / "ft") == EXIT_OK
    fI, fD = ws / "ft" / "finetune_invariant_teacher.ckpt", ws / "ft" / "finetune_distinctive_teacher.ckpt"
    assert (ws / "ft" / "split.csv").exists()
    assert run("train-student", "--invariant", fI, "--distinctive", fD, "--scores", ws / "scores.tsv",
               "--init", D, "--config", cfg, "--data", data, "--out", ws / "student") == EXIT_OK
    assert load_checkpoint(ws / "student" / "student.ckpt")[0].role == "student"
    for name, ck in (("I", fI), ("D", fD)):
        assert run("evaluate", "--checkpoint", ck, "--config", ws / "eval.cfg", "--data", data,
                   "--out", ws / f"eval{name}") == EXIT_OK
    assert run("classwise-delta", "--distinctive", ws / "evalD" / "report.csv",
               "--invariant", ws / "evalI" / "report.csv", "-k", 1, "--out", ws / "delta") == EXIT_OK
    assert len((ws / "delta" / "classwise_delta.csv").read_text().splitlines()) == 3
    assert read_report(ws / "evalD" / "report.csv").num_videos == 12


def test_mismatched_scores_rejected(workspace):
    ws = workspace
    other = ws / "other.tsv"
    assert run("compute-similarity", "--teachers", ws / "pre" / "pretrain_distinctive.ckpt",
               ws / "pre" / "pretrain_distinctive.ckpt", "--config", ws / "train.cfg", "--data", ws / "data",
               "--out", other) == EXIT_OK
    code = run("train-student", "--invariant", ws / "ft" / "finetune_invariant_teacher.ckpt",
               "--distinctive", ws / "ft" / "finetune_distinctive_teacher.ckpt", "--scores", other,
               "--config", ws / "train.cfg", "--data", ws / "data", "--out", ws / "bad")
    assert code == EXIT_DATA


def test_seed_env_override(workspace, monkeypatch):
    ws = workspace
    monkeypatch.setenv("TIMEBALANCE_SEED", "5")
    assert run("finetune-teacher", "--checkpoint", ws / "pre" / "pretrain_invariant.ckpt", "--config",
               ws / "train.cfg", "--data", ws / "data", "--out", ws / "ft5") == EXIT_OK
    assert (ws / "ft5" / "split.csv").read_text() != (ws / "ft" / "split.csv").read_text()
    monkeypatch.setenv("TIMEBALANCE_SEED", "abc")
    assert run("finetune-teacher", "--checkpoint", ws / "pre" / "pretrain_invariant.ckpt",
               "--data", ws / "data", "--out", ws / "ft6") == EXIT_USAGE


def test_usage_and_config_errors(workspace, tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 1\nwhat = 2\n")
    assert run("pretrain", "--objective", "invariant", "--config", bad, "--data", workspace / "data",
               "--out", tmp_path) == EXIT_USAGE
    assert "line 2" in capsys.readouterr().err


def test_data_errors(workspace, tmp_path):
    assert run("evaluate", "--checkpoint", tmp_path / "missing.ckpt", "--data", workspace / "data",
               "--out", tmp_path) == EXIT_DATA
    corrupt = tmp_path / "c.ckpt"
    corrupt.write_bytes(b"TBCK" + b"\0" * 50)
    assert run("evaluate", "--checkpoint", corrupt, "--data", workspace / "data", "--out", tmp_path) == EXIT_DATA
    assert run("pretrain", "--objective", "invariant", "--data", tmp_path / "nodata", "--out", tmp_path) == EXIT_DATA


def test_numerical_failure_exit_code(workspace, tmp_path, monkeypatch):
    from timebalance import trainer
    monkeypatch.setattr(trainer.losses, "loss_invariant", lambda z, tau: z.sum() * float("nan"))
    assert run("pretrain", "--objective", "invariant", "--config", workspace / "train.cfg",
               "--data", workspace / "data", "--out", tmp_path) == EXIT_NUMERIC


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "timebalance", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen-synthetic", "pretrain", "finetune-teacher", "compute-similarity", "train-student",
                "evaluate", "classwise-delta"):
        assert cmd in res.stdout
