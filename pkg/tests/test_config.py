import pytest

from timebalance.config import dump_config, kind_of, parse_config, parse_text
from timebalance.errors import ConfigError
from timebalance.evaluation import EvalProtocol
from timebalance.synthgen import SynthSpec
from timebalance.trainer import TrainConfig


def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "e.cfg").write_text("")
    cfg = parse_config(tmp_path / "e.cfg")
    assert cfg == TrainConfig()
    assert (cfg.n, cfg.tau, cfg.omega, cfg.base_lr) == (4, 0.1, 1.0, 1e-3)
    assert cfg.for_stage("pretrain_invariant").clip_len == 16 and cfg.clip_len == 8
    assert parse_text("", "synth") == SynthSpec()
    assert parse_text("# nothing\n\n", "eval") == EvalProtocol()


def test_typed_values_and_comments():
    cfg = parse_text("stage = finetune_teacher  # comment\nomega = 2\ndistill = 'kl'\nseed=5\n")
    assert cfg.stage == "finetune_teacher" and cfg.omega == 2.0 and cfg.distill == "kl" and cfg.seed == 5


@pytest.mark.parametrize("text,line", [
    ("tau = -1\n", 1),
    ("seed = 1\nbogus = 3\n", 2),
    ("seed = x\n", 1),
    ("omega = 1\nomega = 2\n", 2),
    ("\n\njust words\n", 3),
    ("seed = 2\nwarmup_epochs = 3\nepochs = 2\n", 3),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_text(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_invalid_synth_and_eval_values():
    with pytest.raises(ConfigError):
        parse_text("noise_std = -1", "synth")
    with pytest.raises(ConfigError):
        parse_text("num_clips = 0", "eval")
    with pytest.raises(ConfigError):
        parse_text("", "nope")


@pytest.mark.parametrize("cfg", [TrainConfig(), TrainConfig(omega=0.25, distill="js", base_lr=3e-4, epochs=12),
                                 SynthSpec(T=32, noise_std=0.0), EvalProtocol(1, 1, 16)])
def test_dump_parse_roundtrip(cfg):
    text = dump_config(cfg)
    back = parse_text(text, kind_of(cfg))
    assert back == cfg
    assert dump_config(back) == text


def test_normalizing_roundtrip():
    messy = "  omega=  0.5 # weight\n\nseed =3\n"
    once = dump_config(parse_text(messy))
    assert dump_config(parse_text(once)) == once
    assert "omega = 0.5" in once and "seed = 3" in once


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.cfg")
