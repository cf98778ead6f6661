from fractions import Fraction

import pytest

from weakfine.config import (ConfigError, apply_overrides, config_hash, emit_config,
                             parse_config, parse_config_text, parse_rational)
from weakfine.harness import ExperimentConfig

from tiny import tiny_config


def test_rational_exact():
    cfg = parse_config_text('[experiment]\nc_weak = "1/50"\n')
    assert cfg.schedule.c_weak == Fraction(1, 50)
    assert parse_rational("3") == 3 and parse_rational(" 2 / 4 ") == Fraction(1, 2)


def test_defaults_filled():
    cfg = parse_config_text("[experiment]\nrounds = 2\n")
    assert cfg.correction_enabled is True
    assert cfg == ExperimentConfig(rounds=2)


@pytest.mark.parametrize("text,key,line", [
    ("[experiment]\n\nrounds = 0\n", "experiment.rounds", 3),
    ("[experiment]\nbudget = \"1/x\"\n", "experiment.budget", 2),
    ("[experiment]\nbudget = 0.5\n", "experiment.budget", 2),
    ("[train]\nepochs = 5\nfoo = 1\n", "train.foo", 3),
    ("[split]\ninit_per_class = \"3\"\n", "split.init_per_class", 2),
])
def test_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert (exc.value.key, exc.value.line) == (key, line)
    assert key in str(exc.value) and f"line {line}" in str(exc.value)


def test_unknown_section_and_bad_toml():
    with pytest.raises(ConfigError):
        parse_config_text("[bogus]\nx = 1\n")
    with pytest.raises(ConfigError) as exc:
        parse_config_text("[experiment]\nrounds = \n")
    assert exc.value.line == 2


@pytest.mark.parametrize("cfg", [ExperimentConfig(), tiny_config(),
                                 tiny_config(budget=Fraction(7, 3), carry_over=True)])
def test_emit_parse_round_trip(cfg):
    assert parse_config_text(emit_config(cfg)) == cfg


def test_hash_is_canonical(tmp_path):
    a = tmp_path / "a.toml"
    a.write_text('[experiment]\nrounds = 3\nc_weak = "2/100"\n')
    b = tmp_path / "b.toml"
    b.write_text('# same thing\n[experiment]\nc_weak = "1/50"\n\nrounds   = 3\n')
    assert config_hash(parse_config(a)) == config_hash(parse_config(b))
    assert config_hash(parse_config(a)) != config_hash(ExperimentConfig())


def test_overrides():
    cfg = apply_overrides(ExperimentConfig(), ["seeds=1,2", "c_weak=1/20", "train.epochs=7",
                                               "methods=entropy-full"])
    assert cfg.seeds == (1, 2)
    assert cfg.schedule.c_weak == Fraction(1, 20)
    assert cfg.train.epochs == 7
    assert cfg.methods == ("entropy-full",)
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), ["nonsense=1"])
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), ["rounds"])


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("benchmark.toml", "full_scale.toml"):
        parse_config(root / name)
