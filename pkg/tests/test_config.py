import pytest

from corecd.config import (
    PRESETS,
    ConfigError,
    TrainConfig,
    parse_value,
    read_config_file,
    resolve_run_config,
    write_config_file,
)


def test_all_presets_valid():
    for name in ("paper-3var", "paper-4var", "paper-5var", "paper-8var", "paper-10var"):
        assert name in PRESETS
    for name, values in PRESETS.items():
        TrainConfig(**values).validate()


def test_parse_values():
    assert parse_value("hidden", "64, 32") == (64, 32)
    assert parse_value("random_interventions", "yes") is True
    assert parse_value("total_steps", "200_000") == 200_000
    assert parse_value("lr", "3e-4") == 3e-4
    with pytest.raises(ConfigError):
        parse_value("total_steps", "many")
    with pytest.raises(ConfigError):
        parse_value("colour", "red")


def test_file_round_trip(tmp_path):
    cfg = TrainConfig(n=4, horizon=8, hidden=(32, 32), random_interventions=True)
    write_config_file(cfg, tmp_path / "c.txt", {"dataset": "d4.txt"})
    values = read_config_file(tmp_path / "c.txt")
    got, run = resolve_run_config(values, {})
    assert got == cfg and run == {"dataset": "d4.txt"}


def test_precedence_and_comments(tmp_path):
    (tmp_path / "c.txt").write_text("preset = desk-3var  # budget\ntotal-steps = 1000\neval_every = 500\n\nlr = 1e-3\n")
    cfg, run = resolve_run_config(read_config_file(tmp_path / "c.txt"), {"lr": 5e-4})
    assert (cfg.total_steps, cfg.lr, cfg.horizon) == (1000, 5e-4, 5)
    assert run == {"preset": "desk-3var"}


def test_rejections(tmp_path):
    (tmp_path / "bad.txt").write_text("n 3\n")
    with pytest.raises(ConfigError, match=":1:"):
        read_config_file(tmp_path / "bad.txt")
    with pytest.raises(ConfigError):
        resolve_run_config({"preset": "huge"}, {})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"n": 3, "depth": 2})
    with pytest.raises(ConfigError):
        TrainConfig(horizon=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(total_steps=10, warmup=100).validate()
