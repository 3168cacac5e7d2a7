from datetime import datetime, timezone

import pytest

from wassrl.config import ConfigError, RunConfig, make_run_dir, output_root, with_overrides


def test_roundtrip_and_digest_stability():
    cfg = with_overrides(RunConfig(), {"seed": 3, "train.delta": 0.5, "sweep.parameter": "mass_pole"})
    back = RunConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    assert back.digest() == cfg.digest()
    assert with_overrides(cfg, {"train.delta": 0.6}).digest() != cfg.digest()


def test_seed_propagates_to_training():
    assert RunConfig.from_dict({"seed": 12}).train.seed == 12


def test_none_overrides_are_ignored():
    cfg = RunConfig()
    assert with_overrides(cfg, {"train.delta": None}).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("data", [
    {"extra": 1},
    {"env": {"gravity": 9.8, "colour": 1}},
    {"sweep": {"mode": "lucky"}},
    {"sweep": {"parameter": "length"}},
    {"solve": {"tol": 0}},
    {"checkpoint_every": -1},
    [1, 2],
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_run_dir_collision_gets_suffix(tmp_path):
    now = datetime(2024, 1, 2, 3, 4, 5, tzinfo=timezone.utc)
    cfg = RunConfig()
    first = make_run_dir(tmp_path, cfg, now)
    second = make_run_dir(tmp_path, cfg, now)
    assert first.name == f"20240102T030405Z-{cfg.digest()}"
    assert second.name == first.name + "-1"


def test_output_root_precedence(monkeypatch):
    monkeypatch.delenv("WASSRL_OUTPUT_ROOT", raising=False)
    assert str(output_root()) == "runs"
    monkeypatch.setenv("WASSRL_OUTPUT_ROOT", "/tmp/x")
    assert str(output_root()) == "/tmp/x"
    assert str(output_root("cli")) == "cli"
