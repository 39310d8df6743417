import pytest

from optiturbo.config import DEFAULTS, ExperimentConfig, config_hash


def test_defaults_validate_and_hash_is_stable():
    a = ExperimentConfig.from_dict()
    b = ExperimentConfig.from_dict({})
    assert a.hash == b.hash == config_hash(DEFAULTS)
    assert len(a.hash) == 12


def test_hash_changes_with_any_override():
    base = ExperimentConfig.from_dict()
    assert base.with_overrides(fiber={"gamma": 1.2}).hash != base.hash
    assert base.with_overrides(sweep={"seed": 2}).hash != base.hash


def test_partial_override_keeps_siblings():
    cfg = ExperimentConfig.from_dict({"fiber": {"gamma": 0.0}})
    assert cfg["fiber"]["gamma"] == 0.0
    assert cfg["fiber"]["alpha"] == DEFAULTS["fiber"]["alpha"]


def test_yaml_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict({"modulation": "uniform256", "sweep": {"power_dbm": [1.0, 2.0]}})
    cfg.dump(tmp_path / "c.yaml")
    back = ExperimentConfig.load(tmp_path / "c.yaml")
    assert back.raw == cfg.raw and back.hash == cfg.hash


def test_derived_objects():
    cfg = ExperimentConfig.from_dict()
    t = cfg.turbo(7)
    assert t.max_turbo_iters == 7 and t.bp_iters == cfg["ldpc"]["bp_iters"]
    link = cfg.link(3, 11)
    assert link.n_spans == 3 and link.seed == 11


@pytest.mark.parametrize("over", [
    {"modulation": "qam4096"},
    {"sweep": {"power_dbm": []}},
    {"sweep": {"n_trials": 0}},
    {"tx": {"n_channels": 2}},
    {"channel": {"mode": "free space"}},
    {"channel": {"mode": "awgn"}, "sweep": {"spans": [0]}},
    {"channel": {"mode": "awgn", "snr_db": 20.0}},
    {"receivers": [{"name": "x", "mode": "CDC", "turbo_iters": 1}]},
])
def test_validation_rejects(over):
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict(over)
