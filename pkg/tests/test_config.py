import json

import pytest

from repeatlab.config import DEFAULTS, parse_config, resolve
from repeatlab.errors import ConfigurationError


def test_minimal_config_gets_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"task": {"kind": "parity", "d": 10, "k": 3}, "data": {"size": 256}}))
    r = parse_config(p)
    assert r.raw["model"] == DEFAULTS["model"] and r.raw["optim"]["lr"] == DEFAULTS["optim"]["lr"]
    cfg = r.run
    assert cfg.task.d == 10 and cfg.data_size == 256 and cfg.widths == (64, 1)


def test_override():
    assert parse_config(None, ["optim.lr=0.3"]).run.optim.lr == 0.3
    r = parse_config(None, ['schedule={"phases": [{"size": 64, "steps": 5}, {"size": 128, "steps": 5}]}',
                            "data.size=128"])
    assert [p.size for p in r.run.schedule.phases] == [64, 128]
    r = parse_config(None, ["schedule.preset=auto", "schedule.online_total=32000"])
    assert len(r.run.schedule.phases) == 6


def test_unknown_key_names_nearest():
    with pytest.raises(ConfigurationError, match="optim.lrr.*optim.lr"):
        parse_config(None, ["optim.lrr=1"])
    with pytest.raises(ConfigurationError, match="nearest"):
        resolve({"modle": {}})


def test_invariant_violations():
    with pytest.raises(ConfigurationError, match="nondecreasing"):
        resolve({"data": {"size": 128}, "schedule": {"phases": [{"size": 100, "steps": 1}, {"size": 50, "steps": 1}]}})
    with pytest.raises(ConfigurationError, match="1.2"):
        resolve({"sweep": {"lrs": [0.1, 0.2]}})
    with pytest.raises(ConfigurationError):
        resolve({"experiment": "gap-sweep"})
    with pytest.raises(ConfigurationError):
        parse_config("/nonexistent/config.json")


def test_with_seed_changes_only_base():
    r = parse_config(None)
    s = r.with_seed(42)
    assert s.raw["base_seed"] == 42 and r.raw["base_seed"] == 0
    assert s.run.base_seed == 42
