import json

import pytest
from hypothesis import given, strategies as st

from eifsim.config import Config, ConfigError, DEFAULT_CONFIG, load_config


def test_defaults():
    c = Config()
    assert c.cell_size == 0.05 and c.forward_step == 0.25 and c.forward_cells == 5
    assert c.frontier_threshold == 150 and c.frontier_tokens == 32
    assert c.max_hl_steps == 30 and c.softmax_temperature == 0.1


def test_canonical_json_round_trip():
    c = Config(seed=9, frontier_threshold=70)
    data = json.loads(c.canonical_json())
    assert data["schema_version"] == 1
    assert Config.from_dict(data) == c
    assert c.canonical_json() == Config.from_dict(data).canonical_json()


@given(st.integers(1, 10_000), st.integers(1, 200), st.integers(0, 2**31))
def test_round_trip_property(threshold, hl, seed):
    c = Config(frontier_threshold=threshold, max_hl_steps=hl, seed=seed)
    assert Config.from_dict(json.loads(c.canonical_json())) == c


def test_precedence_file_env_flags(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"frontier_threshold": 70, "max_hl_steps": 12, "seed": 4}))
    env = {"EIF_FRONTIER_THRESHOLD": "100", "EIF_SEED": "5", "UNRELATED": "x"}
    c = load_config(path, {"frontier_threshold": 200, "seed": None}, env)
    assert c.frontier_threshold == 200
    assert c.seed == 5
    assert c.max_hl_steps == 12


def test_env_only():
    assert load_config(environ={"EIF_FORWARD_STEP": "0.5"}).forward_step == 0.5


@pytest.mark.parametrize("bad", [
    {"frontier_threshold": 0},
    {"cell_size": -1},
    {"max_hl_steps": 0},
    {"min_interaction_range": 2.0},
    {"fov": 200},
    {"no_such_key": 1},
    {"schema_version": 7},
    {"frontier_threshold": 1.5},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        Config.from_dict(bad)


def test_replace_validates():
    with pytest.raises(ConfigError):
        DEFAULT_CONFIG.replace(image_size=0)
    assert DEFAULT_CONFIG.replace(seed=3).seed == 3
