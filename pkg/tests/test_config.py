import json
from pathlib import Path

import numpy as np
import pytest

from robust_mfg.config import ConfigError, game_from_dict, load_game, parse_number
from robust_mfg.mfe import solve_mfe
from robust_mfg.model import FiniteSet, Singleton, WassersteinBall, make_crowd_game

CROWD = {
    "states": [0, 1, 2, 3, 4],
    "actions": [-1, 0, 1],
    "horizon": 2,
    "initial": [0.2, 0.1, 0.05, 0.25, 0.4],
    "reward": {"type": "crowd", "c": 1e-7},
    "ambiguity": {"type": "wasserstein", "lambda": "1/4", "crowd": True},
}


def test_parse_number():
    assert parse_number("1/3") == 1 / 3
    assert parse_number("0.25") == 0.25
    assert parse_number(2) == 2.0
    for bad in ("x", "1/0", "nan", True):
        with pytest.raises(ValueError):
            parse_number(bad)


def test_crowd_config_matches_builtin():
    spec = game_from_dict(CROWD)
    ref = make_crowd_game(0.25, 1e-7, CROWD["initial"])
    assert solve_mfe(spec).value == solve_mfe(ref).value


def test_doc_example_loads(tmp_path):
    text = (Path(__file__).parents[1] / "docs" / "config.md").read_text()
    block = text.split("```json")[-1].split("```")[0]
    path = tmp_path / "game.json"
    path.write_text(block)
    spec = load_game(path)
    assert spec.nS == 5 and spec.ambiguity[0].radius == 0.25


def test_lambda_override():
    spec = game_from_dict(CROWD, lam=1.0)
    assert all(f.radius == 1.0 for f in spec.ambiguity)


def test_renormalize_at_load():
    cfg = dict(CROWD, initial=[0.2, 0.1, 0.05, 0.25, 0.4 + 5e-7])
    spec = game_from_dict(cfg)
    assert abs(spec.initial.sum() - 1) <= 1e-15


def table_cfg(**changes):
    cfg = {
        "states": [[0, 0], [1, 0], [0, 1]],
        "actions": [0, 1],
        "horizon": 2,
        "initial": [1 / 3, 1 / 3, 1 / 3],
        "reward": {"type": "table", "r0": np.ones((3, 2, 3)).tolist(), "beta": 0.5, "c": 0.1},
        "ambiguity": [
            {"type": "singleton", "kernel": np.full((3, 2, 3), 1 / 3).tolist()},
            {"type": "finite", "kernels": [np.full((3, 2, 3), 1 / 3).tolist(), np.tile(np.eye(3)[:, None], (1, 2, 1)).tolist()]},
        ],
    }
    cfg.update(changes)
    return cfg


def test_table_and_per_period_families():
    spec = game_from_dict(table_cfg())
    assert isinstance(spec.ambiguity[0], Singleton)
    assert isinstance(spec.ambiguity[1], FiniteSet)
    assert spec.states.dim == 2
    assert spec.states.distance_matrix()[1, 2] == pytest.approx(np.sqrt(2))
    assert solve_mfe(spec).converged


@pytest.mark.parametrize(
    "change,path",
    [
        ({"horizon": 0}, "horizon"),
        ({"horizon": "2"}, "horizon"),
        ({"initial": [0.5, 0.5]}, "initial"),
        ({"initial": [0.5, 0.6, -0.1]}, "initial"),
        ({"reward": {"type": "magic"}}, "reward.type"),
        ({"reward": {"type": "table", "r0": [[1]]}}, "reward.r0"),
        ({"ambiguity": [{"type": "singleton", "kernel": np.full((3, 2, 3), 1 / 3).tolist()}]}, "ambiguity"),
        ({"states": []}, "states"),
    ],
)
def test_errors_name_the_field(change, path):
    with pytest.raises(ConfigError) as info:
        game_from_dict(table_cfg(**change))
    assert info.value.path == path


def test_bad_kernel_row_path():
    k = np.full((3, 2, 3), 1 / 3)
    k[2, 1] = [0.5, 0.5, 0.5]
    cfg = table_cfg(ambiguity={"type": "wasserstein", "lambda": 0.1, "kernel": k.tolist()})
    with pytest.raises(ConfigError) as info:
        game_from_dict(cfg)
    assert info.value.path == "ambiguity.kernel[2][1]"


def test_missing_field_and_bad_lambda():
    cfg = dict(CROWD)
    del cfg["reward"]
    with pytest.raises(ConfigError, match="reward: missing"):
        game_from_dict(cfg)
    with pytest.raises(ConfigError, match="ambiguity.lambda"):
        game_from_dict(dict(CROWD, ambiguity={"type": "wasserstein", "lambda": -1, "crowd": True}))


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_game(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_game(bad)


def test_wasserstein_family_from_config():
    spec = game_from_dict(CROWD)
    assert isinstance(spec.ambiguity[0], WassersteinBall)
    json.dumps(CROWD)  # the fixture itself is plain JSON
