"""JSON game configurations.

Distributions in a config file are renormalized here, once, when they are
off by at most 1e-6; anything worse is rejected with the path of the
offending field.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .model import (
    CrowdReward,
    FiniteSet,
    FiniteSpace,
    GameSpec,
    ModelError,
    Singleton,
    TableReward,
    WassersteinBall,
    crowd_reference_kernel,
    normalize_rows,
)


class ConfigError(ModelError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def parse_number(text) -> float:
    """Decimal or fraction (``"1/3"``)."""
    if isinstance(text, bool):
        raise ValueError(f"not a number: {text!r}")
    if isinstance(text, (int, float)):
        return float(text)
    text = str(text).strip()
    try:
        value = float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"not a finite number: {text!r}")
    return value


def _get(obj, key, path, kind=None, default=...):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    if key not in obj:
        if default is ...:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
        return default
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected {getattr(kind, '__name__', kind)}")
    return value


def _number(value, path) -> float:
    try:
        return parse_number(value)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _array(value, path, ndim=None, shape=None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric array") from None
    if ndim is not None and arr.ndim != ndim:
        raise ConfigError(path, f"expected {ndim} dimensions, got {arr.ndim}")
    if shape is not None and arr.shape != shape:
        raise ConfigError(path, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(path, "entries must be finite")
    return arr


def _distribution(value, path, shape) -> np.ndarray:
    arr = _array(value, path, shape=shape)
    try:
        return normalize_rows(arr, name=path)
    except ModelError as exc:
        bad = np.abs(arr.sum(axis=-1) - 1.0) > 1e-6
        bad |= np.any(arr < -1e-6, axis=-1)
        where = path + "".join(f"[{i}]" for i in np.argwhere(bad)[0]) if np.any(bad) else path
        raise ConfigError(where, str(exc).removeprefix(f"{path}: ")) from None


def _space(value, path) -> FiniteSpace:
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of coordinates")
    coords = _array(value, path)
    if coords.ndim not in (1, 2):
        raise ConfigError(path, "coordinates must be scalars or equal-length vectors")
    if coords.ndim == 1:
        return FiniteSpace.grid(coords.tolist())
    labels = [tuple(float(x) for x in row) for row in coords]
    if len(set(labels)) != len(labels):
        raise ConfigError(path, "duplicate coordinates")
    return FiniteSpace(labels, coords)


def _reward(obj, spec_shape, states, actions):
    nS, nA = spec_shape
    kind = _get(obj, "type", "reward", str)
    if kind == "crowd":
        c = _number(_get(obj, "c", "reward", default=1e-7), "reward.c")
        center = _number(_get(obj, "center", "reward", default=2.0), "reward.center")
        if states.dim != 1 or actions.dim != 1:
            raise ConfigError("reward.type", "crowd reward needs one-dimensional states and actions")
        if not c > 0:
            raise ConfigError("reward.c", "must be > 0")
        return CrowdReward(c=c, state_x=states.coords[:, 0], action_x=actions.coords[:, 0], center=center)
    if kind == "table":
        r0 = _array(_get(obj, "r0", "reward"), "reward.r0", shape=(nS, nA, nS))
        beta = _number(_get(obj, "beta", "reward", default=0.0), "reward.beta")
        c = _number(_get(obj, "c", "reward", default=1.0), "reward.c")
        claimed = _get(obj, "bound", "reward", default=None)
        claimed = None if claimed is None else _number(claimed, "reward.bound")
        if beta != 0 and not c > 0:
            raise ConfigError("reward.c", "must be > 0")
        return TableReward(r0, beta, c, claimed)
    raise ConfigError("reward.type", f"unknown reward type {kind!r} (expected 'crowd' or 'table')")


def _kernel(obj, path, nS, nA, key="kernel"):
    if obj.get("crowd") is True:
        k = crowd_reference_kernel()
        if k.shape != (nS, nA, nS):
            raise ConfigError(f"{path}.crowd", "built-in crowd kernel needs 5 states and 3 actions")
        return k
    return _distribution(_get(obj, key, path), f"{path}.{key}", (nS, nA, nS))


def _ambiguity(obj, path, states, nS, nA):
    kind = _get(obj, "type", path, str)
    if kind == "singleton":
        return Singleton(_kernel(obj, path, nS, nA))
    if kind == "wasserstein":
        lam = _number(_get(obj, "lambda", path), f"{path}.lambda")
        if lam < 0:
            raise ConfigError(f"{path}.lambda", "must be >= 0")
        return WassersteinBall(_kernel(obj, path, nS, nA), lam, states.distance_matrix())
    if kind == "finite":
        members = _get(obj, "kernels", path, list)
        if not members:
            raise ConfigError(f"{path}.kernels", "needs at least one kernel")
        ks = [_distribution(k, f"{path}.kernels[{i}]", (nS, nA, nS)) for i, k in enumerate(members)]
        return FiniteSet(tuple(ks))
    raise ConfigError(f"{path}.type", f"unknown ambiguity type {kind!r} (expected 'singleton', 'wasserstein' or 'finite')")


def game_from_dict(cfg: dict, lam: float | None = None) -> GameSpec:
    """Build a game; ``lam`` overrides the radius of Wasserstein ambiguity."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "expected a JSON object")
    states = _space(_get(cfg, "states", ""), "states")
    actions = _space(_get(cfg, "actions", ""), "actions")
    nS, nA = len(states), len(actions)
    T = _get(cfg, "horizon", "", int)
    if isinstance(T, bool) or T < 1:
        raise ConfigError("horizon", "must be a positive integer")
    initial = _distribution(_get(cfg, "initial", ""), "initial", (nS,))
    reward = _reward(_get(cfg, "reward", "", dict), (nS, nA), states, actions)

    amb = _get(cfg, "ambiguity", "")
    if isinstance(amb, dict):
        fams = [_ambiguity(amb, "ambiguity", states, nS, nA)] * T
    elif isinstance(amb, list):
        if len(amb) != T:
            raise ConfigError("ambiguity", f"expected {T} entries (one per time step), got {len(amb)}")
        fams = [_ambiguity(a, f"ambiguity[{t}]", states, nS, nA) for t, a in enumerate(amb)]
    else:
        raise ConfigError("ambiguity", "expected an object or a list of objects")
    if lam is not None:
        fams = [WassersteinBall(f.kernel, lam, f.cost) if isinstance(f, WassersteinBall) else f for f in fams]
    try:
        return GameSpec(states, actions, T, initial, reward, tuple(fams))
    except ModelError as exc:
        raise ConfigError("<root>", str(exc)) from None


def load_game(path, lam: float | None = None) -> GameSpec:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return game_from_dict(cfg, lam)
