"""Experiment configuration: a versioned JSON document validated before any sampling.

Schema (``schema_version`` 1). Top-level keys common to every kind:

    schema_version  int, must be 1
    kind            one of KINDS
    seed            non-negative int, master seed
    replicas        positive int
    workers         positive int or null (null: all available cores)
    out             output directory or null

Kind-specific keys and their defaults are listed in ``DEFAULTS``. Models are
given as ``{"q_levels": [...], "x_levels": [...]}``. Unknown keys are errors.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ParameterError
from .rpc import OrderParam, RpcParams

SCHEMA_VERSION = 1
KINDS = ("sample", "evolve", "qs-test", "velocity", "counterexample", "coalescent", "continuity")

TWO_LEVEL = {"q_levels": [0.2, 0.5], "x_levels": [0.3, 0.6]}
QS_GRID = [[1, 0.5], [1, 1.0], [2, 0.5], [2, 1.0], [3, 0.5], [3, 1.0]]

COMMON = {"schema_version": SCHEMA_VERSION, "seed": 0, "workers": None, "out": None}

DEFAULTS: dict[str, dict[str, Any]] = {
    "sample": {"model": TWO_LEVEL, "M": 256, "n": 64, "construction": "tree", "replicas": 1},
    "evolve": {"model": TWO_LEVEL, "M": 256, "n": 32, "steps": 8, "r": 1, "lam": 1.0, "replicas": 1},
    "qs-test": {"model": TWO_LEVEL, "M": 256, "grid": QS_GRID, "steps": 1, "atom_power": 1.0, "replicas": 2000},
    "velocity": {
        "model": {"q_levels": [0.0], "x_levels": [0.5]},
        "M": 4096,
        "r_values": [1, 2],
        "lam": 1.0,
        "inner_draws": 16,
        "rel_tol": 0.05,
        "replicas": 10000,
    },
    "counterexample": {
        "R": 1,
        "block_a": {"q_levels": [0.2], "x_levels": [0.3]},
        "q_levels_b": [0.4],
        "base_x": 0.2,
        "M": 128,
        "grid": [[1, 1.0], [2, 1.0]],
        "steps": 1,
        "n": 64,
        "replicas": 2000,
    },
    "coalescent": {"u_values": [0.5, 1.0, 2.0], "semigroup": [0.5, 0.7], "du": 1.0 / 64, "replicas": 10000},
    "continuity": {
        "f": {"q_levels": [0.2, 0.5], "x_levels": [0.3, 0.6]},
        "g": {"q_levels": [0.2, 0.5], "x_levels": [0.3 - 0.01**2 / 0.3, 0.6]},
        "zeta": 0.6,
        "n": 8,
        "eps": 0.01,
        "du": 1.0 / 64,
        "replicas": 10000,
    },
}

CONSTRUCTIONS = ("tree", "recursive", "continuous")


class ConfigError(ParameterError):
    """The configuration document violates the schema."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    data: dict

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def replicas(self) -> int:
        return self.data["replicas"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def default_config(kind: str) -> dict:
    if kind not in DEFAULTS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    d = {"kind": kind, **copy.deepcopy(COMMON), **copy.deepcopy(DEFAULTS[kind])}
    return d


def load_document(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return doc


def model_params(spec: Any, where: str) -> RpcParams:
    if not isinstance(spec, dict) or set(spec) != {"q_levels", "x_levels"}:
        raise ConfigError(f"{where}: expected an object with keys q_levels and x_levels")
    try:
        return RpcParams(tuple(spec["q_levels"]), tuple(spec["x_levels"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _int(d: dict, key: str, lo: int = 1) -> None:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{key} must be an integer >= {lo}, got {v!r}")


def _num(d: dict, key: str, lo: float, hi: float | None = None, open_lo: bool = True) -> None:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    if (v <= lo if open_lo else v < lo) or (hi is not None and v >= hi):
        bound = f"({lo}, {hi})" if hi is not None else f"> {lo}"
        raise ConfigError(f"{key} = {v!r} outside {bound}")


def _grid(d: dict) -> None:
    g = d["grid"]
    if not isinstance(g, list) or not g:
        raise ConfigError("grid must be a non-empty list of [r, lam] pairs")
    for pair in g:
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ConfigError(f"grid entry {pair!r} is not an [r, lam] pair")
        r, lam = pair
        if isinstance(r, bool) or not isinstance(r, int) or r < 1:
            raise ConfigError(f"grid entry {pair!r}: r must be an integer >= 1")
        if isinstance(lam, bool) or not isinstance(lam, (int, float)) or lam <= 0:
            raise ConfigError(f"grid entry {pair!r}: lam must be positive")


def validate(doc: dict, kind: str | None = None) -> ExperimentConfig:
    """Merge ``doc`` over the defaults for its kind and check every field."""
    kind = doc.get("kind", kind)
    if kind is None:
        raise ConfigError("config does not name an experiment kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    data = default_config(kind)
    unknown = sorted(set(doc) - set(data))
    if unknown:
        raise ConfigError(f"unknown config keys for {kind}: {', '.join(unknown)}")
    data.update(copy.deepcopy(doc))
    data["kind"] = kind
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {data['schema_version']!r} is not supported (expected {SCHEMA_VERSION})")
    _int(data, "seed", 0)
    _int(data, "replicas", 1)
    if data["workers"] is not None:
        _int(data, "workers", 1)
    if data["out"] is not None and not isinstance(data["out"], str):
        raise ConfigError("out must be a path string or null")

    if kind in ("sample", "evolve", "qs-test", "velocity"):
        model_params(data["model"], "model")
    if kind in ("sample", "evolve", "qs-test", "velocity", "counterexample"):
        _int(data, "M", 1)
    if kind == "sample":
        _int(data, "n", 2)
        if data["construction"] not in CONSTRUCTIONS:
            raise ConfigError(f"construction must be one of {', '.join(CONSTRUCTIONS)}")
    elif kind == "evolve":
        _int(data, "n", 2)
        _int(data, "steps", 1)
        _int(data, "r", 1)
        _num(data, "lam", 0.0)
    elif kind == "qs-test":
        _grid(data)
        _int(data, "steps", 1)
        _num(data, "atom_power", 0.0)
        if data["replicas"] < 100:
            raise ConfigError("qs-test needs replicas >= 100")
    elif kind == "velocity":
        if not data["r_values"] or not all(isinstance(r, int) and r >= 1 for r in data["r_values"]):
            raise ConfigError("r_values must be a non-empty list of integers >= 1")
        _num(data, "lam", 0.0)
        _int(data, "inner_draws", 1)
        _num(data, "rel_tol", 0.0)
        if data["replicas"] < 2:
            raise ConfigError("velocity needs replicas >= 2")
    elif kind == "counterexample":
        _int(data, "R", 1)
        a = model_params(data["block_a"], "block_a")
        qb = data["q_levels_b"]
        if not isinstance(qb, list) or not qb:
            raise ConfigError("q_levels_b must be a non-empty list")
        _num(data, "base_x", 0.0, 1.0)
        if data["base_x"] + a.x_levels[-1] >= 1.0:
            raise ConfigError("base_x + x levels of block_a must stay below 1")
        _grid(data)
        _int(data, "steps", 1)
        _int(data, "n", 2)
        if data["replicas"] < 100:
            raise ConfigError("counterexample needs replicas >= 100")
        if a.q_levels[0] <= 0.0 or any(q <= 0.0 for q in qb):
            raise ConfigError("block q levels must be positive (the shared base level sits at q = 0)")
    elif kind == "coalescent":
        us = data["u_values"]
        if not isinstance(us, list) or not us or not all(isinstance(u, (int, float)) and u > 0 for u in us):
            raise ConfigError("u_values must be a non-empty list of positive times")
        sg = data["semigroup"]
        if not (isinstance(sg, list) and len(sg) == 2 and all(isinstance(u, (int, float)) and u > 0 for u in sg)):
            raise ConfigError("semigroup must be a pair [u, v] of positive times")
        _num(data, "du", 0.0)
    elif kind == "continuity":
        f = model_params(data["f"], "f")
        g = model_params(data["g"], "g")
        _num(data, "zeta", 0.0, 1.0 + 1e-12)
        _num(data, "eps", 0.0)
        _int(data, "n", 2)
        _num(data, "du", 0.0)
        if abs(f.zeta - g.zeta) > 1e-12:
            raise ConfigError("f and g must share zeta (their largest x level)")
        if f.zeta > data["zeta"] + 1e-12:
            raise ConfigError("zeta must be at least the largest x level of f and g")
        l1 = OrderParam.step(f.q_levels, f.x_levels).l1_distance(OrderParam.step(g.q_levels, g.x_levels))
        if l1 > data["eps"] ** 2 * (1 + 1e-6):
            raise ConfigError(f"||f - g||_1 = {l1:.3e} exceeds eps^2 = {data['eps'] ** 2:.3e}")
    return ExperimentConfig(kind, data)
