"""Experiment configuration: parsing, validation, defaults and object builders.

Configs use the block text format of :mod:`licra.textfmt`::

    [experiment]
    name = "chain2"
    seeds = [1, 2]
    episodes = 1000
    horizon = 200

    [environment]
    name = "chain2"

    [learner]
    kind = "tabular"

Blocks and keys (defaults in parentheses):

``[experiment]``  name ("run"), seeds ([0]), episodes (1000), horizon (instance
default), out ("runs/<name>"), eval_window (100)
``[environment]`` name (required): ``chain2``, ``chain(...)``, ``random(...)``,
``merton``, ``lane`` or ``file``; ``file`` needs ``path``. ``merton`` and ``lane``
accept any of their parameter fields plus grid settings; ``lane`` also takes
``preset`` ("default" or "contested").
``[cost]``        form, kappa, lambda; only for chain, random and file instances
``[budget]``      n, delta ("auto"), mode ("soft"), charge (1)
``[learner]``     kind ("tabular" | "flat_baseline" | "linear_fa" | "exact"),
steps (episodes * horizon), step_rule ("global"), bound (1e6)
``[features]``    type ("one_hot" | "aggregation" | "radial" | "polynomial"),
groups, centers, width, degree
``[schedule]``    the fields of :class:`licra.qlearn.LearnSchedule`
``[oracle]``      tol (1e-10), max_iters (100000)

Resolution fills every default in, so a resolved config written back out and
read again resolves to the same thing.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import textfmt
from .budget import BudgetSpec, augment_env, augment_mdp
from .envs.instances import make_chain
from .envs.lane import LaneGrid, LaneParams, lane_discretize
from .envs.merton import MertonEnv, MertonGrid, MertonParams, merton_discretize
from .linear import FeatureMap, aggregation, one_hot, polynomial, radial
from .mdp import CostSpec, TabularMdp, load_mdp
from .qlearn import LearnSchedule

LEARNERS = ("tabular", "flat_baseline", "linear_fa", "exact")
FEATURES = ("one_hot", "aggregation", "radial", "polynomial")
STEP_RULES = ("global", "visits", "features")

LANE_PRESETS = {
    "default": {},
    # speed capped near v_min so that staying above it costs repeated pushes
    "contested": {"v_max": 1.0, "v0": 1.0, "v_min": 0.8, "goal_reward": 300.0},
}
LANE_GRID_KEYS = {"n_positions": 41, "n_velocities": 21}
MERTON_GRID_KEYS = {"wealth_buckets": 8, "split_buckets": 5, "wealth_max": 200.0, "time_buckets": 15,
                    "samples": 200, "discretize_seed": 0}


class ConfigError(textfmt.FormatError):
    pass


_SCHEMA: dict[str, dict[str, tuple[type | tuple, Any]]] = {
    "experiment": {"name": (str, "run"), "seeds": (list, [0]), "episodes": (int, 1000), "horizon": (int, None),
                   "out": (str, None), "eval_window": (int, 100)},
    "cost": {"form": (str, "zero"), "kappa": ((int, float), 0.0), "lambda": ((int, float), 0.0)},
    "budget": {"n": (int, None), "delta": ((int, float, str), "auto"), "mode": (str, "soft"),
               "charge": ((int, str), 1)},
    "learner": {"kind": (str, "tabular"), "steps": (int, None), "step_rule": (str, "global"),
                "bound": ((int, float), 1e6)},
    "features": {"type": (str, "one_hot"), "groups": (list, None), "centers": (list, None),
                 "width": ((int, float), None), "degree": (int, None)},
    "schedule": {f.name: (str if f.name == "exploration" else (int, float), f.default)
                 for f in dataclasses.fields(LearnSchedule)},
    "oracle": {"tol": ((int, float), 1e-10), "max_iters": (int, 100_000)},
}


def _env_schema(name: str) -> dict[str, tuple[Any, Any]]:
    if name == "merton":
        fields = {f.name: f.default for f in dataclasses.fields(MertonParams)}
        fields.update(MERTON_GRID_KEYS)
    elif name == "lane":
        fields = {f.name: f.default for f in dataclasses.fields(LaneParams)}
        fields = {k: (list(v) if isinstance(v, tuple) else v) for k, v in fields.items()}
        fields["zones"] = [list(z) for z in LaneParams().zones]
        fields.update(LANE_GRID_KEYS)
        fields["preset"] = "default"
    elif name == "file":
        return {"path": (str, None)}
    else:
        return {}
    out = {}
    for k, v in fields.items():
        if isinstance(v, bool):
            out[k] = (bool, v)
        elif isinstance(v, (int, float)):
            out[k] = ((int, float), v)
        elif isinstance(v, str):
            out[k] = (str, v)
        else:
            out[k] = (list, v)
    return out


def _env_family(name: str) -> str:
    head = name.split("(")[0].strip()
    if head in ("merton", "lane", "file"):
        return head
    try:
        make_chain(name)
    except (KeyError, ValueError, TypeError) as exc:
        raise KeyError(name) from exc
    return "instance"


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration; ``blocks`` holds every value explicitly."""

    blocks: dict
    source: str = ""

    def __getitem__(self, block: str) -> dict:
        return self.blocks[block]

    def get(self, block: str, key: str, default=None):
        return self.blocks.get(block, {}).get(key, default)

    @property
    def env_family(self) -> str:
        return _env_family(self.blocks["environment"]["name"])

    @property
    def learner(self) -> str:
        return self.blocks["learner"]["kind"]

    @property
    def seeds(self) -> list[int]:
        return list(self.blocks["experiment"]["seeds"])

    @property
    def out_dir(self) -> Path:
        return Path(self.blocks["experiment"]["out"])

    def dumps(self) -> str:
        return textfmt.dumps(self.blocks)

    def with_value(self, block: str, key: str, value) -> "ExperimentConfig":
        blocks = copy.deepcopy(self.blocks)
        blocks.setdefault(block, {})[key] = value
        return resolve(blocks, self.source)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.blocks == other.blocks


def _fail(text: str, message: str, block: str | None = None, key: str | None = None):
    line = textfmt.locate(text, block, key) if (text and block) else None
    if line is None and text and block and key:
        line = textfmt.locate(text, block)
    label = f"[{block}] {key}: " if key else (f"[{block}]: " if block else "")
    raise ConfigError(label + message, line, block, key)


def _check_type(text, block, key, value, kind):
    if value is None:
        return
    if isinstance(value, bool) != (kind is bool) or not isinstance(value, kind):
        names = " or ".join(k.__name__ for k in (kind if isinstance(kind, tuple) else (kind,)))
        _fail(text, f"expected {names}, got {value!r}", block, key)


def resolve(blocks: dict, text: str = "") -> ExperimentConfig:
    """Validate ``blocks`` and fill in every default."""
    blocks = copy.deepcopy(blocks)
    known = set(_SCHEMA) | {"environment"}
    for name in blocks:
        if name not in known:
            _fail(text, f"unknown block (expected one of {sorted(known)})", name)
    if "environment" not in blocks or "name" not in blocks["environment"]:
        _fail(text, "missing environment name", "environment", "name")
    env = dict(blocks["environment"])
    env_name = env["name"]
    if not isinstance(env_name, str):
        _fail(text, f"expected a string, got {env_name!r}", "environment", "name")
    try:
        family = _env_family(env_name)
    except KeyError:
        _fail(text, f"unknown environment {env_name!r}", "environment", "name")
    out: dict[str, dict] = {}
    for block, schema in _SCHEMA.items():
        given = blocks.get(block)
        if given is None and block in ("cost", "budget", "features"):
            continue
        given = given or {}
        for key in given:
            if key not in schema:
                _fail(text, f"unknown key (expected one of {sorted(schema)})", block, key)
        res = {}
        for key, (kind, default) in schema.items():
            value = given.get(key, default)
            _check_type(text, block, key, value, kind)
            res[key] = value
        out[block] = res
    env_schema = _env_schema(family)
    res_env = {"name": env_name}
    for key in env:
        if key != "name" and key not in env_schema:
            _fail(text, f"unknown key for environment {env_name!r}", "environment", key)
    for key, (kind, default) in env_schema.items():
        value = env.get(key, default)
        _check_type(text, "environment", key, value, kind)
        res_env[key] = value
    if family == "lane":
        preset = res_env["preset"]
        if preset not in LANE_PRESETS:
            _fail(text, f"unknown preset {preset!r}", "environment", "preset")
        for key, value in LANE_PRESETS[preset].items():
            if key not in env:
                res_env[key] = value
    if family == "file" and not res_env["path"]:
        _fail(text, "file environments need path", "environment", "path")
    out = {"experiment": out["experiment"], "environment": res_env, **{k: v for k, v in out.items() if k != "experiment"}}
    _semantic_checks(out, family, text)
    exp = out["experiment"]
    if exp["horizon"] is None:
        exp["horizon"] = {"merton": int(res_env.get("horizon", 75)), "lane": int(res_env.get("horizon", 200))}.get(
            family, 200)
    if exp["out"] is None:
        exp["out"] = f"runs/{exp['name']}"
    learner = out["learner"]
    if learner["steps"] is None:
        learner["steps"] = exp["episodes"] * exp["horizon"]
    if learner["kind"] == "linear_fa" and "features" not in out:
        out["features"] = {k: d for k, (_, d) in _SCHEMA["features"].items()}
    return ExperimentConfig(out, text)


def _semantic_checks(out: dict, family: str, text: str) -> None:
    exp = out["experiment"]
    if not exp["seeds"] or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in exp["seeds"]):
        _fail(text, "seeds must be a nonempty list of nonnegative integers", "experiment", "seeds")
    if exp["episodes"] < 0:
        _fail(text, "must be >= 0", "experiment", "episodes")
    if exp["horizon"] is not None and exp["horizon"] < 1:
        _fail(text, "must be >= 1", "experiment", "horizon")
    if exp["eval_window"] < 1:
        _fail(text, "must be >= 1", "experiment", "eval_window")
    kind = out["learner"]["kind"]
    if kind not in LEARNERS:
        _fail(text, f"unknown learner {kind!r} (expected one of {list(LEARNERS)})", "learner", "kind")
    if out["learner"]["step_rule"] not in STEP_RULES:
        _fail(text, f"unknown step rule (expected one of {list(STEP_RULES)})", "learner", "step_rule")
    if "cost" in out:
        if family in ("merton", "lane"):
            _fail(text, f"{family} defines its own cost; set it in [environment]", "cost")
        try:
            CostSpec.from_block(out["cost"])
        except ValueError as exc:
            _fail(text, str(exc), "cost", "form")
    if "budget" in out:
        if out["budget"]["n"] is None:
            _fail(text, "budget needs n", "budget", "n")
        try:
            BudgetSpec.from_block(out["budget"])
        except ValueError as exc:
            _fail(text, str(exc), "budget")
    if "features" in out and out["features"]["type"] not in FEATURES:
        _fail(text, f"unknown feature type (expected one of {list(FEATURES)})", "features", "type")
    try:
        LearnSchedule(**out["schedule"])
    except (TypeError, ValueError) as exc:
        _fail(text, str(exc), "schedule")


def loads(text: str) -> ExperimentConfig:
    return resolve(textfmt.loads(text), text)


def load(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads(text)


# -- builders ----------------------------------------------------------------------


def _params(cls, block: dict, extra: set[str]):
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in block.items():
        if k in names:
            if k == "zones":
                v = tuple(tuple(z) for z in v)
            elif isinstance(v, list):
                v = tuple(v)
            kw[k] = v
        elif k not in extra and k != "name":
            raise ConfigError(f"[environment] {k}: not a parameter of {cls.__name__}")
    return cls(**kw)


def merton_params(cfg: ExperimentConfig) -> MertonParams:
    return _params(MertonParams, cfg["environment"], set(MERTON_GRID_KEYS))


def lane_params(cfg: ExperimentConfig) -> LaneParams:
    return _params(LaneParams, cfg["environment"], set(LANE_GRID_KEYS) | {"preset"})


@dataclass
class Built:
    """What an experiment runs on.

    ``mdp``/``cost`` are set for tabular targets (after budget augmentation);
    ``env`` for simulators. ``base_states`` is the state count before
    augmentation. ``extra`` carries environment-specific handles (lane grid).
    """

    mdp: TabularMdp | None
    cost: CostSpec | None
    env: Any
    base_states: int | None
    extra: dict


def build_tabular(cfg: ExperimentConfig) -> Built:
    """Tabular model for the oracle (Merton is discretized by Monte Carlo)."""
    env = cfg["environment"]
    family = cfg.env_family
    extra: dict = {}
    if family == "instance":
        mdp, cost = make_chain(env["name"])
    elif family == "file":
        mdp, cost = load_mdp(env["path"])
    elif family == "lane":
        params = lane_params(cfg)
        grid = LaneGrid.regular(params, int(env["n_positions"]), int(env["n_velocities"]))
        mdp, cost, grid = lane_discretize(params, grid)
        extra = {"lane_params": params, "lane_grid": grid}
    else:
        params = merton_params(cfg)
        mdp, cost = merton_discretize(params, int(env["wealth_buckets"]), int(env["split_buckets"]),
                                      int(env["time_buckets"]), int(env["samples"]), int(env["discretize_seed"]),
                                      float(env["wealth_max"]))
    if "cost" in cfg.blocks:
        cost = CostSpec.from_block(cfg["cost"])
    base = mdp.n_states
    if "budget" in cfg.blocks:
        mdp, cost = augment_mdp(mdp, cost, BudgetSpec.from_block(cfg["budget"]))
    return Built(mdp, cost, None, base, extra)


def build_target(cfg: ExperimentConfig) -> Built:
    """Training target: the Merton simulator, otherwise the tabular model."""
    if cfg.env_family != "merton":
        return build_tabular(cfg)
    env_block = cfg["environment"]
    params = merton_params(cfg)
    env = MertonEnv(params, MertonGrid(int(env_block["wealth_buckets"]), int(env_block["split_buckets"]),
                                       float(env_block["wealth_max"])))
    base = env.n_states
    if "budget" in cfg.blocks:
        env = augment_env(env, BudgetSpec.from_block(cfg["budget"]))
    return Built(None, None, env, base, {})


def schedule(cfg: ExperimentConfig) -> LearnSchedule:
    return LearnSchedule(**cfg["schedule"])


def features(cfg: ExperimentConfig, n_states: int, n_branches: int) -> FeatureMap:
    f = cfg["features"]
    kind = f["type"]
    try:
        if kind == "one_hot":
            return one_hot(n_states, n_branches)
        if kind == "aggregation":
            groups = f["groups"] if f["groups"] is not None else [s // 2 for s in range(n_states)]
            if len(groups) != n_states:
                raise ValueError(f"groups has {len(groups)} entries for {n_states} states")
            return aggregation(groups, n_branches)
        coords = np.arange(n_states) / max(n_states - 1, 1)
        if kind == "radial":
            centers = f["centers"] if f["centers"] is not None else [0.0, 0.5, 1.0]
            width = f["width"] if f["width"] is not None else 0.25
            return radial(np.asarray(centers, dtype=float)[:, None], float(width), n_branches, coords)
        return polynomial(int(f["degree"] if f["degree"] is not None else 2), n_branches, 1, coords)
    except ValueError as exc:
        raise ConfigError(f"[features] {exc}", textfmt.locate(cfg.source, "features"), "features") from exc
