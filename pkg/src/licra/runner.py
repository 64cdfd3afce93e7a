"""Experiment commands behind the CLI: train, oracle and sweep.

Every run writes CSV files whose bytes depend only on the resolved config and
the seed. Floats are written with ``repr``; missing values are empty fields.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, textfmt
from .config import Built, ExperimentConfig, build_tabular, build_target, features, schedule
from .envs.lane import expected_audit
from .exact import (
    classical_value_iteration,
    extract_policy,
    occupancy,
    policy_to_blocks,
    value_iteration,
)
from .linear import train_fa, weights_to_blocks
from .qlearn import LearnerDiagnostics, train, train_flat_baseline

SCHEMA_VERSION = 1
TRAIN_COLUMNS = ("episode", "return", "interventions", "epsilon", "oracle_gap", "td_error")
VALUES_COLUMNS = ("state", "base_state", "z", "value", "intervene", "action")
RESIDUAL_COLUMNS = ("iteration", "residual")
CLASSICAL_COLUMNS = ("state", "value", "abs_diff")
SWEEP_COLUMNS = ("axis", "value", "seed", "mean_return", "mean_interventions",
                 "zone1_violations", "zone2_violations", "zone3_violations")
SCHEMAS = {"train": TRAIN_COLUMNS, "oracle_values": VALUES_COLUMNS, "oracle_residuals": RESIDUAL_COLUMNS,
           "classical_values": CLASSICAL_COLUMNS, "sweep": SWEEP_COLUMNS}


class RunError(RuntimeError):
    """Runtime or numerical failure; ``diagnostics`` is a path when one was written."""

    def __init__(self, message: str, diagnostics: Path | None = None):
        self.diagnostics = diagnostics
        super().__init__(message)


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(path: Path, columns: tuple[str, ...], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, seeds: list[int], outputs: list[str],
                   extra: dict | None = None) -> Path:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "library_version": __version__,
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "seeds": seeds,
        "config": cfg.blocks,
        "csv_columns": {k: list(v) for k, v in SCHEMAS.items()},
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- train --------------------------------------------------------------------------


@dataclass
class SeedRun:
    seed: int
    diagnostics: LearnerDiagnostics
    policy: object | None
    blocks: dict
    summary: dict


def _oracle_values(built: Built) -> np.ndarray | None:
    if built.mdp is None:
        return None
    return value_iteration(built.mdp, built.cost).values


def _summary(cfg: ExperimentConfig, built: Built, diag: LearnerDiagnostics, policy) -> dict:
    window = cfg["experiment"]["eval_window"]
    out = {
        "mean_return": float(diag.returns[-window:].mean()) if diag.episodes else float("nan"),
        "mean_interventions": float(diag.interventions[-window:].mean()) if diag.episodes else float("nan"),
        "violations": (None, None, None),
    }
    lane = built.extra.get("lane_params")
    if lane is not None and policy is not None and "budget" not in cfg.blocks:
        audit = expected_audit(lane, built.mdp, built.extra["lane_grid"], policy)
        out["violations"] = tuple(audit.violations)
    return out


def _exact_run(cfg: ExperimentConfig, built: Built) -> tuple[LearnerDiagnostics, object]:
    """The DP policy, with expected per-episode numbers from the model."""
    mdp, cost = built.mdp, built.cost
    v = value_iteration(mdp, cost, cfg["oracle"]["tol"], cfg["oracle"]["max_iters"]).values
    pol = extract_policy(mdp, cost, v)
    horizon = cfg["experiment"]["horizon"]
    occ = occupancy(mdp, pol, horizon)
    act = pol.executed()
    rows = np.arange(mdp.n_states)
    gain = mdp.reward[act, rows] - cost.table(mdp)[act, rows]
    episodes = max(cfg["experiment"]["episodes"], 1)
    ret = np.full(episodes, float(occ @ gain))
    k = np.full(episodes, float(occ @ (act != 0)))
    diag = LearnerDiagnostics(ret, k, np.zeros(episodes), np.zeros(episodes), np.zeros(mdp.n_states, dtype=np.int64))
    return diag, pol


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedRun:
    kind = cfg.learner
    if kind == "exact":
        built = build_tabular(cfg)
        diag, pol = _exact_run(cfg, built)
        return SeedRun(seed, diag, pol, policy_to_blocks(pol), _summary(cfg, built, diag, pol))
    built = build_target(cfg)
    target = built.mdp if built.mdp is not None else built.env
    exp = cfg["experiment"]
    sched = schedule(cfg)
    oracle = _oracle_values(built)
    if kind == "tabular":
        res = train(target, built.cost, sched, exp["episodes"], exp["horizon"], seed, oracle)
        return SeedRun(seed, res.diagnostics, res.policy, policy_to_blocks(res.policy),
                       _summary(cfg, built, res.diagnostics, res.policy))
    if kind == "flat_baseline":
        res = train_flat_baseline(target, built.cost, sched, exp["episodes"], exp["horizon"], seed, oracle)
        return SeedRun(seed, res.diagnostics, res.policy, policy_to_blocks(res.policy),
                       _summary(cfg, built, res.diagnostics, res.policy))
    n_states = built.mdp.n_states if built.mdp is not None else target.n_states
    n_branches = (built.mdp.n_branches if built.mdp is not None else target.n_actions + 1)
    feats = features(cfg, n_states, n_branches)
    learner = cfg["learner"]
    res = train_fa(target, built.cost, feats, sched, learner["steps"], seed, exp["horizon"], learner["step_rule"],
                   float(learner["bound"]), oracle)
    return SeedRun(seed, res.diagnostics, None, weights_to_blocks(res.weights, feats),
                   _summary(cfg, built, res.diagnostics, None))


def _train_rows(diag: LearnerDiagnostics):
    for ep in range(diag.episodes):
        yield (ep, float(diag.returns[ep]), diag.interventions[ep], float(diag.epsilon[ep]),
               None if diag.sup_norm is None else float(diag.sup_norm[ep]),
               None if diag.td_error is None else float(diag.td_error[ep]))


def _artifact_name(cfg: ExperimentConfig, seed: int) -> str:
    return f"{'weights' if cfg.learner == 'linear_fa' else 'policy'}_seed{seed}.txt"


def _train_one(args) -> dict:
    cfg, seed, out = args
    out = Path(out)
    try:
        run = run_seed(cfg, seed)
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        diag = out / f"diagnostics_seed{seed}.json"
        diag.write_text(json.dumps({"seed": seed, "error": type(exc).__name__, "message": str(exc)}, indent=2) + "\n",
                        encoding="utf-8")
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}", "diagnostics": str(diag)}
    write_csv(out / f"train_seed{seed}.csv", TRAIN_COLUMNS, _train_rows(run.diagnostics))
    textfmt.write(out / _artifact_name(cfg, seed), run.blocks)
    return {"seed": seed, "summary": run.summary}


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_train(cfg: ExperimentConfig, out: Path | None = None, jobs: int = 1) -> list[dict]:
    out = Path(out) if out is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.seeds
    outputs = [f"train_seed{s}.csv" for s in seeds] + [_artifact_name(cfg, s) for s in seeds]
    write_manifest(out, "train", cfg, seeds, outputs)
    results = _map(_train_one, [(cfg, s, str(out)) for s in seeds], jobs)
    failed = [r for r in results if "error" in r]
    if failed:
        raise RunError(failed[0]["error"], Path(failed[0]["diagnostics"]))
    return results


# -- oracle -------------------------------------------------------------------------


def cmd_oracle(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    out = Path(out) if out is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    built = build_tabular(cfg)
    mdp, cost = built.mdp, built.cost
    zero = cost.form == "zero"
    outputs = ["oracle_values.csv", "oracle_residuals.csv", "oracle_policy.txt"]
    if zero:
        outputs.append("classical_values.csv")
    write_manifest(out, "oracle", cfg, [], outputs, {"n_states": mdp.n_states})
    vi = value_iteration(mdp, cost, cfg["oracle"]["tol"], cfg["oracle"]["max_iters"])
    pol = extract_policy(mdp, cost, vi.values)
    base = built.base_states
    augmented = "budget" in cfg.blocks
    rows = []
    for s in range(mdp.n_states):
        bs, z = (s % base, s // base - 1) if augmented else (s, None)
        rows.append((s, bs, z, float(vi.values[s]), bool(pol.intervene[s]), int(pol(s))))
    write_csv(out / "oracle_values.csv", VALUES_COLUMNS, rows)
    write_csv(out / "oracle_residuals.csv", RESIDUAL_COLUMNS, ((k + 1, r) for k, r in enumerate(vi.residuals)))
    textfmt.write(out / "oracle_policy.txt", policy_to_blocks(pol))
    result = {"values": vi.values, "policy": pol, "iterations": vi.iterations}
    if zero:
        flat = classical_value_iteration(mdp, cost, tol=min(cfg["oracle"]["tol"], 1e-12))
        diff = np.abs(flat - vi.values)
        write_csv(out / "classical_values.csv", CLASSICAL_COLUMNS,
                  ((s, float(flat[s]), float(diff[s])) for s in range(mdp.n_states)))
        result["classical_gap"] = float(diff.max())
        if diff.max() >= 1e-8:
            raise RunError(f"impulse and classical values differ by {diff.max():.3e}")
    return result


# -- sweep --------------------------------------------------------------------------


def _sweep_cell(args) -> tuple:
    cfg, axis, value, seed = args
    run = run_seed(cfg, seed)
    s = run.summary
    return (axis, value, seed, s["mean_return"], s["mean_interventions"], *s["violations"])


def cmd_sweep(cfgs: list[tuple[object, ExperimentConfig]], axis: str, out: Path, jobs: int = 1) -> list[tuple]:
    """``cfgs`` pairs each axis value with its resolved config."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    first = cfgs[0][1]
    name = f"sweep_{axis.replace('.', '_')}.csv"
    write_manifest(out, "sweep", first, first.seeds, [name],
                   {"axis": axis, "values": [v for v, _ in cfgs], "configs": [c.blocks for _, c in cfgs]})
    cells = [(cfg, axis, value, seed) for value, cfg in cfgs for seed in cfg.seeds]
    rows = _map(_sweep_cell, cells, jobs)
    order = {repr(v): i for i, (v, _) in enumerate(cfgs)}
    rows.sort(key=lambda r: (order[repr(r[1])], r[2]))
    write_csv(out / name, SWEEP_COLUMNS, rows)
    return rows
