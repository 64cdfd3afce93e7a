"""Property suites run by ``licra verify`` and the acceptance tests.

Each suite returns a :class:`SuiteResult` with one :class:`Check` per property
and the measured values behind it. Suites are deterministic.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import rng as rngmod
from .budget import BudgetSpec, augment_env, augment_mdp, check_budget_satisfaction, stratum_values
from .envs.base import TabularEnv
from .envs.instances import SUITE, make_chain, random_mdp
from .envs.lane import LaneParams, expected_audit, lane_discretize
from .envs.merton import MertonEnv
from .exact import (
    bellman_apply,
    classical_value_iteration,
    extract_policy,
    never_intervene_threshold,
    value_iteration,
)
from .linear import aggregation, one_hot, projected_fixed_point, train_fa, verify_error_bound
from .mdp import CostSpec, TabularMdp
from .qlearn import LearnSchedule, train, train_flat_baseline


@dataclass
class Check:
    name: str
    passed: bool
    value: float | str | None = None
    limit: float | str | None = None


@dataclass
class SuiteResult:
    name: str
    checks: list[Check]
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"suite": self.name, "passed": self.passed, "seconds": self.seconds,
                "checks": [asdict(c) for c in self.checks], "metrics": self.metrics}


def _timed(fn: Callable[[], SuiteResult]) -> SuiteResult:
    t0 = time.perf_counter()
    res = fn()
    res.seconds = time.perf_counter() - t0
    return res


# -- random instances ---------------------------------------------------------------


def random_cost(g: np.random.Generator, n_states: int) -> CostSpec:
    """One of the cost forms with random parameters."""
    form = int(g.integers(0, 5))
    kappa = float(g.uniform(0.01, 2.0))
    if form == 0:
        return CostSpec.zero()
    if form == 1:
        return CostSpec.fixed(kappa)
    if form == 2:
        return CostSpec.proportional(kappa, float(g.uniform(0, 1)))
    if form == 3:
        return CostSpec.quadratic(kappa, float(g.uniform(0, 1)))
    extra = g.uniform(0, 1, size=n_states)
    return CostSpec.state_dependent(kappa, lambda s, x, extra=extra: float(extra[s] * abs(x)))


def random_instance(seed: int, max_states: int = 20, max_actions: int = 5) -> tuple[TabularMdp, CostSpec]:
    g = rngmod.stream(seed, "verify", "instance")
    n = int(g.integers(1, max_states + 1))
    m = int(g.integers(1, max_actions + 1))
    gamma = float(g.uniform(0.0, 0.99))
    P = g.random((m + 1, n, n)) * (g.random((m + 1, n, n)) < 0.5)
    P[..., 0] += 1e-3
    P /= P.sum(axis=2, keepdims=True)
    R = g.normal(size=(m + 1, n))
    av = g.uniform(-2, 2, size=m)
    return TabularMdp(P, R, gamma, av, name=f"verify({seed})"), random_cost(g, n)


# -- suites -------------------------------------------------------------------------


def contraction(instances: int = 1000, pairs: int = 5, slack: float = 1e-12) -> SuiteResult:
    worst = -np.inf
    failures = 0
    for i in range(instances):
        mdp, cost = random_instance(i)
        costs = cost.table(mdp)
        g = rngmod.stream(i, "verify", "values")
        for _ in range(pairs):
            scale = float(g.uniform(0.1, 100))
            v, w = g.normal(size=(2, mdp.n_states)) * scale
            lhs = np.max(np.abs(bellman_apply(mdp, cost, v, costs) - bellman_apply(mdp, cost, w, costs)))
            rhs = mdp.gamma * np.max(np.abs(v - w))
            worst = max(worst, lhs - rhs)
            failures += lhs > rhs + slack
    return SuiteResult("contraction", [Check("|Tv - Tw| <= gamma |v - w| + 1e-12", failures == 0, failures, 0)],
                       {"instances": instances, "pairs": instances * pairs, "max_excess": float(worst)})


def rounding_allowance(mdp: TabularMdp, cost: CostSpec, v: np.ndarray) -> float:
    """Bound on the floating-point error of one computed sup-norm step ``|T v - v|``."""
    scale = float(np.max(np.abs(mdp.reward - cost.table(mdp)))) + float(np.max(np.abs(v)))
    return 4.0 * (mdp.n_states + 2) * np.finfo(float).eps * scale


def fixed_point(slack: float = 1e-12, tol: float = 1e-8) -> SuiteResult:
    worst_excess, worst_res = -np.inf, 0.0
    for name in SUITE:
        mdp, cost = make_chain(name)
        vi = value_iteration(mdp, cost, tol=1e-12)
        r = np.asarray(vi.residuals)
        delta = rounding_allowance(mdp, cost, vi.values)
        excess = r[1:] - (mdp.gamma + slack) * r[:-1] - delta
        worst_excess = max(worst_excess, float(np.max(excess)) if excess.size else -np.inf)
        worst_res = max(worst_res, float(np.max(np.abs(bellman_apply(mdp, cost, vi.values) - vi.values))))
    return SuiteResult("fixed_point", [
        Check("r[k+1] <= (gamma + 1e-12) r[k] up to rounding", worst_excess <= 0.0, worst_excess, 0.0),
        Check("|T v* - v*| < 1e-8", worst_res < tol, worst_res, tol),
    ], {"instances": list(SUITE)})


def zero_cost(instances: int = 100, tol: float = 1e-10) -> SuiteResult:
    worst = 0.0
    for i in range(instances):
        mdp, _ = random_instance(10_000 + i)
        a = value_iteration(mdp, CostSpec.zero(), tol=1e-13).values
        b = classical_value_iteration(mdp, tol=1e-13)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return SuiteResult("zero_cost", [Check("|v*_impulse - v*_classical| < 1e-10", worst < tol, worst, tol)],
                       {"instances": instances})


def threshold(instances: int = 200) -> SuiteResult:
    bad = 0
    for i in range(instances):
        mdp, cost = random_instance(20_000 + i)
        g = rngmod.stream(i, "verify", "kappa")
        kappa = never_intervene_threshold(mdp) * float(g.uniform(1.0, 3.0)) + 1e-9
        forms = [CostSpec.fixed(kappa), CostSpec.proportional(kappa, 0.5), CostSpec.quadratic(kappa, 0.5)]
        for c in forms:
            pol = extract_policy(mdp, c, value_iteration(mdp, c).values)
            bad += bool(pol.intervene.any())
    return SuiteResult("threshold", [Check("never intervene above 2 max|R| / (1 - gamma)", bad == 0, bad, 0)],
                       {"instances": instances})


QLEARN_SCHEDULE = LearnSchedule()


def qlearn(seeds: int = 20, episodes: int = 1000, horizon: int = 200, tol: float = 0.05,
           min_visits: int = 100) -> SuiteResult:
    gaps, mismatches, rows = [], 0, []
    for name in SUITE:
        mdp, cost = make_chain(name)
        vi = value_iteration(mdp, cost)
        oracle = extract_policy(mdp, cost, vi.values)
        for seed in range(seeds):
            res = train(mdp, cost, QLEARN_SCHEDULE, episodes, horizon, seed)
            gap = float(np.max(np.abs(res.q.values() - vi.values)))
            seen = res.q.state_visits() >= min_visits
            wrong = int(np.sum((res.policy.intervene != oracle.intervene)[seen]))
            gaps.append(gap)
            mismatches += wrong
            rows.append({"instance": name, "seed": seed, "gap": gap, "mismatched_states": wrong})
    worst = max(gaps)
    return SuiteResult("qlearn", [
        Check("|v_Q - v*| < 0.05 for every seed", worst < tol, worst, tol),
        Check("intervention sets match on states visited >= 100 times", mismatches == 0, mismatches, 0),
    ], {"steps": episodes * horizon, "runs": rows})


def fa_instances(count: int = 20):
    """Randomized (model, coarse feature) pairs: six states aggregated into three groups."""
    for i in range(count):
        mdp, cost = random_mdp(100 + i, 6, 2, 0.9)
        g = rngmod.stream(i, "verify", "groups")
        groups = g.permutation(np.repeat(np.arange(3), 2))
        yield mdp, cost, aggregation(groups, mdp.n_branches)


FA_SCHEDULE = LearnSchedule(epsilon0=1.0, epsilon_min=1.0, epsilon_decay=1.0)


def fa_bound(count: int = 20, steps: int = 400_000, slack: float = 1e-8) -> SuiteResult:
    rows, failures, fp_failures = [], 0, 0
    for k, (mdp, cost, feats) in enumerate(fa_instances(count)):
        res = train_fa(mdp, cost, feats, FA_SCHEDULE, steps, seed=k, step_rule="features")
        D = res.sampling_distribution()
        chk = verify_error_bound(mdp, cost, feats, res.weights, D, slack)
        failures += not chk.holds
        # the exact projected fixed point under the same D, to separate sampling error from the bound itself
        phi = feats.matrix(mdp.n_states)
        r_fp = projected_fixed_point(mdp, cost, phi, D)
        at_fp = verify_error_bound(mdp, cost, phi, r_fp, D, slack)
        fp_failures += not at_fp.holds
        rows.append({"instance": mdp.name, "lhs": chk.lhs, "rhs": chk.rhs, "holds": chk.holds,
                     "fixed_point_lhs": at_fp.lhs, "fixed_point_holds": at_fp.holds,
                     "distance_to_fixed_point": float(np.max(np.abs(phi @ (res.weights.r - r_fp))))})
    return SuiteResult("fa_bound", [
        Check("|phi r* - Q*|_D <= (1 - gamma^2)^-1/2 |Pi Q* - Q*|_D + 1e-8", failures == 0, failures, 0),
    ], {"instances": rows, "fixed_point_failures": fp_failures})


def fa_onehot(episodes: int = 200, horizon: int = 100) -> SuiteResult:
    worst = 0.0
    for k, name in enumerate(SUITE):
        mdp, cost = make_chain(name)
        tab = train(mdp, cost, QLEARN_SCHEDULE, episodes, horizon, seed=k)
        fa = train_fa(mdp, cost, one_hot(mdp.n_states, mdp.n_branches), QLEARN_SCHEDULE, episodes * horizon,
                      seed=k, horizon=horizon, step_rule="visits")
        q_fa = fa.weights.r.reshape(mdp.n_states, mdp.n_branches)
        worst = max(worst, float(np.max(np.abs(q_fa - tab.q.branches().T))))
    return SuiteResult("fa_onehot", [Check("one-hot weights equal the tabular Q bitwise", worst == 0.0, worst, 0.0)],
                       {"instances": list(SUITE)})


BUDGET_SUITE = (("chain2", 1), ("chain(4)", 1), ("chain(4)", 3), ("random(11, 3, 2)", 2), ("random(5, 5, 1)", 2))


def budget_hard(episodes: int = 10_000, horizon: int = 20) -> SuiteResult:
    worst = 0.0
    for k, (name, n) in enumerate(BUDGET_SUITE):
        mdp, cost = make_chain(name)
        env = augment_env(TabularEnv(mdp, cost), BudgetSpec(n, mode="hard"))
        learned = train(env, None, QLEARN_SCHEDULE, 300, horizon, seed=k).policy
        for label, pol in (("learned", learned), ("always", lambda s: 1)):
            frac = check_budget_satisfaction(pol, env, n, episodes, horizon, rngmod.stream(k, "verify", label))
            worst = max(worst, frac)
    return SuiteResult("budget_hard", [Check("hard-mode violation fraction == 0", worst == 0.0, worst, 0.0)],
                       {"episodes": episodes, "instances": [list(x) for x in BUDGET_SUITE]})


def budget_soft(episodes: int = 10_000, horizon: int = 20) -> SuiteResult:
    worst = 0.0
    for k, (name, n) in enumerate(BUDGET_SUITE):
        mdp, cost = make_chain(name)
        spec = BudgetSpec(n, mode="soft")
        aug, acost = augment_mdp(mdp, cost, spec)
        pol = extract_policy(aug, acost, value_iteration(aug, acost).values)
        env = augment_env(TabularEnv(mdp, cost), spec)
        worst = max(worst, check_budget_satisfaction(pol, env, n, episodes, horizon,
                                                     rngmod.stream(k, "verify", "soft")))
    return SuiteResult("budget_soft", [Check("soft mode, auto delta, exact policy: violation fraction == 0",
                                             worst == 0.0, worst, 0.0)], {"episodes": episodes})


def budget_monotone() -> SuiteResult:
    worst = -np.inf
    for name, n in BUDGET_SUITE:
        mdp, cost = make_chain(name)
        for mode in ("soft", "hard"):
            aug, acost = augment_mdp(mdp, cost, BudgetSpec(n, mode=mode))
            v = stratum_values(value_iteration(aug, acost).values, mdp.n_states)
            worst = max(worst, float(np.max(v[:-1] - v[1:])))
    return SuiteResult("budget_monotone", [Check("v*(s, z) non-decreasing in z", worst <= 1e-9, worst, 1e-9)])


def merton(seeds: int = 10, episodes: int = 2000, window: int = 100, min_wins: int = 8) -> SuiteResult:
    sched = LearnSchedule(epsilon_decay=0.995)
    rows, wins = [], 0
    for seed in range(seeds):
        a = train(MertonEnv(), None, sched, episodes, 75, seed).diagnostics
        b = train_flat_baseline(MertonEnv(), None, sched, episodes, 75, seed).diagnostics
        ra, rb = float(a.returns[-window:].mean()), float(b.returns[-window:].mean())
        ia, ib = float(a.interventions[-window:].mean()), float(b.interventions[-window:].mean())
        wins += ra >= rb
        rows.append({"seed": seed, "licra_return": ra, "flat_return": rb,
                     "licra_interventions": ia, "flat_interventions": ib})
    ia = np.mean([r["licra_interventions"] for r in rows])
    ib = np.mean([r["flat_interventions"] for r in rows])
    return SuiteResult("merton", [
        Check(f"impulse return >= flat return on >= {min_wins} of {seeds} seeds", wins >= min_wins, wins, min_wins),
        Check("fewer mean interventions than flat", bool(ia < ib), float(ia), float(ib)),
    ], {"episodes": episodes, "runs": rows})


LANE_K = (0.1, 1.0, 10.0)


def prioritization(presets: tuple[str, ...] = ("default", "contested")) -> SuiteResult:
    from .config import LANE_PRESETS

    checks, rows = [], []
    for preset in presets:
        audits = []
        for K in LANE_K:
            params = replace(LaneParams(), K=K, **LANE_PRESETS[preset])
            mdp, cost, grid = lane_discretize(params)
            pol = extract_policy(mdp, cost, value_iteration(mdp, cost).values)
            audit = expected_audit(params, mdp, grid, pol)
            audits.append(audit)
            rows.append({"preset": preset, "K": K, "violations": list(audit.violations),
                         "interventions": audit.interventions})
        last = audits[-1].violations
        counts = [a.interventions for a in audits]
        checks.append(Check(f"{preset}: zone-3 <= zone-1 violations at K={LANE_K[-1]}", last[-1] <= last[0],
                            last[-1], last[0]))
        checks.append(Check(f"{preset}: interventions non-increasing in K",
                            all(x >= y - 1e-9 for x, y in zip(counts, counts[1:])), str(counts), "non-increasing"))
    return SuiteResult("prioritization", checks, {"sweep": rows})


def csv_schema() -> SuiteResult:
    """Headers of freshly written CSVs against the documented column sets."""
    import csv
    import tempfile
    from pathlib import Path

    from . import runner
    from .config import loads

    text = '[experiment]\nname = "schema"\nepisodes = 3\nhorizon = 5\n[environment]\nname = "chain2"\n'
    checks = []
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        cfg = loads(text)
        runner.cmd_train(cfg, out)
        runner.cmd_oracle(cfg.with_value("cost", "form", "zero"), out)
        runner.cmd_sweep([(3, cfg)], "experiment.episodes", out)
        files = {"train": "train_seed0.csv", "oracle_values": "oracle_values.csv",
                 "oracle_residuals": "oracle_residuals.csv", "classical_values": "classical_values.csv",
                 "sweep": "sweep_experiment_episodes.csv"}
        for kind, name in files.items():
            with open(out / name, newline="") as fh:
                header = tuple(next(csv.reader(fh)))
            checks.append(Check(f"{name} header", header == runner.SCHEMAS[kind], ",".join(header),
                                ",".join(runner.SCHEMAS[kind])))
    return SuiteResult("csv_schema", checks, {"schema_version": runner.SCHEMA_VERSION})


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "contraction": contraction,
    "fixed_point": fixed_point,
    "zero_cost": zero_cost,
    "threshold": threshold,
    "qlearn": qlearn,
    "fa_bound": fa_bound,
    "fa_onehot": fa_onehot,
    "budget_hard": budget_hard,
    "budget_soft": budget_soft,
    "budget_monotone": budget_monotone,
    "merton": merton,
    "prioritization": prioritization,
    "csv_schema": csv_schema,
}


def run(name: str) -> list[SuiteResult]:
    """Run one suite, or every suite for ``"all"``."""
    if name == "all":
        return [_timed(fn) for fn in SUITES.values()]
    if name not in SUITES:
        raise KeyError(name)
    return [_timed(SUITES[name])]
