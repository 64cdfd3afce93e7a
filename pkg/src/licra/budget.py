"""Intervention budgets by state augmentation.

The remaining budget ``z`` joins the state. Every intervention lowers ``z`` by
its charge; everything else leaves it alone. Two modes:

``soft``
    Over-budget play is allowed but every step taken with ``z < 0`` pays ``-delta``
    instead of its reward (intervention costs are still charged). All negative
    levels are merged into a single absorbing stratum ``z = -1``.
``hard``
    Interventions that would overdraw the budget are unavailable. In the product
    MDP such an action runs the null dynamics and still pays its cost, so it is
    never preferred; environment wrappers refuse it outright.

Augmented tabular states are laid out stratum by stratum:
``index = (z + 1) * n_states + s`` for ``z = -1, 0, ..., n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .envs.base import Step, rollout
from .mdp import NULL, CostSpec, TabularMdp, require_valid

MODES = ("soft", "hard")
MAX_DENSE_ENTRIES = 50_000_000


class ProductSizeError(ValueError):
    def __init__(self, n_states: int, n_branches: int):
        self.n_states = n_states
        self.entries = n_branches * n_states * n_states
        super().__init__(
            f"augmented model has {n_states} states ({self.entries} dense transition entries), "
            f"above the limit of {MAX_DENSE_ENTRIES}"
        )


@dataclass(frozen=True)
class BudgetSpec:
    """Budget of ``n`` charge units.

    ``delta`` is the over-budget penalty or ``"auto"``. ``charge`` is the number of
    units one intervention consumes: a positive integer, or ``"cost"`` to charge
    ``ceil(cost)`` units.
    """

    n: int
    delta: float | str = "auto"
    mode: str = "soft"
    charge: int | str = 1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"budget n must be a nonnegative integer, got {self.n}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.delta != "auto" and not (isinstance(self.delta, (int, float)) and self.delta > 0):
            raise ValueError(f"delta must be positive or 'auto', got {self.delta!r}")
        if self.charge != "cost" and not (isinstance(self.charge, int) and self.charge >= 1):
            raise ValueError(f"charge must be a positive integer or 'cost', got {self.charge!r}")

    def to_block(self) -> dict:
        return {"n": self.n, "delta": self.delta, "mode": self.mode, "charge": self.charge}

    @classmethod
    def from_block(cls, block: dict) -> "BudgetSpec":
        extra = set(block) - {"n", "delta", "mode", "charge"}
        if extra:
            raise ValueError(f"unknown budget keys {sorted(extra)}")
        if "n" not in block:
            raise ValueError("budget block needs n")
        return cls(block["n"], block.get("delta", "auto"), block.get("mode", "soft"), block.get("charge", 1))


def auto_delta(reward_bound: float, gamma: float) -> float:
    """``10 * (R + G) / (1 - gamma)`` with ``G = 2 R / (1 - gamma)`` the largest value swing, at least 1."""
    gain = 2.0 * reward_bound / (1.0 - gamma)
    return max(1.0, 10.0 * (reward_bound + gain) / (1.0 - gamma))


def resolve_delta(budget: BudgetSpec, mdp: TabularMdp) -> float:
    if budget.delta != "auto":
        return float(budget.delta)
    return auto_delta(float(np.max(np.abs(mdp.reward))), mdp.gamma)


def _units(budget: BudgetSpec, cost_value: float) -> int:
    if budget.charge == "cost":
        return max(1, math.ceil(cost_value - 1e-12))
    return int(budget.charge)


def augmented_index(n_states: int, s: int, z: int) -> int:
    return (z + 1) * n_states + s


def split_index(n_states: int, index: int) -> tuple[int, int]:
    """Inverse of :func:`augmented_index`: ``(s, z)``."""
    return index % n_states, index // n_states - 1


def augment_mdp(mdp: TabularMdp, cost: CostSpec, budget: BudgetSpec) -> tuple[TabularMdp, CostSpec]:
    """Product model over ``(s, z)``; see the module docstring for the layout.

    Returns the augmented model and a cost spec with the same values per
    augmented state. Start mass sits on the full-budget stratum ``z = n``.
    """
    n, B = mdp.n_states, mdp.n_branches
    levels = budget.n + 2
    N = levels * n
    if B * N * N > MAX_DENSE_ENTRIES:
        raise ProductSizeError(N, B)
    delta = resolve_delta(budget, mdp)
    costs = cost.table(mdp)
    P = np.zeros((B, N, N))
    R = np.zeros((B, N))
    for z in range(-1, budget.n + 1):
        rows = slice((z + 1) * n, (z + 2) * n)
        R[:, rows] = mdp.reward if z >= 0 else -delta
        P[NULL, rows, rows] = mdp.transition[NULL]
        for a in range(1, B):
            for s in range(n):
                i = augmented_index(n, s, z)
                units = _units(budget, costs[a, s])
                if budget.mode == "hard" and z < units:
                    # unavailable: null dynamics, null reward, cost still charged
                    P[a, i, (z + 1) * n:(z + 2) * n] = mdp.transition[NULL, s]
                    R[a, i] = mdp.reward[NULL, s] if z >= 0 else -delta
                    continue
                z2 = max(z - units, -1)
                P[a, i, (z2 + 1) * n:(z2 + 2) * n] = mdp.transition[a, s]
    init = np.zeros(N)
    init[(budget.n + 1) * n:] = mdp.initial
    aug = TabularMdp(P, R, mdp.gamma, mdp.action_values, init, name=f"{mdp.name}+budget({budget.n},{budget.mode})")
    return require_valid(aug), _lift_cost(cost, n)


def _lift_cost(cost: CostSpec, n_base: int) -> CostSpec:
    if cost.form != "fixed_plus_state_dependent":
        return cost
    fn = cost.fn
    return CostSpec.state_dependent(cost.kappa, lambda s, x: fn(s % n_base, x))


def stratum_values(v: np.ndarray, n_states: int) -> np.ndarray:
    """Reshape augmented values to ``(n + 2, n_states)``, row ``z + 1`` per level."""
    return np.asarray(v).reshape(-1, n_states)


class BudgetEnv:
    """Environment wrapper carrying the remaining budget.

    Integer observations are re-encoded as :func:`augmented_index` so that the
    tabular learners apply unchanged; other observations become ``(obs, z)``.
    """

    def __init__(self, env, budget: BudgetSpec, delta: float):
        self.env = env
        self.budget = budget
        self.delta = float(delta)
        self.n_actions = env.n_actions
        base = getattr(env, "n_states", None)
        self._base_states = base
        self.n_states = None if base is None else (budget.n + 2) * base
        self.gamma = getattr(env, "gamma", None)
        self.z = budget.n

    def _obs(self, obs):
        if self._base_states is None:
            return (obs, self.z)
        return augmented_index(self._base_states, int(obs), self.z)

    def reset(self, rng: np.random.Generator):
        self.z = self.budget.n
        return self._obs(self.env.reset(rng))

    def can_intervene(self) -> bool:
        if not self.env.can_intervene():
            return False
        if self.budget.mode == "soft":
            return True
        needed = 1 if self.budget.charge == "cost" else int(self.budget.charge)
        return self.z >= needed

    def step(self, action: int) -> Step:
        if action != NULL and not self.can_intervene():
            action = NULL
        z_now = self.z
        step = self.env.step(action)
        if step.intervened:
            units = _units(self.budget, step.cost)
            if self.budget.mode == "hard" and units > z_now:
                raise RuntimeError("hard budget overdrawn by a cost-proportional charge")
            self.z = max(z_now - units, -1)
        reward = step.reward if z_now >= 0 else -self.delta
        info = dict(step.info or {})
        info["z"] = self.z
        return Step(self._obs(step.obs), reward, step.cost, step.intervened, step.terminated, info)


def augment_env(env, budget: BudgetSpec, delta: float | None = None) -> BudgetEnv:
    """Wrap ``env``. ``delta="auto"`` needs ``env.reward_bound`` and ``env.gamma``."""
    if delta is None:
        if budget.delta != "auto":
            delta = float(budget.delta)
        else:
            bound = getattr(env, "reward_bound", None)
            if bound is None or getattr(env, "gamma", None) is None:
                raise ValueError("automatic delta needs env.reward_bound and env.gamma; pass delta explicitly")
            delta = auto_delta(float(bound), float(env.gamma))
    return BudgetEnv(env, budget, delta)


def check_budget_satisfaction(policy: Callable[[Any], int], env, n: int, episodes: int, horizon: int,
                              rng: np.random.Generator) -> float:
    """Fraction of ``episodes`` rollouts that intervene more than ``n`` times."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    stats = rollout(env, policy, episodes, horizon, rng)
    return float(np.mean(stats.interventions > n))
