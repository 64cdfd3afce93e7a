"""Environment protocol shared by simulators and tabular models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np

from ..mdp import NULL, CostSpec, TabularMdp, cumulative_kernel, draw_index


@dataclass(frozen=True)
class Step:
    obs: Any
    reward: float
    cost: float
    intervened: bool
    terminated: bool = False
    info: dict | None = None


class Env(Protocol):
    """Episodic environment with the null action at index 0.

    ``n_states`` is the number of distinct observations when observations are
    integer indices (required by the tabular learners), otherwise ``None``.
    ``reset`` receives the environment's own random stream and keeps it for the
    episode's steps.
    """

    n_actions: int
    n_states: int | None

    def reset(self, rng: np.random.Generator) -> Any: ...

    def step(self, action: int) -> Step: ...

    def can_intervene(self) -> bool: ...


class TabularEnv:
    """Simulator view of a :class:`TabularMdp`.

    Consumes exactly one uniform per reset and one per step, matching the
    compiled training kernels draw for draw.
    """

    def __init__(self, mdp: TabularMdp, cost: CostSpec | None = None):
        self.mdp = mdp
        self.cost = cost or CostSpec.zero()
        self.n_actions = mdp.n_actions
        self.n_states = mdp.n_states
        self.gamma = mdp.gamma
        self.reward_bound = float(np.max(np.abs(mdp.reward)))
        self._cdf, self._init_cdf = cumulative_kernel(mdp)
        self._costs = self.cost.table(mdp)
        self._rng = None
        self.state = 0

    def reset(self, rng: np.random.Generator) -> int:
        self._rng = rng
        self.state = draw_index(self._init_cdf, rng.random())
        return self.state

    def step(self, action: int) -> Step:
        s = self.state
        nxt = draw_index(self._cdf[action, s], self._rng.random())
        self.state = nxt
        return Step(nxt, float(self.mdp.reward[action, s]), float(self._costs[action, s]), action != NULL)

    def can_intervene(self) -> bool:
        return True


@dataclass
class RolloutStats:
    returns: np.ndarray
    interventions: np.ndarray
    lengths: np.ndarray
    infos: list


def rollout(
    env, policy: Callable[[Any], int], episodes: int, horizon: int, rng: np.random.Generator, keep_info: bool = False
) -> RolloutStats:
    """Run ``policy`` for ``episodes`` episodes of at most ``horizon`` steps.

    Returns are undiscounted sums of ``reward - cost``.
    """
    returns = np.zeros(episodes)
    counts = np.zeros(episodes, dtype=np.int64)
    lengths = np.zeros(episodes, dtype=np.int64)
    infos = []
    for ep in range(episodes):
        obs = env.reset(rng)
        total, k, t = 0.0, 0, 0
        last = None
        for t in range(1, horizon + 1):
            a = policy(obs)
            if a != NULL and not env.can_intervene():
                a = NULL
            step = env.step(a)
            total += step.reward - step.cost
            k += step.intervened
            obs = step.obs
            last = step
            if step.terminated:
                break
        returns[ep], counts[ep], lengths[ep] = total, k, t
        if keep_info:
            infos.append(last.info if last is not None else None)
    return RolloutStats(returns, counts, lengths, infos)
