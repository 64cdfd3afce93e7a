"""Portfolio allocation with transaction costs.

Wealth is split between a risky asset ``s`` and a risk-free asset ``c``. Each
step the agent may move a fixed fraction of one asset into the other, paying a
fixed fee, and then both assets evolve over ``dt``: the risk-free part grows
at rate ``r``, the risky part at rate ``mu`` and carries all of the noise::

    s' = s + mu * s * dt + sigma * s * sqrt(dt) * xi
    c' = c + r * c * dt

so total wealth ``W = s + c`` with risky share ``p = s / W`` follows the
Euler-Maruyama step ``W' = W + (r + p (mu - r)) W dt + W p sigma sqrt(dt) xi``.
The only reward is the terminal utility ``2 sqrt(s_T + c_T)``. Fees are
reported as costs when incurred; with ``deduct_fee`` they also leave the
portfolio, taken from the risk-free asset first.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import rng as rngmod
from ..mdp import CostSpec, TabularMdp, require_valid
from .base import Step

NULL, TO_RISK_FREE, TO_RISKY = 0, 1, 2
ACTION_NAMES = ("null", "to_risk_free", "to_risky")


@dataclass(frozen=True)
class MertonParams:
    r: float = 0.01
    mu: float = 0.05
    sigma: float = 1.0
    dt: float = 0.01
    horizon: int = 75
    move_fraction: float = 0.1
    transaction_cost: float = 1.0
    risky0: float = 50.0
    risk_free0: float = 50.0
    gamma: float = 0.99
    deduct_fee: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 < self.move_fraction < 1:
            raise ValueError("move_fraction must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.transaction_cost <= 0:
            raise ValueError("transaction_cost must be positive")
        if self.risky0 < 0 or self.risk_free0 < 0:
            raise ValueError("initial wealths must be nonnegative")

    def to_block(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MertonState:
    risky: float
    risk_free: float
    t: int

    @property
    def wealth(self) -> float:
        return self.risky + self.risk_free

    @property
    def share(self) -> float:
        w = self.wealth
        return self.risky / w if w > 0 else 0.0


class EpisodeOverError(RuntimeError):
    pass


def utility(wealth):
    return 2.0 * np.sqrt(np.maximum(wealth, 0.0))


def apply_move(s, c, action: int, params: MertonParams):
    """Asset move; the total ``s + c`` is unchanged. Works on scalars and arrays."""
    if action == TO_RISK_FREE:
        moved = params.move_fraction * s
        return s - moved, c + moved
    if action == TO_RISKY:
        moved = params.move_fraction * c
        return s + moved, c - moved
    if action != NULL:
        raise ValueError(f"unknown action {action}")
    return s, c


def deduct(s, c, fee: float):
    """Take ``fee`` from the risk-free asset, the remainder from the risky one."""
    c2 = c - fee
    if isinstance(c2, float):
        return max(s + min(c2, 0.0), 0.0), max(c2, 0.0)
    short = np.minimum(c2, 0.0)
    return np.maximum(s + short, 0.0), np.maximum(c2, 0.0)


def sde_step(s, c, params: MertonParams, xi):
    """One Euler-Maruyama step; the risky asset is floored at 0. Works on scalars and arrays."""
    s2 = s + params.mu * s * params.dt + params.sigma * s * math.sqrt(params.dt) * xi
    c2 = c + params.r * c * params.dt
    if isinstance(s2, float):
        return max(s2, 0.0), c2
    return np.maximum(s2, 0.0), c2


def merton_step(state: MertonState, params: MertonParams, action: int, xi: float) -> tuple[MertonState, float, float]:
    """Move, then evolve over ``dt`` with standard normal ``xi``.

    Returns ``(next_state, reward, cost)``; the reward is the terminal utility on
    the step that reaches the horizon and 0 otherwise.
    """
    if state.t >= params.horizon:
        raise EpisodeOverError(f"episode ended at t={state.t}")
    s, c = apply_move(state.risky, state.risk_free, action, params)
    fee = params.transaction_cost if action != NULL else 0.0
    if fee and params.deduct_fee:
        s, c = deduct(s, c, fee)
    s, c = sde_step(s, c, params, xi)
    nxt = MertonState(float(s), float(c), state.t + 1)
    reward = 2.0 * math.sqrt(max(nxt.wealth, 0.0)) if nxt.t == params.horizon else 0.0
    return nxt, reward, fee


@dataclass(frozen=True)
class MertonGrid:
    """Observation buckets: wealth edges over ``[0, wealth_max]`` and share edges over ``[0, 1]``."""

    wealth_buckets: int = 8
    split_buckets: int = 5
    wealth_max: float = 200.0

    def __post_init__(self):
        if self.wealth_buckets < 1 or self.split_buckets < 1:
            raise ValueError("bucket counts must be >= 1")

    def bucket(self, wealth, share):
        wb = np.clip((np.asarray(wealth) / self.wealth_max * self.wealth_buckets).astype(np.int64),
                     0, self.wealth_buckets - 1)
        sb = np.clip((np.asarray(share) * self.split_buckets).astype(np.int64), 0, self.split_buckets - 1)
        return wb, sb

    def index(self, wealth: float, share: float) -> int:
        """Scalar ``wealth_bucket * split_buckets + share_bucket``."""
        wb = min(max(int(wealth / self.wealth_max * self.wealth_buckets), 0), self.wealth_buckets - 1)
        sb = min(max(int(share * self.split_buckets), 0), self.split_buckets - 1)
        return wb * self.split_buckets + sb

    def cells(self) -> int:
        return self.wealth_buckets * self.split_buckets


class MertonEnv:
    """Simulator with integer observations ``(t, wealth bucket, share bucket)``.

    One standard normal is drawn per step from the stream passed to ``reset``.
    ``state`` holds the exact continuous state.
    """

    n_actions = 2

    def __init__(self, params: MertonParams | None = None, grid: MertonGrid | None = None):
        self.params = params or MertonParams()
        self.grid = grid or MertonGrid()
        self.n_states = (self.params.horizon + 1) * self.grid.cells()
        self.gamma = self.params.gamma
        self.reward_bound = float(utility(self._wealth_cap()))
        self.state = MertonState(self.params.risky0, self.params.risk_free0, 0)
        self._rng = None

    def _wealth_cap(self) -> float:
        return self.grid.wealth_max

    def observe(self, state: MertonState) -> int:
        return state.t * self.grid.cells() + self.grid.index(state.wealth, state.share)

    def reset(self, rng: np.random.Generator) -> int:
        self._rng = rng
        self.state = MertonState(self.params.risky0, self.params.risk_free0, 0)
        return self.observe(self.state)

    def can_intervene(self) -> bool:
        return True

    def step(self, action: int) -> Step:
        xi = float(self._rng.standard_normal())
        self.state, reward, fee = merton_step(self.state, self.params, action, xi)
        done = self.state.t >= self.params.horizon
        info = {"wealth": self.state.wealth, "utility": reward} if done else None
        return Step(self.observe(self.state), reward, fee, action != NULL, done, info)


def simulate_null(params: MertonParams, episodes: int, rng: np.random.Generator) -> np.ndarray:
    """Total wealth paths under the null policy, shape ``(episodes, horizon + 1)``."""
    s = np.full(episodes, params.risky0)
    c = np.full(episodes, params.risk_free0)
    out = np.empty((episodes, params.horizon + 1))
    out[:, 0] = s + c
    for t in range(params.horizon):
        s, c = sde_step(s, c, params, rng.standard_normal(episodes))
        out[:, t + 1] = s + c
    return out


class EstimationError(RuntimeError):
    pass


def merton_discretize(params: MertonParams, wealth_buckets: int, split_buckets: int, time_buckets: int = 15,
                      samples: int = 200, seed: int = 0, wealth_max: float = 200.0,
                      min_samples: int = 20) -> tuple[TabularMdp, CostSpec]:
    """Monte-Carlo tabular model over ``(time bucket, wealth bucket, share bucket)`` plus a terminal state.

    For each cell and action, ``samples`` copies of the cell centre (each at a
    uniformly chosen step of the time bucket) are pushed through one step. Rewards are the sample means of the terminal utility. The last index is
    the absorbing terminal state. Raises :class:`EstimationError` when
    ``samples < min_samples``.
    """
    if samples < min_samples:
        raise EstimationError(f"{samples} samples per cell is below the minimum of {min_samples}")
    if time_buckets < 1 or time_buckets > params.horizon:
        raise ValueError("time_buckets must lie in [1, horizon]")
    grid = MertonGrid(wealth_buckets, split_buckets, wealth_max)
    cells = grid.cells()
    n = time_buckets * cells + 1
    term = n - 1
    g = rngmod.stream(seed, "merton", "discretize")
    edges = np.linspace(0, params.horizon, time_buckets + 1).round().astype(np.int64)
    P = np.zeros((3, n, n))
    R = np.zeros((3, n))
    wsz, ssz = wealth_max / wealth_buckets, 1.0 / split_buckets
    for k in range(time_buckets):
        for wb in range(wealth_buckets):
            for sb in range(split_buckets):
                i = k * cells + wb * split_buckets + sb
                t = g.integers(edges[k], edges[k + 1], size=samples)
                w = np.full(samples, (wb + 0.5) * wsz)
                p = np.full(samples, (sb + 0.5) * ssz)
                xi = g.standard_normal(samples)
                for a in range(3):
                    s, c = apply_move(p * w, (1 - p) * w, a, params)
                    if a != NULL and params.deduct_fee:
                        s, c = deduct(s, c, params.transaction_cost)
                    s, c = sde_step(s, c, params, xi)
                    t2 = t + 1
                    done = t2 >= params.horizon
                    W2 = s + c
                    share = np.where(W2 > 0, s / np.where(W2 > 0, W2, 1.0), 0.0)
                    nwb, nsb = grid.bucket(W2, share)
                    k2 = np.searchsorted(edges, t2, side="right") - 1
                    j = np.where(done, term, np.minimum(k2, time_buckets - 1) * cells + nwb * split_buckets + nsb)
                    P[a, i] = np.bincount(j, minlength=n) / samples
                    R[a, i] = float(np.mean(np.where(done, utility(W2), 0.0)))
    P[:, term, term] = 1.0
    init = np.zeros(n)
    wb0, sb0 = grid.bucket(params.risky0 + params.risk_free0,
                           params.risky0 / max(params.risky0 + params.risk_free0, 1e-300))
    init[int(wb0) * split_buckets + int(sb0)] = 1.0
    mdp = TabularMdp(P, R, params.gamma, initial=init, name=f"merton({wealth_buckets}x{split_buckets}x{time_buckets})")
    return require_valid(mdp), CostSpec.fixed(params.transaction_cost)

