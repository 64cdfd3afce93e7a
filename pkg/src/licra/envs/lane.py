"""Single-lane driving with penalty zones.

A vehicle moves along ``[0, track_length]``. Each step::

    velocity <- max(0, velocity - drag + a)
    position <- position + velocity

with ``a = 0`` for the null action. Inside zone ``k`` with the new velocity below
``v_min`` the step pays ``-penalties[k]``. Reaching the end of the track pays
``goal_reward`` and ends the episode. A non-null action ``a`` costs ``K + a**2``,
including ``a = 0``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..mdp import NULL, CostSpec, TabularMdp, require_valid
from .base import Step


@dataclass(frozen=True)
class LaneParams:
    K: float = 1.0
    actions: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    v_min: float = 0.5
    zones: tuple[tuple[float, float], ...] = ((20.0, 30.0), (45.0, 55.0), (70.0, 80.0))
    penalties: tuple[float, ...] = (1.0, 2.0, 4.0)
    drag: float = 0.05
    goal_reward: float = 20.0
    track_length: float = 100.0
    horizon: int = 200
    v0: float = 1.0
    v_max: float = 3.0
    gamma: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(float(a) for a in self.actions))
        object.__setattr__(self, "zones", tuple((float(a), float(b)) for a, b in self.zones))
        object.__setattr__(self, "penalties", tuple(float(c) for c in self.penalties))
        if self.K <= 0:
            raise ValueError("K must be positive")
        if any(abs(a) > 1 for a in self.actions) or not self.actions:
            raise ValueError("actions must be a nonempty grid inside [-1, 1]")
        if len(self.zones) != len(self.penalties):
            raise ValueError("one penalty per zone")
        if any(p <= 0 for p in self.penalties) or any(b <= a for a, b in zip(self.penalties, self.penalties[1:])):
            raise ValueError("penalty magnitudes must be positive and strictly increasing")
        spans = sorted(self.zones)
        if any(lo >= hi for lo, hi in spans) or any(a[1] > b[0] for a, b in zip(spans, spans[1:])):
            raise ValueError("zones must be nonempty and disjoint")
        if not 0 <= self.v0 <= self.v_max:
            raise ValueError("v0 must lie in [0, v_max]")

    def to_block(self) -> dict:
        d = asdict(self)
        d["actions"] = list(self.actions)
        d["zones"] = [list(z) for z in self.zones]
        d["penalties"] = list(self.penalties)
        return d

    def cost(self) -> CostSpec:
        return CostSpec.quadratic(self.K, 1.0)


@dataclass(frozen=True)
class LaneState:
    position: float
    velocity: float
    step: int = 0


def zone_of(params: LaneParams, position: float) -> int:
    """Index of the zone containing ``position``, or -1."""
    for k, (lo, hi) in enumerate(params.zones):
        if lo <= position < hi:
            return k
    return -1


def lane_step(state: LaneState, params: LaneParams, action: int) -> tuple[LaneState, float, float, int, bool]:
    """Returns ``(next_state, reward, cost, violated_zone, done)``.

    ``violated_zone`` is the zone index when its penalty was paid, else -1.
    Velocity is capped at ``v_max`` and position at the track end.
    """
    a = 0.0 if action == NULL else params.actions[action - 1]
    v = min(max(0.0, state.velocity - params.drag + a), params.v_max)
    x = min(state.position + v, params.track_length)
    done = x >= params.track_length
    reward = params.goal_reward if done else 0.0
    violated = -1
    k = zone_of(params, x)
    if k >= 0 and v < params.v_min:
        reward -= params.penalties[k]
        violated = k
    cost = 0.0 if action == NULL else params.K + a * a
    nxt = LaneState(x, v, state.step + 1)
    return nxt, reward, cost, violated, done or nxt.step >= params.horizon


class LaneEnv:
    """Deterministic lane simulator; observations are :class:`LaneState`."""

    def __init__(self, params: LaneParams | None = None):
        self.params = params or LaneParams()
        self.n_actions = len(self.params.actions)
        self.n_states = None
        self.gamma = self.params.gamma
        self.reward_bound = self.params.goal_reward + max(self.params.penalties)
        self.state = LaneState(0.0, self.params.v0)

    def reset(self, rng: np.random.Generator | None = None) -> LaneState:
        self.state = LaneState(0.0, self.params.v0)
        return self.state

    def can_intervene(self) -> bool:
        return True

    def step(self, action: int) -> Step:
        self.state, reward, cost, zone, done = lane_step(self.state, self.params, action)
        return Step(self.state, reward, cost, action != NULL, done, {"zone_violation": zone})


@dataclass(frozen=True)
class LaneGrid:
    """Regular grid over position and velocity; the extra last index is the goal."""

    positions: np.ndarray
    velocities: np.ndarray

    @classmethod
    def regular(cls, params: LaneParams, n_positions: int = 41, n_velocities: int = 21) -> "LaneGrid":
        return cls(np.linspace(0.0, params.track_length, n_positions), np.linspace(0.0, params.v_max, n_velocities))

    @property
    def n_states(self) -> int:
        return self.positions.size * self.velocities.size + 1

    def index(self, i: int, j: int) -> int:
        return i * self.velocities.size + j

    def nearest(self, state: LaneState) -> int:
        if state.position >= self.positions[-1]:
            return self.n_states - 1
        i = int(np.abs(self.positions - state.position).argmin())
        j = int(np.abs(self.velocities - state.velocity).argmin())
        return self.index(i, j)

    def weights(self, x: float, v: float) -> list[tuple[int, float]]:
        """Bilinear interpolation weights of ``(x, v)`` over grid nodes."""
        out = []
        for i, wi in _bracket(self.positions, x):
            for j, wj in _bracket(self.velocities, v):
                if wi * wj > 0:
                    out.append((self.index(i, j), wi * wj))
        return out


def _bracket(nodes: np.ndarray, x: float) -> list[tuple[int, float]]:
    if x <= nodes[0]:
        return [(0, 1.0)]
    if x >= nodes[-1]:
        return [(nodes.size - 1, 1.0)]
    hi = int(np.searchsorted(nodes, x, side="right"))
    lo = hi - 1
    w = (x - nodes[lo]) / (nodes[hi] - nodes[lo])
    return [(lo, 1.0 - w), (hi, w)]


def lane_discretize(params: LaneParams, grid: LaneGrid | None = None) -> tuple[TabularMdp, CostSpec, LaneGrid]:
    """Discounted tabular model by interpolating one simulator step from each node.

    Rewards are exact for the node; the next state is spread over the four
    surrounding nodes. Mass landing on the track-end nodes moves to the absorbing
    goal state and collects its share of the goal reward.
    """
    grid = grid or LaneGrid.regular(params)
    n = grid.n_states
    goal = n - 1
    end = grid.index(grid.positions.size - 1, 0)
    B = len(params.actions) + 1
    P = np.zeros((B, n, n))
    R = np.zeros((B, n))
    for i, x in enumerate(grid.positions):
        for j, v in enumerate(grid.velocities):
            s = grid.index(i, j)
            for b in range(B):
                if x >= params.track_length:
                    P[b, s, goal] = 1.0
                    continue
                nxt, reward, _, _, _ = lane_step(LaneState(float(x), float(v)), params, b)
                R[b, s] = reward
                if nxt.position >= params.track_length:
                    P[b, s, goal] = 1.0
                    continue
                for k, w in grid.weights(nxt.position, nxt.velocity):
                    if k >= end:
                        # mass on the track-end nodes has arrived
                        P[b, s, goal] += w
                        R[b, s] += w * params.goal_reward
                    else:
                        P[b, s, k] += w
    P[:, goal, goal] = 1.0
    init = np.zeros(n)
    for k, w in grid.weights(0.0, params.v0):
        init[k] += w
    mdp = TabularMdp(P, R, params.gamma, np.array(params.actions), init, name="lane")
    return require_valid(mdp), params.cost(), grid


@dataclass(frozen=True)
class ZoneAudit:
    violations: tuple[float, ...]
    interventions: float
    total_return: float
    reached_goal: bool
    steps: int


def audit_policy(params: LaneParams, policy, grid: LaneGrid) -> ZoneAudit:
    """Run one deterministic episode with a tabular policy looked up at the nearest node."""
    env = LaneEnv(params)
    state = env.reset()
    counts = [0] * len(params.zones)
    k = 0
    total = 0.0
    t = 0
    done = False
    while not done:
        step = env.step(int(policy(grid.nearest(state))))
        if step.info["zone_violation"] >= 0:
            counts[step.info["zone_violation"]] += 1
        k += step.intervened
        total += step.reward - step.cost
        state, done = step.obs, step.terminated
        t += 1
    return ZoneAudit(tuple(counts), k, total, state.position >= params.track_length, t)


def violation_tables(params: LaneParams, grid: LaneGrid) -> np.ndarray:
    """``out[k, b, s] = 1`` when action ``b`` at node ``s`` pays zone ``k``'s penalty."""
    B = len(params.actions) + 1
    out = np.zeros((len(params.zones), B, grid.n_states))
    for i, x in enumerate(grid.positions):
        if x >= params.track_length:
            continue
        for j, v in enumerate(grid.velocities):
            for b in range(B):
                zone = lane_step(LaneState(float(x), float(v)), params, b)[3]
                if zone >= 0:
                    out[zone, b, grid.index(i, j)] = 1.0
    return out


def expected_audit(params: LaneParams, mdp: TabularMdp, grid: LaneGrid, policy) -> ZoneAudit:
    """Expected zone violations and interventions over ``params.horizon`` steps of the tabular chain."""
    act = policy.executed()
    n = mdp.n_states
    rows = np.arange(n)
    P = mdp.transition[act, rows]
    viol = violation_tables(params, grid)[:, act, rows]
    intervene = (act != NULL).astype(float)
    goal = n - 1
    d = mdp.initial.copy()
    counts = np.zeros(len(params.zones))
    k = 0.0
    total = 0.0
    gain = mdp.reward[act, rows] - params.cost().table(mdp)[act, rows]
    for _ in range(params.horizon):
        live = d.copy()
        live[goal] = 0.0
        counts += viol @ live
        k += intervene @ live
        total += gain @ live
        d = d @ P
    return ZoneAudit(tuple(float(c) for c in counts), float(k), float(total), bool(d[goal] > 0.5), params.horizon)
