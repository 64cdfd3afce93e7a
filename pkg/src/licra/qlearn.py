"""Tabular impulse-control Q-learning and the flat baseline.

The learner keeps two tables: ``q_act[s, a]`` for intervening with action ``a``
(index ``a + 1`` on the shared action axis) and ``q_null[s]`` for letting the
system run. A sample only reveals the branch that was executed, so each update
touches exactly one entry; the state value is ``max(max_a q_act[s, a], q_null[s])``.

The flat baseline is ordinary Q-learning with the null action appended to the
action set, trained on reward minus cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import rng as rngmod
from .exact import TIE_EPSILON, ImpulsePolicy
from .mdp import NULL, CostSpec, TabularMdp, TransitionSample, cumulative_kernel

EXPLORATION = {"uniform": K.EXPLORE_UNIFORM, "branch": K.EXPLORE_BRANCH}
_CHUNK = 1 << 18


@dataclass
class QTable:
    q_act: np.ndarray
    q_null: np.ndarray
    n_act: np.ndarray
    n_null: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, init: float = 0.0) -> "QTable":
        return cls(
            np.full((n_states, n_actions), float(init)),
            np.full(n_states, float(init)),
            np.zeros((n_states, n_actions), dtype=np.int64),
            np.zeros(n_states, dtype=np.int64),
        )

    @property
    def n_states(self) -> int:
        return self.q_null.shape[0]

    @property
    def n_actions(self) -> int:
        return self.q_act.shape[1]

    def values(self) -> np.ndarray:
        return np.maximum(self.q_act.max(axis=1), self.q_null)

    def branches(self) -> np.ndarray:
        """Stacked ``(B, n)`` view matching :func:`licra.exact.branch_values`."""
        return np.vstack([self.q_null[None, :], self.q_act.T])

    def state_visits(self) -> np.ndarray:
        return self.n_null + self.n_act.sum(axis=1)

    def copy(self) -> "QTable":
        return QTable(self.q_act.copy(), self.q_null.copy(), self.n_act.copy(), self.n_null.copy())


@dataclass(frozen=True)
class LearnSchedule:
    """Step sizes and exploration.

    The step size for a pair visited ``k`` times before is
    ``alpha0 / (1 + k) ** omega``; with ``0.5 < omega <= 1`` its sum diverges and
    its sum of squares converges. Exploration is epsilon-greedy with
    ``epsilon = max(epsilon_min, epsilon0 * epsilon_decay ** episode)``.

    ``exploration`` picks how an exploratory move is drawn: ``"uniform"`` over
    the null action and all interventions, or ``"branch"``, which first flips a
    fair coin between the null action and intervening and then picks the
    intervention uniformly.
    """

    alpha0: float = 1.0
    omega: float = 0.7
    epsilon0: float = 1.0
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.999
    exploration: str = "branch"
    q_init: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha0 <= 1.0:
            raise ValueError(f"alpha0 must lie in (0, 1], got {self.alpha0}")
        if not 0.5 < self.omega <= 1.0:
            raise ValueError(f"omega must lie in (0.5, 1], got {self.omega}")
        for name in ("epsilon0", "epsilon_min", "epsilon_decay"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.exploration not in EXPLORATION:
            raise ValueError(f"exploration must be one of {sorted(EXPLORATION)}")

    def alpha(self, visits: int) -> float:
        return self.alpha0 / (1.0 + visits) ** self.omega

    def epsilons(self, episodes: int) -> np.ndarray:
        return np.maximum(self.epsilon_min, self.epsilon0 * self.epsilon_decay ** np.arange(episodes, dtype=float))


@dataclass
class LearnerDiagnostics:
    returns: np.ndarray
    interventions: np.ndarray
    epsilon: np.ndarray
    sup_norm: np.ndarray | None
    state_visits: np.ndarray
    td_error: np.ndarray | None = None

    @property
    def episodes(self) -> int:
        return self.returns.shape[0]


@dataclass
class TrainResult:
    q: QTable
    policy: ImpulsePolicy
    diagnostics: LearnerDiagnostics


@dataclass
class FlatResult:
    q: np.ndarray
    visits: np.ndarray
    diagnostics: LearnerDiagnostics
    policy: ImpulsePolicy = field(init=False)

    def __post_init__(self):
        self.policy = flat_policy(self.q)


def greedy_policy(q: QTable, tie_epsilon: float = TIE_EPSILON) -> ImpulsePolicy:
    best = np.argmax(q.q_act, axis=1)
    gain = q.q_act.max(axis=1) - q.q_null
    return ImpulsePolicy(gain > tie_epsilon, best + 1)


def flat_policy(q: np.ndarray) -> ImpulsePolicy:
    b = np.argmax(q, axis=1)
    return ImpulsePolicy(b != NULL, np.where(b == NULL, np.argmax(q[:, 1:], axis=1) + 1, b))


# -- single updates --------------------------------------------------------------


def q_update_model_based(q: QTable, mdp: TabularMdp, cost: CostSpec, states=None, alpha: float | None = None,
                         schedule: LearnSchedule | None = None) -> float:
    """Update every branch at ``states`` against the exact one-step expectation.

    All targets use the state values from before the update, so sweeping every
    state with ``alpha = 1`` performs exactly one Bellman step. Without an explicit
    ``alpha`` the per-pair schedule step is used and visit counts advance.
    Returns the largest absolute change.
    """
    states = np.arange(mdp.n_states) if states is None else np.atleast_1d(states)
    v = q.values()
    target = mdp.reward - cost.table(mdp) + mdp.gamma * (mdp.transition @ v)
    schedule = schedule or LearnSchedule()
    change = 0.0
    for s in states:
        for b in range(mdp.n_branches):
            if b == NULL:
                a_ = alpha if alpha is not None else schedule.alpha(q.n_null[s])
                new = q.q_null[s] + a_ * (target[NULL, s] - q.q_null[s])
                change = max(change, abs(new - q.q_null[s]))
                q.q_null[s] = new
                q.n_null[s] += 1
            else:
                a_ = alpha if alpha is not None else schedule.alpha(q.n_act[s, b - 1])
                new = q.q_act[s, b - 1] + a_ * (target[b, s] - q.q_act[s, b - 1])
                change = max(change, abs(new - q.q_act[s, b - 1]))
                q.q_act[s, b - 1] = new
                q.n_act[s, b - 1] += 1
    return float(change)


def q_update_sampled(q: QTable, sample: TransitionSample, schedule: LearnSchedule, gamma: float) -> float:
    """Move the executed branch toward ``reward - cost + gamma * v(next)``; returns the TD error."""
    return float(K.tabular_update(
        q.q_act, q.q_null, q.n_act, q.n_null, sample.state, sample.action, sample.reward, sample.cost,
        sample.next_state, sample.terminal, gamma, schedule.alpha0, schedule.omega,
    ))


def behavior_policy(q: QTable, s: int, epsilon: float, rng: np.random.Generator, exploration: str = "uniform",
                    allow_intervene: bool = True, tie_epsilon: float = TIE_EPSILON) -> int:
    """Epsilon-greedy branch choice; greedy ties go to the null action.

    Always consumes two uniforms from ``rng``.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    u1, u2 = rng.random(2)
    return int(K.choose_branch(q.q_null[s], q.q_act[s], epsilon, u1, u2, EXPLORATION[exploration],
                               allow_intervene, tie_epsilon))


# -- training loops ----------------------------------------------------------------


def _streams(seed: int):
    return rngmod.stream(seed, "learner", "agent"), rngmod.stream(seed, "learner", "env")


def _chunks(episodes: int, horizon: int):
    size = max(1, _CHUNK // max(horizon, 1))
    for start in range(0, episodes, size):
        yield start, min(episodes, start + size)


def _empty_diag(episodes, eps, n_states, oracle):
    return (np.zeros(episodes), np.zeros(episodes, dtype=np.int64), eps,
            np.full(episodes, np.nan) if oracle is not None else None)


class EnvStepError(RuntimeError):
    pass


def train(target, cost: CostSpec | None, schedule: LearnSchedule, episodes: int, horizon: int, seed: int,
          oracle: np.ndarray | None = None) -> TrainResult:
    """Tabular impulse-control Q-learning.

    ``target`` is a :class:`TabularMdp` (compiled loop) or an environment with
    integer observations and ``n_states`` set. ``oracle`` is an optional exact
    value vector; when given, the sup-norm gap is recorded after every episode.
    Identical arguments produce bitwise identical results.
    """
    if episodes < 0 or horizon < 1:
        raise ValueError("episodes must be >= 0 and horizon >= 1")
    if isinstance(target, TabularMdp):
        return _train_mdp(target, cost or CostSpec.zero(), schedule, episodes, horizon, seed, oracle)
    if cost is not None:
        raise ValueError("environments carry their own cost; pass cost=None")
    return _train_env(target, schedule, episodes, horizon, seed, oracle)


def _train_mdp(mdp, cost, schedule, episodes, horizon, seed, oracle):
    q = QTable.zeros(mdp.n_states, mdp.n_actions, schedule.q_init)
    cdf, init_cdf = cumulative_kernel(mdp)
    costs = cost.table(mdp)
    eps = schedule.epsilons(episodes)
    returns, counts, _, gaps = _empty_diag(episodes, eps, mdp.n_states, oracle)
    gap_buf = gaps if gaps is not None else np.zeros(episodes)
    orc = np.asarray(oracle, dtype=float) if oracle is not None else np.zeros(0)
    agent, env = _streams(seed)
    for lo, hi in _chunks(episodes, horizon):
        k = hi - lo
        K.run_licra(cdf, init_cdf, mdp.reward, costs, mdp.gamma, horizon,
                    agent.random((k, horizon, 2)), env.random((k, horizon + 1)), eps[lo:hi],
                    schedule.alpha0, schedule.omega, EXPLORATION[schedule.exploration], TIE_EPSILON,
                    q.q_act, q.q_null, q.n_act, q.n_null, orc,
                    returns[lo:hi], counts[lo:hi], gap_buf[lo:hi])
    diag = LearnerDiagnostics(returns, counts, eps, gaps, q.state_visits())
    return TrainResult(q, greedy_policy(q), diag)


def _train_env(env, schedule, episodes, horizon, seed, oracle):
    if env.n_states is None:
        raise ValueError("tabular learning needs integer observations (env.n_states)")
    q = QTable.zeros(env.n_states, env.n_actions, schedule.q_init)
    eps = schedule.epsilons(episodes)
    returns, counts, _, gaps = _empty_diag(episodes, eps, env.n_states, oracle)
    agent, env_rng = _streams(seed)
    mode = EXPLORATION[schedule.exploration]
    gamma = env_gamma(env)
    for ep in range(episodes):
        s = env.reset(env_rng)
        total, k = 0.0, 0
        for t in range(horizon):
            u1, u2 = agent.random(2)
            b = int(K.choose_branch(q.q_null[s], q.q_act[s], eps[ep], u1, u2, mode, env.can_intervene(), TIE_EPSILON))
            try:
                step = env.step(b)
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise EnvStepError(f"environment step failed in episode {ep}, step {t}: {exc}") from exc
            executed = b if step.intervened else NULL
            K.tabular_update(q.q_act, q.q_null, q.n_act, q.n_null, s, executed, step.reward, step.cost, step.obs,
                             step.terminated, gamma, schedule.alpha0, schedule.omega)
            total += step.reward - step.cost
            k += step.intervened
            s = step.obs
            if step.terminated:
                break
        returns[ep], counts[ep] = total, k
        if gaps is not None:
            gaps[ep] = np.max(np.abs(q.values() - oracle))
    diag = LearnerDiagnostics(returns, counts, eps, gaps, q.state_visits())
    return TrainResult(q, greedy_policy(q), diag)


def env_gamma(env) -> float:
    gamma = getattr(env, "gamma", None)
    if gamma is None:
        raise ValueError("environment must expose a discount factor `gamma`")
    return float(gamma)


def train_flat_baseline(target, cost: CostSpec | None, schedule: LearnSchedule, episodes: int, horizon: int,
                        seed: int, oracle: np.ndarray | None = None) -> FlatResult:
    """One-table Q-learning over the null action plus all interventions.

    Exploration is always uniform over the flat action set; greedy ties go to the
    lowest index (the null action first). Uses the same random streams as
    :func:`train`, so paired runs see the same environment noise.
    """
    if episodes < 0 or horizon < 1:
        raise ValueError("episodes must be >= 0 and horizon >= 1")
    eps = schedule.epsilons(episodes)
    agent, env_rng = _streams(seed)
    if isinstance(target, TabularMdp):
        mdp, cost = target, cost or CostSpec.zero()
        q = np.full((mdp.n_states, mdp.n_branches), float(schedule.q_init))
        n = np.zeros(q.shape, dtype=np.int64)
        cdf, init_cdf = cumulative_kernel(mdp)
        costs = cost.table(mdp)
        returns, counts, _, gaps = _empty_diag(episodes, eps, mdp.n_states, oracle)
        gap_buf = gaps if gaps is not None else np.zeros(episodes)
        orc = np.asarray(oracle, dtype=float) if oracle is not None else np.zeros(0)
        for lo, hi in _chunks(episodes, horizon):
            k = hi - lo
            K.run_flat(cdf, init_cdf, mdp.reward, costs, mdp.gamma, horizon,
                       agent.random((k, horizon, 2)), env_rng.random((k, horizon + 1)), eps[lo:hi],
                       schedule.alpha0, schedule.omega, q, n, orc, returns[lo:hi], counts[lo:hi], gap_buf[lo:hi])
        return FlatResult(q, n, LearnerDiagnostics(returns, counts, eps, gaps, n.sum(axis=1)))
    if cost is not None:
        raise ValueError("environments carry their own cost; pass cost=None")
    env = target
    gamma = env_gamma(env)
    q = np.full((env.n_states, env.n_actions + 1), float(schedule.q_init))
    n = np.zeros(q.shape, dtype=np.int64)
    returns, counts, _, gaps = _empty_diag(episodes, eps, env.n_states, oracle)
    for ep in range(episodes):
        s = env.reset(env_rng)
        total, k = 0.0, 0
        for t in range(horizon):
            u1, u2 = agent.random(2)
            b = int(K.choose_flat(q[s], eps[ep], u1, u2))
            if b != NULL and not env.can_intervene():
                b = NULL
            try:
                step = env.step(b)
            except Exception as exc:  # noqa: BLE001
                raise EnvStepError(f"environment step failed in episode {ep}, step {t}: {exc}") from exc
            K.flat_update(q, n, s, b, step.reward, step.cost, step.obs, step.terminated, gamma,
                          schedule.alpha0, schedule.omega)
            total += step.reward - step.cost
            k += step.intervened
            s = step.obs
            if step.terminated:
                break
        returns[ep], counts[ep] = total, k
        if gaps is not None:
            gaps[ep] = np.max(np.abs(q.max(axis=1) - oracle))
    return FlatResult(q, n, LearnerDiagnostics(returns, counts, eps, gaps, n.sum(axis=1)))
