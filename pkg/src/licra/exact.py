"""Exact dynamic programming for impulse control.

The Bellman operator compares two branches at every state::

    (T v)(s) = max( max_a  R(s,a) - c(s,a) + gamma * P(.|s,a) . v ,   # intervene
                    R(s,0)             + gamma * P(.|s,0) . v )    # null action

and its fixed point is reached by value iteration from ``v = 0``. The same code
serves as the oracle for every learning routine in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import NULL, CostSpec, TabularMdp

TIE_EPSILON = 1e-9
DIRECT_SOLVE_LIMIT = 2000


class NonConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"value iteration did not converge after {iterations} iterations (residual {residual:.3e})")


@dataclass(frozen=True, eq=False)
class ImpulsePolicy:
    """Intervene decision per state plus the action proposed at each state.

    ``action[s]`` holds the best intervention at ``s`` whether or not it is
    taken; :meth:`executed` gives the action actually applied (0 where the
    policy does not intervene).
    """

    intervene: np.ndarray
    action: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "intervene", np.asarray(self.intervene, dtype=bool))
        object.__setattr__(self, "action", np.asarray(self.action, dtype=np.int64))

    @property
    def n_states(self) -> int:
        return self.intervene.shape[0]

    def executed(self) -> np.ndarray:
        return np.where(self.intervene, self.action, NULL)

    def __call__(self, s: int) -> int:
        return int(self.action[s]) if self.intervene[s] else NULL

    @classmethod
    def never(cls, n_states: int) -> "ImpulsePolicy":
        return cls(np.zeros(n_states, dtype=bool), np.ones(n_states, dtype=np.int64))

    def same_as(self, other: "ImpulsePolicy") -> bool:
        return np.array_equal(self.executed(), other.executed())


@dataclass
class VIResult:
    values: np.ndarray
    iterations: int
    residual: float
    residuals: list[float] = field(default_factory=list)


def reward_bound(mdp: TabularMdp, cost: CostSpec) -> float:
    """Largest absolute one-step effective reward."""
    return float(np.max(np.abs(mdp.reward - cost.table(mdp))))


def branch_values(mdp: TabularMdp, cost: CostSpec, v: np.ndarray, costs: np.ndarray | None = None) -> np.ndarray:
    """One-step lookahead for every branch; row 0 is the null branch, shape (B, n)."""
    costs = cost.table(mdp) if costs is None else costs
    return mdp.reward - costs + mdp.gamma * (mdp.transition @ np.asarray(v, dtype=float))


def intervention_operator(mdp: TabularMdp, cost: CostSpec, v: np.ndarray, s: int, a: int) -> float:
    """Value of intervening with ``a`` at ``s`` then continuing with ``v``."""
    if a == NULL:
        raise ValueError("the intervention operator is defined for non-null actions only")
    if not 1 <= a <= mdp.n_actions:
        raise IndexError(f"action {a} out of range")
    c = cost.cost(s, a, mdp.action_values[a - 1])
    return float(mdp.reward[a, s] - c + mdp.gamma * np.dot(mdp.transition[a, s], v))


def bellman_apply(mdp: TabularMdp, cost: CostSpec, v: np.ndarray, costs: np.ndarray | None = None) -> np.ndarray:
    q = branch_values(mdp, cost, v, costs)
    return np.maximum(q[1:].max(axis=0), q[NULL])


def iteration_bound(gamma: float, tol: float, scale: float) -> int:
    """Iterations after which the residual from ``v = 0`` is guaranteed below ``tol``."""
    if scale <= tol:
        return 1
    if gamma == 0.0:
        return 2
    return int(math.ceil(math.log(tol * (1 - gamma) / scale) / math.log(gamma))) + 1


def value_iteration(
    mdp: TabularMdp, cost: CostSpec, tol: float = 1e-10, max_iters: int = 100_000, v0: np.ndarray | None = None
) -> VIResult:
    """Iterate ``v <- T v`` until the sup-norm step falls below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    costs = cost.table(mdp)
    v = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=float)
    residuals = []
    for k in range(1, max_iters + 1):
        nv = bellman_apply(mdp, cost, v, costs)
        res = float(np.max(np.abs(nv - v)))
        residuals.append(res)
        v = nv
        if res < tol:
            return VIResult(v, k, res, residuals)
    raise NonConvergenceError(max_iters, residuals[-1])


def optimal_q(mdp: TabularMdp, cost: CostSpec, v_star: np.ndarray | None = None, tol: float = 1e-12) -> np.ndarray:
    """Per-branch optimal values ``Q*(b, s)``, shape (B, n)."""
    if v_star is None:
        v_star = value_iteration(mdp, cost, tol=tol).values
    return branch_values(mdp, cost, v_star)


def extract_policy(
    mdp: TabularMdp, cost: CostSpec, v_star: np.ndarray, tie_epsilon: float = TIE_EPSILON
) -> ImpulsePolicy:
    """Intervene exactly where the best intervention beats the null branch by more than ``tie_epsilon``.

    Ties go to the null action; among interventions the lowest index wins.
    """
    q = branch_values(mdp, cost, v_star)
    best = np.argmax(q[1:], axis=0)
    gain = q[1:].max(axis=0) - q[NULL]
    return ImpulsePolicy(gain > tie_epsilon, best + 1)


def policy_kernel(mdp: TabularMdp, cost: CostSpec, policy: ImpulsePolicy) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop ``(P_pi, r_pi)`` for a deterministic impulse policy."""
    b = policy.executed()
    states = np.arange(mdp.n_states)
    eff = mdp.reward - cost.table(mdp)
    return mdp.transition[b, states], eff[b, states]


def evaluate_policy(mdp: TabularMdp, cost: CostSpec, policy: ImpulsePolicy, tol: float = 1e-10) -> np.ndarray:
    """Exact value of a fixed policy by solving ``(I - gamma P_pi) v = r_pi``."""
    P, r = policy_kernel(mdp, cost, policy)
    n = mdp.n_states
    A = np.eye(n) - mdp.gamma * P
    if n <= DIRECT_SOLVE_LIMIT:
        v = np.linalg.solve(A, r)
    else:
        v = np.zeros(n)
        for _ in range(iteration_bound(mdp.gamma, tol, float(np.max(np.abs(r)))) + 1):
            nv = r + mdp.gamma * (P @ v)
            done = np.max(np.abs(nv - v)) < tol
            v = nv
            if done:
                break
    residual = float(np.max(np.abs(A @ v - r)))
    if not np.all(np.isfinite(v)) or residual > tol * max(1.0, float(np.max(np.abs(v)))):
        raise np.linalg.LinAlgError(f"policy evaluation residual {residual:.3e}")
    return v


def classical_value_iteration(
    mdp: TabularMdp, cost: CostSpec | None = None, tol: float = 1e-12, max_iters: int = 100_000
) -> np.ndarray:
    """Standard value iteration treating the null action as one more action.

    Kept deliberately separate from :func:`value_iteration`: it loops over the
    flat action set and takes a single max, with no branch structure.
    """
    eff = mdp.reward - (cost or CostSpec.zero()).table(mdp)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        nv = np.full(mdp.n_states, -np.inf)
        for b in range(mdp.n_branches):
            nv = np.maximum(nv, eff[b] + mdp.gamma * (mdp.transition[b] @ v))
        if np.max(np.abs(nv - v)) < tol:
            return nv
        v = nv
    raise NonConvergenceError(max_iters, float(np.max(np.abs(nv - v))))


def never_intervene_threshold(mdp: TabularMdp) -> float:
    """Fixed cost above which intervening can never pay: ``2 max|R| / (1 - gamma)``."""
    return 2.0 * float(np.max(np.abs(mdp.reward))) / (1.0 - mdp.gamma)


def policy_to_blocks(policy: ImpulsePolicy) -> dict:
    return {"policy": {"n_states": policy.n_states, "intervene": policy.intervene.astype(int).tolist(),
                       "action": policy.action.tolist()}}


def policy_from_blocks(blocks: dict) -> ImpulsePolicy:
    p = blocks["policy"]
    pol = ImpulsePolicy(np.asarray(p["intervene"], dtype=bool), np.asarray(p["action"], dtype=np.int64))
    if pol.n_states != p["n_states"] or pol.action.shape != pol.intervene.shape:
        raise ValueError("policy arrays do not match n_states")
    return pol


def occupancy(mdp: TabularMdp, policy: ImpulsePolicy, horizon: int) -> np.ndarray:
    """Expected visits per state over ``horizon`` steps from ``mdp.initial``."""
    P, _ = policy_kernel(mdp, CostSpec.zero(), policy)
    d = mdp.initial.copy()
    total = np.zeros(mdp.n_states)
    for _ in range(horizon):
        total += d
        d = d @ P
    return total
