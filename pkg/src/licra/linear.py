"""Linear function approximation for impulse control.

Values are approximated as ``Q(s, b) ~ phi(s, b) . r`` over state-branch pairs
``z = (s, b)``; for tabular models pairs are flattened as ``z = s * B + b`` with
``B = n_actions + 1``. One stochastic-approximation step moves ``r`` along::

    phi(z) * ( theta(z) + gamma * max_b' phi(s', b') . r  -  phi(z) . r )

where ``theta`` is reward minus intervention cost and the max compares the
null-branch estimate with every intervention estimate at the next state.

For verification the expected update, the projected fixed point and the
approximation error bound are computed exactly from the transition kernel.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from . import rng as rngmod
from .exact import TIE_EPSILON, NonConvergenceError, optimal_q
from .mdp import CostSpec, TabularMdp, TransitionSample, cumulative_kernel
from .qlearn import EXPLORATION, LearnerDiagnostics, LearnSchedule, env_gamma

GRAM_TOL = 1e-8


class DivergenceError(RuntimeError):
    def __init__(self, step: int, norm: float):
        self.step = step
        self.norm = norm
        super().__init__(f"weights diverged at step {step} (|r| = {norm:.3e})")


class RankDeficientError(ValueError):
    def __init__(self, eigenvalue: float):
        self.eigenvalue = eigenvalue
        super().__init__(f"feature Gram matrix is singular: smallest eigenvalue {eigenvalue:.3e} <= {GRAM_TOL}")


@dataclass(frozen=True)
class FeatureMap:
    """``basis(state, branch)`` returning a length-``dim`` vector."""

    dim: int
    n_branches: int
    basis: Callable[[object, int], np.ndarray]
    labels: tuple[str, ...] = ()
    kind: str = "custom"

    def __call__(self, state, branch: int) -> np.ndarray:
        return self.basis(state, branch)

    def matrix(self, n_states: int) -> np.ndarray:
        """Feature matrix over all pairs, shape ``(n_states * n_branches, dim)``."""
        return np.array(
            [self.basis(s, b) for s in range(n_states) for b in range(self.n_branches)], dtype=float
        ).reshape(n_states * self.n_branches, self.dim)


@dataclass
class WeightVector:
    r: np.ndarray
    steps: int = 0


def _blocked(state_features: Callable[[object], np.ndarray], k: int, n_branches: int):
    def basis(state, branch):
        out = np.zeros(k * n_branches)
        out[branch * k:(branch + 1) * k] = state_features(state)
        return out

    return basis


def one_hot(n_states: int, n_branches: int) -> FeatureMap:
    """One indicator per state-branch pair; reproduces the tabular learner exactly."""
    p = n_states * n_branches

    def basis(s, b):
        out = np.zeros(p)
        out[int(s) * n_branches + b] = 1.0
        return out

    labels = tuple(f"s{s}b{b}" for s in range(n_states) for b in range(n_branches))
    return FeatureMap(p, n_branches, basis, labels, "one_hot")


def aggregation(groups: Sequence[int], n_branches: int) -> FeatureMap:
    """States sharing a group id share one weight per branch."""
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = int(groups.max()) + 1
    p = n_groups * n_branches

    def basis(s, b):
        out = np.zeros(p)
        out[groups[int(s)] * n_branches + b] = 1.0
        return out

    labels = tuple(f"g{g}b{b}" for g in range(n_groups) for b in range(n_branches))
    return FeatureMap(p, n_branches, basis, labels, "aggregation")


def _coords(coords):
    if coords is None:
        return lambda s: np.atleast_1d(np.asarray(s, dtype=float))
    table = np.asarray(coords, dtype=float)
    if table.ndim == 1:
        table = table[:, None]
    return lambda s: table[int(s)]


def radial(centers, width: float, n_branches: int, coords=None) -> FeatureMap:
    """Gaussian bumps over normalized state coordinates, plus a constant, per branch.

    ``coords`` maps integer states to coordinates; without it the state itself is
    taken as the coordinate vector.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] == 1 and centers.shape[1] > 1 and coords is not None and np.ndim(coords) == 1:
        centers = centers.T
    to_x = _coords(coords)
    k = centers.shape[0] + 1

    def state_features(s):
        x = to_x(s)
        d2 = np.sum((centers - x) ** 2, axis=1)
        return np.concatenate([[1.0], np.exp(-d2 / (2.0 * width * width))])

    labels = tuple(f"{name}b{b}" for b in range(n_branches) for name in ["bias"] + [f"rbf{i}" for i in range(k - 1)])
    return FeatureMap(k * n_branches, n_branches, _blocked(state_features, k, n_branches), labels, "radial")


def polynomial(degree: int, n_branches: int, dims: int = 1, coords=None) -> FeatureMap:
    """Monomials of the state coordinates up to ``degree`` (at most 2), per branch."""
    if degree not in (0, 1, 2):
        raise ValueError("polynomial features support degree 0, 1 or 2")
    to_x = _coords(coords)
    terms = [()]
    for d in range(1, degree + 1):
        terms.extend(itertools.combinations_with_replacement(range(dims), d))
    k = len(terms)

    def state_features(s):
        x = to_x(s)
        return np.array([np.prod([x[i] for i in t]) if t else 1.0 for t in terms])

    labels = tuple(f"x{''.join(map(str, t)) or '1'}b{b}" for b in range(n_branches) for t in terms)
    return FeatureMap(k * n_branches, n_branches, _blocked(state_features, k, n_branches), labels, "polynomial")


# -- estimates and updates ---------------------------------------------------------


def q_hat(features: FeatureMap, r: WeightVector | np.ndarray, s, a: int) -> float:
    w = r.r if isinstance(r, WeightVector) else np.asarray(r)
    phi = features(s, a)
    if phi.shape != w.shape:
        raise ValueError(f"feature dimension {phi.shape} does not match weights {w.shape}")
    return float(np.dot(phi, w))


def fa_update(r: WeightVector, features: FeatureMap, sample: TransitionSample, gamma: float, step: float) -> WeightVector:
    """One stochastic-approximation step on the sampled pair ``(z, z')``.

    Returns a new :class:`WeightVector`; the input is left untouched.
    """
    w = np.array(r.r, dtype=float)
    if step == 0:
        return WeightVector(w, r.steps + 1)
    phi = features(sample.state, sample.action)
    if sample.terminal:
        boot = 0.0
    else:
        boot = max(float(np.dot(features(sample.next_state, b), w)) for b in range(features.n_branches))
    td = sample.reward - sample.cost + gamma * boot - float(np.dot(phi, w))
    new = w + (step * td) * phi
    if not np.all(np.isfinite(new)):
        raise FloatingPointError(f"non-finite weights after update step {r.steps + 1}")
    return WeightVector(new, r.steps + 1)


def _pair_arrays(mdp: TabularMdp, cost: CostSpec):
    n, B = mdp.n_states, mdp.n_branches
    theta = (mdp.reward - cost.table(mdp)).T.reshape(n * B)
    P = mdp.transition.transpose(1, 0, 2).reshape(n * B, n)
    return theta, P


def bellman_pairs(mdp: TabularMdp, cost: CostSpec, q_pairs: np.ndarray) -> np.ndarray:
    """``theta + gamma * P max_b Q`` on flattened pairs."""
    theta, P = _pair_arrays(mdp, cost)
    v = q_pairs.reshape(mdp.n_states, mdp.n_branches).max(axis=1)
    return theta + mdp.gamma * (P @ v)


def gram_min_eigenvalue(phi: np.ndarray, D: np.ndarray) -> float:
    G = phi.T @ (D[:, None] * phi)
    return float(np.linalg.eigvalsh(G).min())


def _weighted_projection(phi: np.ndarray, D: np.ndarray):
    lam = gram_min_eigenvalue(phi, D)
    if lam <= GRAM_TOL:
        raise RankDeficientError(lam)
    G = phi.T @ (D[:, None] * phi)
    return lambda y: np.linalg.solve(G, phi.T @ (D * y))


def mean_update(r: np.ndarray, phi: np.ndarray, mdp: TabularMdp, cost: CostSpec, D: np.ndarray) -> np.ndarray:
    """Expected update ``E_D[phi(z) (F(phi r)(z) - (phi r)(z))]`` using the exact kernel."""
    q = phi @ r
    return phi.T @ (D * (bellman_pairs(mdp, cost, q) - q))


def projected_fixed_point(mdp: TabularMdp, cost: CostSpec, phi: np.ndarray, D: np.ndarray, tol: float = 1e-12,
                          max_iters: int = 100_000) -> np.ndarray:
    """Weights with ``phi r = Pi_D F(phi r)``, by projected value iteration."""
    project = _weighted_projection(phi, np.asarray(D, dtype=float))
    r = np.zeros(phi.shape[1])
    for k in range(max_iters):
        nr = project(bellman_pairs(mdp, cost, phi @ r))
        if np.max(np.abs(phi @ (nr - r))) < tol:
            return nr
        r = nr
    raise NonConvergenceError(max_iters, float(np.max(np.abs(phi @ (nr - r)))))


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    projection_error: float
    gram_min_eigenvalue: float


def verify_error_bound(mdp: TabularMdp, cost: CostSpec, features: FeatureMap | np.ndarray,
                       r_star: WeightVector | np.ndarray, D: np.ndarray, slack: float = 1e-8) -> BoundCheck:
    """Check ``|phi r* - Q*|_D <= (1 - gamma^2)^(-1/2) |Pi Q* - Q*|_D``.

    ``D`` is a strictly positive weighting over flattened pairs (normalized here).
    """
    phi = features.matrix(mdp.n_states) if isinstance(features, FeatureMap) else np.asarray(features, dtype=float)
    w = r_star.r if isinstance(r_star, WeightVector) else np.asarray(r_star, dtype=float)
    D = np.asarray(D, dtype=float)
    if D.shape != (phi.shape[0],) or np.any(D <= 0):
        raise ValueError("D must be strictly positive over all state-branch pairs")
    D = D / D.sum()
    project = _weighted_projection(phi, D)
    q_star = optimal_q(mdp, cost).T.reshape(-1)
    norm = lambda x: math.sqrt(float(np.sum(D * x * x)))  # noqa: E731
    proj_err = norm(phi @ project(q_star) - q_star)
    lhs = norm(phi @ w - q_star)
    rhs = proj_err / math.sqrt(1.0 - mdp.gamma ** 2)
    return BoundCheck(lhs, rhs, lhs <= rhs + slack, proj_err, gram_min_eigenvalue(phi, D))


# -- training ------------------------------------------------------------------------

STEP_RULES = {"global": 0, "visits": 1, "features": 2}


@dataclass
class FAResult:
    weights: WeightVector
    diagnostics: LearnerDiagnostics
    pair_visits: np.ndarray | None

    def sampling_distribution(self) -> np.ndarray:
        return self.pair_visits / self.pair_visits.sum()


def train_fa(target, cost: CostSpec | None, features: FeatureMap, schedule: LearnSchedule, steps: int, seed: int,
             horizon: int = 100, step_rule: str = "global", bound: float = 1e6, oracle: np.ndarray | None = None,
             r0: np.ndarray | None = None) -> FAResult:
    """Linear impulse-control Q-learning for ``steps`` transitions.

    Episodes have ``horizon`` steps and epsilon follows ``schedule`` per episode.
    ``step_rule="global"`` uses ``alpha0 / (1 + t) ** omega`` on the global step
    counter; ``"visits"`` uses per-pair visit counts like the tabular learner (with
    one-hot features the two learners then coincide bit for bit); ``"features"``
    counts visits of the single active feature and is only valid for indicator
    features such as one-hot or aggregation, where it keeps the limit weighted by
    the sampling distribution. Raises
    :class:`DivergenceError` when any weight leaves ``[-bound, bound]``.

    Uses the same random streams as :func:`licra.qlearn.train`.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    r = np.zeros(features.dim) if r0 is None else np.array(r0, dtype=float)
    episodes = -(-steps // horizon) if steps else 0
    eps = schedule.epsilons(episodes)
    agent = rngmod.stream(seed, "learner", "agent")
    env_rng = rngmod.stream(seed, "learner", "env")
    returns = np.zeros(episodes)
    counts = np.zeros(episodes, dtype=np.int64)
    td_abs = np.zeros(episodes)
    gaps = np.full(episodes, np.nan) if oracle is not None else None
    if isinstance(target, TabularMdp):
        mdp, cost = target, cost or CostSpec.zero()
        phi = features.matrix(mdp.n_states)
        if step_rule == "features" and not _is_indicator(phi):
            raise ValueError('step_rule="features" needs indicator features (one nonzero 1.0 per row)')
        fvisits = np.zeros(phi.shape[1], dtype=np.int64)
        cdf, init_cdf = cumulative_kernel(mdp)
        costs = cost.table(mdp)
        visits = np.zeros(phi.shape[0], dtype=np.int64)
        orc = np.asarray(oracle, dtype=float) if oracle is not None else np.zeros(0)
        gap_buf = gaps if gaps is not None else np.zeros(episodes)
        done = 0
        chunk = max(1, (1 << 18) // horizon)
        for lo in range(0, episodes, chunk):
            hi = min(episodes, lo + chunk)
            k = hi - lo
            status, done = K.run_fa(cdf, init_cdf, mdp.reward, costs, mdp.gamma, horizon, steps,
                                    agent.random((k, horizon, 2)), env_rng.random((k, horizon + 1)), eps[lo:hi],
                                    schedule.alpha0, schedule.omega, EXPLORATION[schedule.exploration], TIE_EPSILON,
                                    STEP_RULES[step_rule], phi, r, visits, fvisits, done, bound, orc,
                                    returns[lo:hi], counts[lo:hi], td_abs[lo:hi], gap_buf[lo:hi])
            if status == K.DIVERGED:
                raise DivergenceError(int(done), float(np.max(np.abs(r))))
        diag = LearnerDiagnostics(returns, counts, eps, gaps, visits.reshape(mdp.n_states, -1).sum(axis=1), td_abs)
        return FAResult(WeightVector(r, steps), diag, visits)
    if cost is not None:
        raise ValueError("environments carry their own cost; pass cost=None")
    return _train_fa_env(target, features, schedule, steps, horizon, step_rule, bound, r, eps, agent, env_rng,
                         returns, counts, td_abs)


def _is_indicator(phi: np.ndarray) -> bool:
    return bool(np.all((phi == 0) | (phi == 1)) and np.all((phi != 0).sum(axis=1) == 1))


def _train_fa_env(env, features, schedule, steps, horizon, step_rule, bound, r, eps, agent, env_rng,
                  returns, counts, td_abs):
    gamma = env_gamma(env)
    mode = EXPLORATION[schedule.exploration]
    B = features.n_branches
    visits: dict = {}
    t_global = 0
    for ep in range(eps.shape[0]):
        obs = env.reset(env_rng)
        total, k, err, n_here = 0.0, 0, 0.0, 0
        for _ in range(horizon):
            if t_global >= steps:
                break
            phis = np.array([features(obs, b) for b in range(B)])
            qb = phis @ r
            u1, u2 = agent.random(2)
            b = int(K.choose_branch(qb[0], qb[1:], eps[ep], u1, u2, mode, env.can_intervene(), TIE_EPSILON))
            step = env.step(b)
            b = b if step.intervened else 0
            if step.terminated:
                boot = 0.0
            else:
                boot = max(float(np.dot(features(step.obs, j), r)) for j in range(B))
            key = (obs if np.isscalar(obs) else tuple(np.ravel(obs)), b)
            if step_rule == "visits":
                alpha = schedule.alpha(visits.get(key, 0))
            elif step_rule == "features":
                raise ValueError('step_rule="features" is only supported on tabular models')
            else:
                alpha = schedule.alpha0 / (1.0 + t_global) ** schedule.omega
            visits[key] = visits.get(key, 0) + 1
            td = step.reward - step.cost + gamma * boot - float(phis[b] @ r)
            r += (alpha * td) * phis[b]
            if not np.all(np.abs(r) <= bound):
                raise DivergenceError(t_global, float(np.max(np.abs(r))))
            err += abs(td)
            total += step.reward - step.cost
            k += step.intervened
            obs = step.obs
            t_global += 1
            n_here += 1
            if step.terminated:
                break
        returns[ep], counts[ep], td_abs[ep] = total, k, err / max(n_here, 1)
    diag = LearnerDiagnostics(returns, counts, eps, None, np.zeros(0, dtype=np.int64), td_abs)
    return FAResult(WeightVector(r, t_global), diag, None)


def weights_to_blocks(w: WeightVector, features: FeatureMap) -> dict:
    return {"weights": {"dim": int(w.r.size), "steps": int(w.steps), "kind": features.kind,
                        "labels": list(features.labels), "r": [float(x) for x in w.r]}}


def weights_from_blocks(blocks: dict) -> WeightVector:
    b = blocks["weights"]
    r = np.asarray(b["r"], dtype=float)
    if r.size != b["dim"] or not np.all(np.isfinite(r)):
        raise ValueError("weights block: r must hold dim finite values")
    return WeightVector(r, int(b.get("steps", 0)))
