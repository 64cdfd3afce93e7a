"""Small named MDP instances used as oracle test beds.

Names understood by :func:`make_chain`:

``chain2``
    The hand-solvable two-state chain: state 0 pays nothing and stays put unless
    an intervention (fixed cost 0.2) moves it to the absorbing state 1, which pays
    1 per step. With ``gamma = 0.9``: ``v*(1) = 10`` and ``v*(0) = 8.8``.
``chain(n)`` / ``chain(n, gamma, kappa, slip)``
    ``n`` states in a row; the null action drifts one step left with probability
    ``slip``, the single intervention pushes one step right; the right end pays 1.
``random(seed, n, m)`` / ``random(seed, n, m, gamma)``
    Seeded random MDP with ``n`` states and ``m`` interventions, sparse Dirichlet
    rows, rewards in ``[-1, 1]`` and a fixed cost in ``[0.05, 0.5]``.
"""

from __future__ import annotations

import re

import numpy as np

from .. import rng as rngmod
from ..mdp import CostSpec, TabularMdp, require_valid


def chain2(gamma: float = 0.9, kappa: float = 0.2) -> tuple[TabularMdp, CostSpec]:
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 1] = 1.0
    P[1, 0, 1] = 1.0
    P[1, 1, 1] = 1.0
    R = np.array([[0.0, 1.0], [0.0, 1.0]])
    return require_valid(TabularMdp(P, R, gamma, name="chain2")), CostSpec.fixed(kappa)


def chain(n: int, gamma: float = 0.9, kappa: float = 0.2, slip: float = 0.3) -> tuple[TabularMdp, CostSpec]:
    if n < 1:
        raise ValueError("chain needs at least one state")
    P = np.zeros((2, n, n))
    R = np.zeros((2, n))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        P[0, s, left] += slip
        P[0, s, s] += 1.0 - slip
        P[1, s, right] += 1.0
    R[:, n - 1] = 1.0
    return require_valid(TabularMdp(P, R, gamma, name=f"chain({n})")), CostSpec.fixed(kappa)


def random_mdp(seed: int, n: int, m: int, gamma: float = 0.9, kappa: float | None = None) -> tuple[TabularMdp, CostSpec]:
    g = rngmod.stream(seed, "instance", "random", n, m)
    P = np.zeros((m + 1, n, n))
    for b in range(m + 1):
        for s in range(n):
            support = g.choice(n, size=min(n, int(g.integers(1, 4))), replace=False)
            P[b, s, support] = g.dirichlet(np.ones(support.size))
    P /= P.sum(axis=2, keepdims=True)
    R = g.uniform(-1.0, 1.0, size=(m + 1, n))
    k = float(g.uniform(0.05, 0.5)) if kappa is None else kappa
    return require_valid(TabularMdp(P, R, gamma, name=f"random({seed}, {n}, {m})")), CostSpec.fixed(k)


_CALL = re.compile(r"^\s*(\w+)\s*(?:\((.*)\))?\s*$")


def make_chain(spec: str) -> tuple[TabularMdp, CostSpec]:
    """Build a registered instance from its name; see the module docstring."""
    match = _CALL.match(spec)
    if not match:
        raise KeyError(f"unknown instance {spec!r}")
    name, args = match.group(1), match.group(2)
    params = [float(x) if "." in x or "e" in x.lower() else int(x) for x in args.split(",")] if args else []
    if name == "chain2" and not params:
        return chain2()
    if name == "chain" and 1 <= len(params) <= 4:
        return chain(int(params[0]), *params[1:])
    if name == "random" and 3 <= len(params) <= 4:
        return random_mdp(int(params[0]), int(params[1]), int(params[2]), *params[3:])
    raise KeyError(f"unknown instance {spec!r}")


# the fixed convergence suite for the tabular learners
SUITE = ("chain2", "chain(4)", "random(11, 3, 2)", "random(23, 4, 2)", "random(5, 5, 1)")
