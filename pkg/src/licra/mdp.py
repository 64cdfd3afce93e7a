"""Finite impulse-control MDPs: model, intervention costs and sampling.

Actions are indexed along a single axis where index ``0`` is the null action
("do nothing") and ``1..n_actions`` are the interventions. All tensors are dense:

* ``transition[b, s, s']`` -- probability of ``s -> s'`` under action ``b``
* ``reward[b, s]``         -- reward for taking ``b`` in ``s`` (cost excluded)

The intervention cost lives in a separate :class:`CostSpec` so that rewards and
costs can be reported separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import textfmt

NULL = 0

COST_FORMS = (
    "zero",
    "fixed",
    "fixed_plus_proportional",
    "fixed_plus_quadratic",
    "fixed_plus_state_dependent",
)


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with a distinguished null action at index 0.

    Parameters
    ----------
    transition : array, shape (n_actions + 1, n_states, n_states)
    reward : array, shape (n_actions + 1, n_states)
    gamma : float
        Discount factor, ``0 <= gamma < 1``.
    action_values : array, shape (n_actions,), optional
        Real magnitude of each intervention, used by proportional and quadratic
        cost forms. Defaults to ``1, 2, ..., n_actions``.
    initial : array, shape (n_states,), optional
        Start distribution for episodic sampling. Defaults to uniform.

    The arrays are copied and frozen on construction. Content invariants
    (stochastic rows, finite rewards) are reported by :func:`validate` rather
    than enforced here, so malformed models can still be inspected.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    action_values: np.ndarray | None = None
    initial: np.ndarray | None = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        R = np.array(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ValueError(f"transition must have shape (B, n, n), got {P.shape}")
        if P.shape[0] < 2:
            raise ValueError("need the null action plus at least one intervention")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape[:2]}")
        m = P.shape[0] - 1
        av = np.arange(1, m + 1, dtype=float) if self.action_values is None else np.array(self.action_values, dtype=float)
        if av.shape != (m,):
            raise ValueError(f"action_values must have length {m}")
        n = P.shape[1]
        init = np.full(n, 1.0 / n) if self.initial is None else np.array(self.initial, dtype=float)
        if init.shape != (n,):
            raise ValueError(f"initial must have length {n}")
        for arr in (P, R, av, init):
            arr.flags.writeable = False
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "action_values", av)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions(self) -> int:
        """Number of non-null actions."""
        return self.transition.shape[0] - 1

    @property
    def n_branches(self) -> int:
        return self.transition.shape[0]

    def same_as(self, other: "TabularMdp") -> bool:
        return (
            self.gamma == other.gamma
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.action_values, other.action_values)
            and np.array_equal(self.initial, other.initial)
        )


@dataclass(frozen=True)
class CostSpec:
    """Intervention cost ``c(s, a)``; the null action always costs 0.

    Forms (``kappa`` is the fixed part, ``lam`` the variable weight, ``x`` the
    action's magnitude from ``TabularMdp.action_values``):

    ================================  ===========================
    ``zero``                          ``0``
    ``fixed``                         ``kappa``
    ``fixed_plus_proportional``       ``kappa + lam * |x|``
    ``fixed_plus_quadratic``          ``kappa + lam * x**2``
    ``fixed_plus_state_dependent``    ``kappa + fn(s, x)``
    ================================  ===========================

    Every form except ``zero`` requires ``kappa > 0``, which makes the cost
    minimally bounded: ``c(s, a) >= kappa`` for every intervention.
    """

    form: str = "zero"
    kappa: float = 0.0
    lam: float = 0.0
    fn: Callable[[int, float], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.form not in COST_FORMS:
            raise ValueError(f"unknown cost form {self.form!r}; expected one of {COST_FORMS}")
        if self.form == "zero":
            if self.kappa != 0 or self.lam != 0:
                raise ValueError("zero cost takes no parameters")
            return
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa}")
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.form == "fixed_plus_state_dependent" and self.fn is None:
            raise ValueError("fixed_plus_state_dependent needs fn")

    @classmethod
    def zero(cls) -> "CostSpec":
        return cls("zero")

    @classmethod
    def fixed(cls, kappa: float) -> "CostSpec":
        return cls("fixed", kappa)

    @classmethod
    def proportional(cls, kappa: float, lam: float) -> "CostSpec":
        return cls("fixed_plus_proportional", kappa, lam)

    @classmethod
    def quadratic(cls, kappa: float, lam: float = 1.0) -> "CostSpec":
        return cls("fixed_plus_quadratic", kappa, lam)

    @classmethod
    def state_dependent(cls, kappa: float, fn: Callable[[int, float], float]) -> "CostSpec":
        return cls("fixed_plus_state_dependent", kappa, 0.0, fn)

    def cost(self, s: int, a: int, magnitude: float = 1.0) -> float:
        """Cost of action index ``a`` at state ``s``; ``magnitude`` is the action value."""
        if a == NULL or self.form == "zero":
            return 0.0
        if self.form == "fixed":
            return self.kappa
        if self.form == "fixed_plus_proportional":
            return self.kappa + self.lam * abs(magnitude)
        if self.form == "fixed_plus_quadratic":
            return self.kappa + self.lam * magnitude * magnitude
        extra = float(self.fn(s, magnitude))
        if not extra >= 0:
            raise ValueError(f"state-dependent cost part must be nonnegative, got {extra} at s={s}")
        return self.kappa + extra

    def table(self, mdp: TabularMdp) -> np.ndarray:
        """Dense cost array with the layout of ``mdp.reward``."""
        out = np.zeros_like(mdp.reward)
        if self.form == "zero":
            return out
        for a in range(1, mdp.n_branches):
            x = mdp.action_values[a - 1]
            for s in range(mdp.n_states):
                out[a, s] = self.cost(s, a, x)
        return out

    def to_block(self) -> dict:
        if self.form == "fixed_plus_state_dependent":
            raise ValueError("a state-dependent cost holds a callable and cannot be serialized")
        return {"form": self.form, "kappa": self.kappa, "lambda": self.lam}

    @classmethod
    def from_block(cls, block: dict) -> "CostSpec":
        extra = set(block) - {"form", "kappa", "lambda"}
        if extra:
            raise ValueError(f"unknown cost keys {sorted(extra)}")
        return cls(block.get("form", "zero"), float(block.get("kappa", 0.0)), float(block.get("lambda", 0.0)))


@dataclass(frozen=True)
class TransitionSample:
    state: int
    action: int
    reward: float
    cost: float
    next_state: int
    intervened: bool
    terminal: bool = False


def _check_index(mdp: TabularMdp, s: int, a: int) -> None:
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state {s} out of range [0, {mdp.n_states})")
    if not 0 <= a < mdp.n_branches:
        raise IndexError(f"action {a} out of range [0, {mdp.n_branches})")


def effective_reward(mdp: TabularMdp, cost: CostSpec, s: int, a: int) -> float:
    """Reward minus intervention cost for taking ``a`` at ``s``."""
    _check_index(mdp, s, a)
    if a == NULL:
        return float(mdp.reward[NULL, s])
    return float(mdp.reward[a, s]) - cost.cost(s, a, mdp.action_values[a - 1])


def cumulative_kernel(mdp: TabularMdp) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-CDF tables ``(transition_cdf, initial_cdf)`` for sampling.

    Each row is a cumulative sum with entries from the last positive probability
    onwards pinned to exactly 1.0, so ``first j with u < cdf[j]`` never lands on a
    zero-probability state for ``u`` in ``[0, 1)``.
    """

    def pin(rows: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(rows, axis=-1)
        positive = rows > 0
        last = rows.shape[-1] - 1 - np.argmax(positive[..., ::-1], axis=-1)
        idx = np.arange(rows.shape[-1])
        cdf[idx >= last[..., None]] = 1.0
        return cdf

    return pin(mdp.transition), pin(mdp.initial)


def draw_index(cdf_row: np.ndarray, u: float) -> int:
    j = int(np.searchsorted(cdf_row, u, side="right"))
    return min(j, cdf_row.shape[0] - 1)


def sample_transition(
    mdp: TabularMdp, s: int, a: int, rng: np.random.Generator, cost: CostSpec | None = None
) -> TransitionSample:
    """Draw ``s' ~ P(. | s, a)`` using one uniform from ``rng``."""
    _check_index(mdp, s, a)
    cost = cost or CostSpec.zero()
    cdf, _ = cumulative_kernel(mdp)
    nxt = draw_index(cdf[a, s], rng.random())
    c = 0.0 if a == NULL else cost.cost(s, a, mdp.action_values[a - 1])
    return TransitionSample(s, a, float(mdp.reward[a, s]), c, nxt, a != NULL)


def validate(mdp: TabularMdp, atol: float = 1e-12) -> list[str]:
    """List every violated invariant; empty when the model is well formed."""
    problems = []
    if not 0.0 <= mdp.gamma < 1.0:
        problems.append(f"gamma={mdp.gamma} outside [0, 1)")
    P = mdp.transition
    for a, s, t in zip(*np.nonzero(P < 0)):
        problems.append(f"negative probability {P[a, s, t]} at (action={a}, state={s}, next={t})")
    for a, s, t in zip(*np.nonzero(~np.isfinite(P))):
        problems.append(f"non-finite probability at (action={a}, state={s}, next={t})")
    sums = P.sum(axis=2)
    for a, s in zip(*np.nonzero(np.abs(sums - 1.0) > atol)):
        problems.append(f"transition row (action={a}, state={s}) sums to {sums[a, s]!r}")
    for a, s in zip(*np.nonzero(~np.isfinite(mdp.reward))):
        problems.append(f"non-finite reward at (action={a}, state={s})")
    if np.any(mdp.initial < 0) or abs(mdp.initial.sum() - 1.0) > atol:
        problems.append("initial distribution is not a probability vector")
    if not np.all(np.isfinite(mdp.action_values)):
        problems.append("non-finite action value")
    return problems


def require_valid(mdp: TabularMdp) -> TabularMdp:
    problems = validate(mdp)
    if problems:
        raise ValueError("invalid MDP: " + "; ".join(problems[:5]))
    return mdp


# -- definition files -------------------------------------------------------------


def _action_key(a: int) -> str:
    return "null" if a == NULL else f"a{a}"


def mdp_to_blocks(mdp: TabularMdp, cost: CostSpec) -> dict:
    return {
        "mdp": {
            "n_states": mdp.n_states,
            "n_actions": mdp.n_actions,
            "gamma": mdp.gamma,
            "action_values": mdp.action_values.tolist(),
            "initial": mdp.initial.tolist(),
        },
        "transition": {_action_key(a): mdp.transition[a].tolist() for a in range(mdp.n_branches)},
        "reward": {_action_key(a): mdp.reward[a].tolist() for a in range(mdp.n_branches)},
        "cost": cost.to_block(),
    }


def mdp_from_blocks(blocks: dict) -> tuple[TabularMdp, CostSpec]:
    for name in ("mdp", "transition", "reward"):
        if name not in blocks:
            raise textfmt.FormatError(f"missing [{name}] block", block=name)
    head = blocks["mdp"]
    n, m = int(head["n_states"]), int(head["n_actions"])
    keys = [_action_key(a) for a in range(m + 1)]
    for name in ("transition", "reward"):
        missing = [k for k in keys if k not in blocks[name]]
        if missing:
            raise textfmt.FormatError(f"[{name}] missing rows for {missing}", block=name)
    mdp = TabularMdp(
        transition=np.array([blocks["transition"][k] for k in keys], dtype=float).reshape(m + 1, n, n),
        reward=np.array([blocks["reward"][k] for k in keys], dtype=float).reshape(m + 1, n),
        gamma=float(head["gamma"]),
        action_values=head.get("action_values"),
        initial=head.get("initial"),
    )
    cost = CostSpec.from_block(blocks.get("cost", {"form": "zero"}))
    return mdp, cost


def dumps_mdp(mdp: TabularMdp, cost: CostSpec) -> str:
    return textfmt.dumps(mdp_to_blocks(mdp, cost), header="impulse-control MDP definition")


def loads_mdp(text: str) -> tuple[TabularMdp, CostSpec]:
    return mdp_from_blocks(textfmt.loads(text))


def save_mdp(path: str | Path, mdp: TabularMdp, cost: CostSpec) -> None:
    Path(path).write_text(dumps_mdp(mdp, cost), encoding="utf-8")


def load_mdp(path: str | Path) -> tuple[TabularMdp, CostSpec]:
    return loads_mdp(Path(path).read_text(encoding="utf-8"))
