"""Independent reference values, computed without importing licra.

Run ``python3 tests/oracles/derive.py`` to regenerate ``frozen.json``; the test
suite checks the library against the frozen file and checks that this script
still reproduces it.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

FROZEN = Path(__file__).with_name("frozen.json")


def chain2(gamma=Fraction(9, 10), kappa=Fraction(1, 5)):
    # state 1 absorbs and pays 1; state 0 pays 0 and either waits or pays kappa to jump
    v1 = 1 / (1 - gamma)
    jump = -kappa + gamma * v1
    # waiting forever is worth 0, jumping is worth ``jump``
    v0 = max(Fraction(0), jump)
    return [float(v0), float(v1)], [v0 == jump and jump > 0, False]


def chain2_budget(n=1, gamma=Fraction(9, 10), kappa=Fraction(1, 5)):
    """Soft budget on chain2, values per stratum z = -1..n for states (0, 1)."""
    R = Fraction(1)
    delta = max(Fraction(1), 10 * (R + 2 * R / (1 - gamma)) / (1 - gamma))
    over = -delta / (1 - gamma)
    v1 = 1 / (1 - gamma)
    rows = {-1: [over, over]}
    # z = 0: jumping would drop to z = -1 and pay -delta forever after
    rows[0] = [max(Fraction(0), -kappa + gamma * over), v1]
    for z in range(1, n + 1):
        rows[z] = [max(Fraction(0), -kappa + gamma * v1), v1]
    return float(delta), {str(z): [float(x) for x in v] for z, v in rows.items()}


def one_state(reward=Fraction(1), gamma=Fraction(1, 2)):
    return float(reward / (1 - gamma))


def merton_drift(w0=100.0, mu=0.05, dt=0.01, steps=75):
    w = w0
    for _ in range(steps):
        w *= 1.0 + mu * dt
    return w, 2.0 * math.sqrt(w)


def lane_null_rollout(steps=6, v0=1.0, drag=0.05):
    x, v, out = 0.0, v0, []
    for _ in range(steps):
        v = max(0.0, v - drag)
        x += v
        out.append([x, v])
    return out


def derive() -> dict:
    v, intervene = chain2()
    delta, strata = chain2_budget()
    w, u = merton_drift()
    return {
        "chain2_values": v,
        "chain2_intervene": intervene,
        "chain2_budget1_delta": delta,
        "chain2_budget1_strata": strata,
        "one_state_value": one_state(),
        "effective_reward_fixed": 1.0 - 0.5,
        "effective_reward_proportional": 2.0 - (1.0 + 0.5 * 2.0),
        "intervention_operator_absorbing": -1.0 + 0.9 * 10.0,
        "never_intervene_threshold_chain2": 2 * 1.0 / (1 - 0.9),
        "merton_drift_wealth": w,
        "merton_drift_utility": u,
        "lane_null_rollout": lane_null_rollout(),
    }


if __name__ == "__main__":
    FROZEN.write_text(json.dumps(derive(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {FROZEN}")
