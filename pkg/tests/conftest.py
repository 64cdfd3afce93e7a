import json
from pathlib import Path

import numpy as np
import pytest

from licra.mdp import CostSpec, TabularMdp

FROZEN_PATH = Path(__file__).parent / "oracles" / "frozen.json"


@pytest.fixture(scope="session")
def frozen():
    return json.loads(FROZEN_PATH.read_text())


def single_state(reward_null=1.0, reward_act=0.0, gamma=0.5):
    P = np.ones((2, 1, 1))
    R = np.array([[reward_null], [reward_act]])
    return TabularMdp(P, R, gamma)


@pytest.fixture
def loop():
    return single_state(), CostSpec.fixed(1.0)


ACCEPTANCE: list[str] = []


def record(criterion: int, name: str, passed: bool, measured, tolerance) -> None:
    line = f"criterion {criterion:>2} {'PASS' if passed else 'FAIL'}  {name}: measured {measured}, required {tolerance}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
