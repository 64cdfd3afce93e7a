"""Environments: named tabular instances, the Merton portfolio and the penalty-zone lane."""

from .base import Env, Step, TabularEnv, rollout
from .instances import SUITE, make_chain

__all__ = ["Env", "Step", "TabularEnv", "rollout", "SUITE", "make_chain"]
