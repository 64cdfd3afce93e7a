"""Impulse-control reinforcement learning on finite and desk-scale environments."""

__version__ = "0.1.0"
