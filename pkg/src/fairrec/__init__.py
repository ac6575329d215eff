"""Fairness-aware interactive recommendation with actor-critic RL."""

__version__ = "0.1.0"
