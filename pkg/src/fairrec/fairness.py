"""Allocation of desired activities over item groups, proportional fairness, rewards."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AllocationState:
    """Conversion counts per group; ``x`` is the normalized allocation vector."""

    counts: tuple[int, ...]

    @classmethod
    def empty(cls, l: int) -> "AllocationState":
        return cls((0,) * l)

    @property
    def n_groups(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def x(self) -> np.ndarray:
        c = np.asarray(self.counts, dtype=float)
        total = c.sum()
        return c / total if total > 0 else np.zeros_like(c)

    def merge(self, other: "AllocationState") -> "AllocationState":
        return AllocationState(tuple(a + b for a, b in zip(self.counts, other.counts)))


def record_conversion(state: AllocationState, group: int) -> AllocationState:
    if not 0 <= group < state.n_groups:
        raise IndexError(f"group {group} outside [0, {state.n_groups})")
    counts = list(state.counts)
    counts[group] += 1
    return AllocationState(tuple(counts))


def allocation_from_events(groups: Sequence[int], l: int) -> np.ndarray:
    """Batch allocation vector from a list of converted-item groups."""
    counts = np.bincount(np.asarray(groups, dtype=np.int64), minlength=l).astype(float)
    return counts / counts.sum() if counts.sum() > 0 else counts


def optimal_allocation(weights: Sequence[float]) -> np.ndarray:
    """Maximizer of sum_i w_i log x_i on the simplex: x_i = w_i / sum(w)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    return w / w.sum()


def prop_fair(x: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted proportional fairness with the +1 shift, natural log."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("allocation entries must be non-negative")
    return float(np.sum(np.asarray(weights, dtype=float) * np.log1p(x)))


@dataclass(frozen=True)
class FairnessConfig:
    weights: np.ndarray
    lam: float = 2.0
    x_star: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.lam <= 1:
            raise ValueError("penalty lambda must exceed 1")
        object.__setattr__(self, "x_star", optimal_allocation(self.weights))


def reward(desired: bool, group: int, state: AllocationState, config: FairnessConfig) -> float:
    """Two-fold reward; ``state`` is the allocation before this conversion is recorded."""
    if not 0 <= group < state.n_groups:
        raise IndexError(f"group {group} outside [0, {state.n_groups})")
    if not desired:
        return -config.lam
    return float(config.x_star[group] - state.x[group] + 1.0)


def standard_reward(desired: bool, group: int, state: AllocationState, config: FairnessConfig) -> float:
    """Accuracy-only reward: +1 on a desired activity, -1 otherwise."""
    return 1.0 if desired else -1.0


def save_trajectory(states: Sequence[AllocationState], path: str | Path) -> None:
    """Write ``step,group0,...`` rows, one per allocation snapshot."""
    l = states[0].n_groups if states else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"group{g}" for g in range(l)])
        for step, s in enumerate(states):
            writer.writerow([step] + [repr(float(v)) for v in s.x])
