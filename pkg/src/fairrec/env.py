"""Offline replay environment over logged ratings.

A user's episode starts from their earliest positive interactions; each
recommendation must come from the user's remaining rated items and is
answered with the logged binarized feedback.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from fairrec.agent import UserState, pad_history
from fairrec.dataset import InteractionLog, ItemCatalog
from fairrec.fairness import AllocationState, FairnessConfig, record_conversion, reward

RewardFn = Callable[[bool, int, AllocationState, FairnessConfig], float]


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 20
    n_history: int = 5
    alloc_scope: str = "global"  # "global" or "episode"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.n_history < 1:
            raise ValueError("horizon and n_history must be >= 1")
        if self.alloc_scope not in ("global", "episode"):
            raise ValueError(f"unknown allocation scope {self.alloc_scope!r}")


@dataclass(frozen=True)
class Episode:
    user_id: int
    candidates: np.ndarray  # sorted ascending
    history: tuple[int, ...]
    t: int
    horizon: int

    def state(self, alloc: AllocationState) -> UserState:
        return UserState(self.history, alloc)

    @property
    def done(self) -> bool:
        return self.t >= self.horizon or len(self.candidates) == 0


@dataclass(frozen=True)
class StepResult:
    desired: bool
    reward: float
    group: int
    episode: Episode
    alloc: AllocationState
    done: bool


@dataclass(frozen=True)
class _UserData:
    items: np.ndarray  # time order
    desired: np.ndarray
    lookup: dict


class OfflineEnv:
    def __init__(
        self,
        log: InteractionLog,
        catalog: ItemCatalog,
        fairness: FairnessConfig,
        config: EnvConfig | None = None,
        reward_fn: RewardFn = reward,
    ):
        self.catalog = catalog
        self.fairness = fairness
        self.config = config or EnvConfig()
        self.reward_fn = reward_fn
        self._users: dict[int, _UserData] = {}
        for user, idx in log.user_sequences().items():
            items = log.items[idx]
            desired = log.desired[idx]
            self._users[user] = _UserData(items, desired, dict(zip(items.tolist(), desired.tolist())))

    @property
    def users(self) -> list[int]:
        return sorted(self._users)

    def empty_allocation(self) -> AllocationState:
        return AllocationState.empty(self.catalog.n_groups)

    def reset(self, user_id: int) -> Episode:
        try:
            data = self._users[int(user_id)]
        except KeyError:
            raise KeyError(f"unknown user {user_id}") from None
        n = self.config.n_history
        seed_items = data.items[data.desired][:n]
        candidates = np.setdiff1d(data.items, seed_items)
        horizon = min(self.config.horizon, len(data.items))
        return Episode(int(user_id), candidates, pad_history(seed_items.tolist(), n), 0, horizon)

    def step(self, episode: Episode, item_id: int, alloc: AllocationState) -> StepResult:
        if episode.done:
            raise ProtocolError(f"episode for user {episode.user_id} is finished")
        pos = np.searchsorted(episode.candidates, item_id)
        if pos >= len(episode.candidates) or episode.candidates[pos] != item_id:
            raise ProtocolError(f"item {item_id} is not a candidate for user {episode.user_id}")
        desired = bool(self._users[episode.user_id].lookup[int(item_id)])
        group = self.catalog.group_of(item_id)
        r = self.reward_fn(desired, group, alloc, self.fairness)
        history = episode.history
        if desired:
            history = history[1:] + (int(item_id),)
            alloc = record_conversion(alloc, group)
        nxt = replace(episode, candidates=np.delete(episode.candidates, pos),
                      history=history, t=episode.t + 1)
        return StepResult(desired, r, group, nxt, alloc, nxt.done)


@dataclass(frozen=True)
class TraceRow:
    user: int
    step: int
    item: int
    group: int
    desired: bool
    reward: float


def save_trace(rows: Iterable[TraceRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "step", "item", "group", "desired", "reward"])
        for r in rows:
            writer.writerow([r.user, r.step, r.item, r.group, int(r.desired), repr(float(r.reward))])


def load_trace(path: str | Path) -> list[TraceRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [TraceRow(int(r["user"]), int(r["step"]), int(r["item"]), int(r["group"]),
                         r["desired"] == "1", float(r["reward"])) for r in csv.DictReader(fh)]
