"""Interaction logs, synthetic protected-attribute groups, and user splits.

Input files follow the MovieLens ``u.data`` layout: one tab-separated
``user item rating timestamp`` row per interaction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_THRESHOLD = 3


class DatasetError(ValueError):
    """Raised for malformed input files or invalid dataset parameters."""


@dataclass(frozen=True)
class InteractionLog:
    """Column arrays of (user, item, rating, timestamp) records.

    ``desired`` is the binarized feedback, ``rating > threshold``.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    threshold: int = DEFAULT_THRESHOLD
    desired: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.users)
        if not (len(self.items) == len(self.ratings) == len(self.timestamps) == n):
            raise DatasetError("column lengths differ")
        object.__setattr__(self, "desired", self.ratings > self.threshold)

    def __len__(self) -> int:
        return len(self.users)

    @property
    def user_ids(self) -> np.ndarray:
        return np.unique(self.users)

    @property
    def item_ids(self) -> np.ndarray:
        return np.unique(self.items)

    def restrict_users(self, users: Iterable[int]) -> "InteractionLog":
        keep = np.isin(self.users, np.fromiter(users, dtype=np.int64))
        return InteractionLog(
            self.users[keep], self.items[keep], self.ratings[keep],
            self.timestamps[keep], self.threshold,
        )

    def with_threshold(self, threshold: int) -> "InteractionLog":
        return InteractionLog(self.users, self.items, self.ratings, self.timestamps, threshold)

    def user_sequences(self) -> dict[int, np.ndarray]:
        """Per-user record indices in time order (ties broken by item id)."""
        order = np.lexsort((self.items, self.timestamps, self.users))
        users_sorted = self.users[order]
        bounds = np.flatnonzero(np.diff(users_sorted)) + 1
        chunks = np.split(order, bounds)
        return {int(self.users[c[0]]): c for c in chunks if len(c)}


def _from_rows(rows: Sequence[tuple[int, int, int, int]], threshold: int) -> InteractionLog:
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    return InteractionLog(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], threshold)


def parse_interactions(path: str | Path, rating_threshold: int = DEFAULT_THRESHOLD) -> InteractionLog:
    """Read a tab-separated ``user item rating timestamp`` file.

    Raises ``DatasetError`` on malformed rows (with line number), duplicate
    (user, item) pairs, or an empty file.
    """
    rows: list[tuple[int, int, int, int]] = []
    seen: set[tuple[int, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DatasetError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                user, item, rating, ts = (int(p) for p in parts)
            except ValueError:
                raise DatasetError(f"line {lineno}: non-integer field in {line!r}") from None
            if not 1 <= rating <= 5:
                raise DatasetError(f"line {lineno}: rating {rating} outside 1..5")
            if (user, item) in seen:
                raise DatasetError(f"line {lineno}: duplicate (user={user}, item={item})")
            seen.add((user, item))
            rows.append((user, item, rating, ts))
    if not rows:
        raise DatasetError(f"{path}: empty interaction log")
    return _from_rows(rows, rating_threshold)


def write_interactions(log: InteractionLog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, r, t in zip(log.users, log.items, log.ratings, log.timestamps):
            fh.write(f"{u}\t{i}\t{r}\t{t}\n")


@dataclass(frozen=True)
class ItemCatalog:
    """Item to group assignment plus per-group fairness weights."""

    item_ids: np.ndarray
    groups: np.ndarray
    weights: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.item_ids) != len(self.groups):
            raise DatasetError("item_ids and groups differ in length")
        if np.any(self.weights <= 0):
            raise DatasetError("group weights must be strictly positive")
        if len(self.groups) and (self.groups.min() < 0 or self.groups.max() >= self.n_groups):
            raise DatasetError("group index out of range")
        object.__setattr__(self, "_index", {int(a): k for k, a in enumerate(self.item_ids)})

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_groups(self) -> int:
        return len(self.weights)

    def group_of(self, item_id: int) -> int:
        try:
            return int(self.groups[self._index[int(item_id)]])
        except KeyError:
            raise KeyError(f"unknown item {item_id}") from None

    def members(self, group: int) -> np.ndarray:
        return self.item_ids[self.groups == group]

    def group_shares(self) -> np.ndarray:
        return np.bincount(self.groups, minlength=self.n_groups) / self.n_items

    def with_weights(self, weights: Sequence[float]) -> "ItemCatalog":
        return ItemCatalog(self.item_ids, self.groups, np.asarray(weights, dtype=float))


def geometric_group_probs(l: int, p: float) -> np.ndarray:
    """Geometric mass (1-p)^g p over g in [0, l), renormalized."""
    if not 0.0 < p < 1.0:
        raise DatasetError(f"geometric parameter p must lie in (0, 1), got {p}")
    mass = p * (1.0 - p) ** np.arange(l)
    return mass / mass.sum()


def assign_groups(
    n_items: int,
    l: int = 10,
    p: float = 0.3,
    seed: int = 0,
    item_ids: Sequence[int] | None = None,
    weights: Sequence[float] | None = None,
) -> ItemCatalog:
    """Assign each item to one of ``l`` groups by a truncated geometric law.

    Item ids default to ``1..n_items`` (MovieLens numbering).
    """
    if l < 2:
        raise DatasetError("need at least 2 groups")
    if n_items < l:
        raise DatasetError(f"n_items={n_items} smaller than group count {l}")
    probs = geometric_group_probs(l, p)
    rng = np.random.default_rng(seed)
    groups = rng.choice(l, size=n_items, p=probs)
    ids = np.arange(1, n_items + 1) if item_ids is None else np.asarray(item_ids, dtype=np.int64)
    if len(ids) != n_items:
        raise DatasetError("item_ids length must equal n_items")
    w = np.ones(l) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != l:
        raise DatasetError("weights length must equal group count")
    return ItemCatalog(ids, groups.astype(np.int64), w)


def catalog_for_log(log: InteractionLog, l: int = 10, p: float = 0.3, seed: int = 0) -> ItemCatalog:
    """Catalog covering ids ``1..max(item id)``, so never-rated ids stay in it."""
    n_items = int(log.items.max())
    return assign_groups(n_items, l, p, seed)


@dataclass(frozen=True)
class UserSplit:
    train_users: frozenset
    valid_users: frozenset
    test_users: frozenset

    def __post_init__(self) -> None:
        if (self.train_users & self.valid_users or self.train_users & self.test_users
                or self.valid_users & self.test_users):
            raise DatasetError("user splits overlap")

    def label_of(self, user: int) -> str:
        for name, members in (("train", self.train_users), ("valid", self.valid_users),
                              ("test", self.test_users)):
            if user in members:
                return name
        raise KeyError(user)

    def sorted(self, name: str) -> list[int]:
        return sorted(getattr(self, f"{name}_users"))


def split_users(
    log: InteractionLog,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> UserSplit:
    """Random user-level split sized by largest-remainder rounding of ``n * ratios``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must be 3 non-negative values summing to 1, got {ratios}")
    users = log.user_ids
    if len(users) < 10:
        raise DatasetError(f"need at least 10 users to split, got {len(users)}")
    n = len(users)
    exact = n * np.asarray(ratios, dtype=float)
    # round first so float noise such as 10 * 0.1 = 0.99999 does not floor down
    sizes = np.floor(np.round(exact, 9)).astype(int)
    for k in np.argsort(-(exact - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[k] += 1
    n_train, n_valid, n_test = (int(v) for v in sizes)
    perm = np.random.default_rng(seed).permutation(users)
    train = perm[:n_train]
    valid = perm[n_train:n_train + n_valid]
    test = perm[n_train + n_valid:]
    return UserSplit(
        frozenset(int(u) for u in train),
        frozenset(int(u) for u in valid),
        frozenset(int(u) for u in test),
    )


def sample_users(log: InteractionLog, n_users: int, seed: int = 0) -> InteractionLog:
    """Seeded subset of ``n_users`` users with their complete histories."""
    users = log.user_ids
    if n_users >= len(users):
        return log
    chosen = np.random.default_rng(seed).choice(users, size=n_users, replace=False)
    return log.restrict_users(chosen)


def save_catalog(catalog: ItemCatalog, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "group_id"])
        writer.writerows(zip(catalog.item_ids.tolist(), catalog.groups.tolist()))


def load_catalog(path: str | Path, weights: Sequence[float] | None = None) -> ItemCatalog:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = np.array([int(r["item_id"]) for r in rows], dtype=np.int64)
    groups = np.array([int(r["group_id"]) for r in rows], dtype=np.int64)
    l = int(groups.max()) + 1
    w = np.ones(l) if weights is None else np.asarray(weights, dtype=float)
    return ItemCatalog(ids, groups, w)


def save_split(split: UserSplit, path: str | Path) -> None:
    rows = [(u, name) for name in ("train", "valid", "test") for u in split.sorted(name)]
    rows.sort()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "split"])
        writer.writerows(rows)


def load_split(path: str | Path) -> UserSplit:
    parts: dict[str, set[int]] = {"train": set(), "valid": set(), "test": set()}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parts[row["split"]].add(int(row["user_id"]))
    return UserSplit(frozenset(parts["train"]), frozenset(parts["valid"]), frozenset(parts["test"]))
