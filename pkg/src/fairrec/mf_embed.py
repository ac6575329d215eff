"""Matrix-factorization pretraining of user/item vectors and group embeddings.

The SGD objective is the biased-free regularized squared error

    sum_(u,i) (r_ui - p_u . e_i)^2 + reg * (|p_u|^2 + |e_i|^2)

with the regularizer applied once per observation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np

from fairrec.dataset import InteractionLog, ItemCatalog


class MFDivergenceError(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"matrix factorization diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class EmbeddingTable:
    """User, item and group vectors, row-aligned with their id arrays.

    ``combined[k] = item_vecs[k] + group_vecs[item_groups[k]]`` once group
    embeddings have been attached.
    """

    d: int
    user_ids: np.ndarray
    user_vecs: np.ndarray
    item_ids: np.ndarray
    item_vecs: np.ndarray
    group_vecs: np.ndarray | None = None
    item_groups: np.ndarray | None = None
    combined: np.ndarray | None = None
    _user_row: dict = field(init=False, repr=False, compare=False)
    _item_row: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_user_row", {int(u): k for k, u in enumerate(self.user_ids)})
        object.__setattr__(self, "_item_row", {int(a): k for k, a in enumerate(self.item_ids)})

    def user_vec(self, user_id: int) -> np.ndarray:
        try:
            return self.user_vecs[self._user_row[int(user_id)]]
        except KeyError:
            raise KeyError(f"unknown user {user_id}") from None

    def item_vec(self, item_id: int) -> np.ndarray:
        try:
            return self.item_vecs[self._item_row[int(item_id)]]
        except KeyError:
            raise KeyError(f"unknown item {item_id}") from None

    def has_user(self, user_id: int) -> bool:
        return int(user_id) in self._user_row

    def item_rows(self, item_ids: Iterable[int]) -> np.ndarray:
        try:
            return np.array([self._item_row[int(a)] for a in item_ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"unknown item {exc.args[0]}") from None

    def dense_items(self, which: str = "item") -> np.ndarray:
        """Array indexed directly by item id; row 0 and missing ids are zero."""
        src = self.item_vecs if which == "item" else self.combined
        if src is None:
            raise ValueError("group embeddings not attached")
        out = np.zeros((int(self.item_ids.max()) + 1, self.d))
        out[self.item_ids] = src
        return out


def predict_score(table: EmbeddingTable, user_id: int, item_id: int) -> float:
    return float(table.user_vec(user_id) @ table.item_vec(item_id))


@numba.njit(cache=True)
def _sgd_epoch(P, Q, u_idx, i_idx, ratings, order, lr, reg):
    d = P.shape[1]
    for n in order:
        u = u_idx[n]
        i = i_idx[n]
        err = ratings[n]
        for k in range(d):
            err -= P[u, k] * Q[i, k]
        for k in range(d):
            pu = P[u, k]
            qi = Q[i, k]
            P[u, k] = pu + lr * 2.0 * (err * qi - reg * pu)
            Q[i, k] = qi + lr * 2.0 * (err * pu - reg * qi)


def mf_loss(P, Q, u_idx, i_idx, ratings, reg) -> float:
    pu = P[u_idx]
    qi = Q[i_idx]
    err = ratings - np.einsum("nk,nk->n", pu, qi)
    return float(np.sum(err**2) + reg * (np.sum(pu**2) + np.sum(qi**2)))


def mf_loss_grad(P, Q, u_idx, i_idx, ratings, reg) -> tuple[float, np.ndarray, np.ndarray]:
    """Full-batch loss and its analytic gradient w.r.t. ``P`` and ``Q``."""
    pu = P[u_idx]
    qi = Q[i_idx]
    err = ratings - np.einsum("nk,nk->n", pu, qi)
    loss = float(np.sum(err**2) + reg * (np.sum(pu**2) + np.sum(qi**2)))
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    np.add.at(gP, u_idx, -2.0 * err[:, None] * qi + 2.0 * reg * pu)
    np.add.at(gQ, i_idx, -2.0 * err[:, None] * pu + 2.0 * reg * qi)
    return loss, gP, gQ


def train_mf(
    log: InteractionLog,
    d: int = 50,
    lr: float = 0.01,
    reg: float = 0.01,
    epochs: int = 30,
    seed: int = 0,
    lr_decay: float = 0.9,
    init_scale: float = 0.05,
    item_ids: Sequence[int] | None = None,
    history: list | None = None,
) -> EmbeddingTable:
    """Fit user/item vectors by shuffled SGD with per-epoch learning-rate decay.

    ``item_ids`` widens the item universe beyond the rated items; unrated
    items keep their initial vectors. If ``history`` is a list, the
    per-epoch training loss is appended to it.
    """
    if len(log) == 0:
        raise ValueError("cannot factorize an empty log")
    if d < 1:
        raise ValueError("d must be >= 1")
    if lr <= 0 or reg < 0:
        raise ValueError("lr must be > 0 and reg >= 0")
    users = log.user_ids
    items = np.unique(np.concatenate([log.item_ids, np.asarray(item_ids if item_ids is not None else [],
                                                                 dtype=np.int64)]))
    u_idx = np.searchsorted(users, log.users)
    i_idx = np.searchsorted(items, log.items)
    ratings = log.ratings.astype(np.float64)

    rng = np.random.default_rng(seed)
    P = rng.uniform(-init_scale, init_scale, size=(len(users), d))
    Q = rng.uniform(-init_scale, init_scale, size=(len(items), d))
    step = lr
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(ratings))
        _sgd_epoch(P, Q, u_idx, i_idx, ratings, order, step, reg)
        loss = mf_loss(P, Q, u_idx, i_idx, ratings, reg)
        if not np.isfinite(loss):
            raise MFDivergenceError(epoch, loss)
        if history is not None:
            history.append(loss)
        step *= lr_decay
    return EmbeddingTable(d, users, P, items, Q)


def group_embeddings(table: EmbeddingTable, catalog: ItemCatalog) -> EmbeddingTable:
    """Attach per-group mean item vectors and the combined item+group vectors."""
    groups = np.array([catalog.group_of(a) for a in table.item_ids], dtype=np.int64)
    l = catalog.n_groups
    counts = np.bincount(groups, minlength=l)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise ValueError(f"group {int(empty[0])} has no items")
    sums = np.zeros((l, table.d))
    np.add.at(sums, groups, table.item_vecs)
    group_vecs = sums / counts[:, None]
    combined = table.item_vecs + group_vecs[groups]
    return replace(table, group_vecs=group_vecs, item_groups=groups, combined=combined)


def fold_in_users(
    table: EmbeddingTable,
    log: InteractionLog,
    reg: float = 0.01,
    users: Iterable[int] = (),
) -> EmbeddingTable:
    """Add ridge-regression user vectors for users of ``log`` against frozen items.

    Each user solves min_p sum_i (r_ui - p.e_i)^2 + reg * n_u * |p|^2, the
    per-observation regularizer of the training objective. Ids in ``users``
    without any record get the zero vector. Existing users are left untouched.
    """
    new_ids, new_vecs = [], []
    seqs = log.user_sequences()
    eye = np.eye(table.d)
    for user in sorted(set(int(u) for u in users) - set(seqs)):
        if not table.has_user(user):
            new_ids.append(user)
            new_vecs.append(np.zeros(table.d))
    for user, idx in sorted(seqs.items()):
        if table.has_user(user):
            continue
        E = table.item_vecs[table.item_rows(log.items[idx])]
        r = log.ratings[idx].astype(float)
        A = E.T @ E + reg * len(idx) * eye
        new_ids.append(user)
        new_vecs.append(np.linalg.solve(A, E.T @ r))
    if not new_ids:
        return table
    user_ids = np.concatenate([table.user_ids, np.array(new_ids, dtype=np.int64)])
    user_vecs = np.vstack([table.user_vecs, np.array(new_vecs)])
    order = np.argsort(user_ids, kind="stable")
    return replace(table, user_ids=user_ids[order], user_vecs=user_vecs[order])


def save_table(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "id"] + [f"v{k}" for k in range(table.d)])
        for kind, ids, vecs in (("user", table.user_ids, table.user_vecs),
                                ("item", table.item_ids, table.item_vecs),
                                ("group", np.arange(0 if table.group_vecs is None else len(table.group_vecs)),
                                 table.group_vecs)):
            if vecs is None:
                continue
            for i, v in zip(ids.tolist(), vecs):
                writer.writerow([kind, i] + [repr(float(x)) for x in v])


def load_table(path: str | Path, catalog: ItemCatalog | None = None) -> EmbeddingTable:
    """Read a table written by ``save_table``; ``catalog`` re-derives combined vectors."""
    parts: dict[str, tuple[list, list]] = {"user": ([], []), "item": ([], []), "group": ([], [])}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 2
        for row in reader:
            ids, vecs = parts[row[0]]
            ids.append(int(row[1]))
            vecs.append([float(x) for x in row[2:]])
    table = EmbeddingTable(
        d,
        np.array(parts["user"][0], dtype=np.int64), np.array(parts["user"][1]).reshape(-1, d),
        np.array(parts["item"][0], dtype=np.int64), np.array(parts["item"][1]).reshape(-1, d),
    )
    if catalog is not None:
        return group_embeddings(table, catalog)
    return table
