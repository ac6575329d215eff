"""Reference policies run through the same offline environment as the agent."""

from __future__ import annotations

import numpy as np

from fairrec.agent import EpisodeExhausted, select_action
from fairrec.mf_embed import EmbeddingTable


class Policy:
    """Recommendation policy driven by ``evaluation.run_pass``.

    ``begin_pass`` is called once per evaluation pass with that pass's
    generator; ``observe`` receives the feedback of every step.
    """

    name = "policy"

    def begin_pass(self, rng: np.random.Generator) -> None:
        self.rng = rng

    def act(self, episode, alloc) -> int:
        raise NotImplementedError

    def observe(self, episode, item_id: int, desired: bool, reward: float) -> None:
        pass


def random_policy(candidates: np.ndarray, rng: np.random.Generator) -> int:
    if len(candidates) == 0:
        raise EpisodeExhausted("no candidates left")
    return int(candidates[rng.integers(len(candidates))])


def greedy_mf_policy(user_id: int, candidates: np.ndarray, table: EmbeddingTable) -> int:
    """Highest ``p_u . e_a`` among candidates, ties to the smallest item id."""
    if len(candidates) == 0:
        raise EpisodeExhausted("no candidates left")
    p = table.user_vec(user_id)
    scores = table.item_vecs[table.item_rows(candidates)] @ p
    return int(candidates[int(np.argmax(scores))])


class RandomPolicy(Policy):
    name = "random"

    def act(self, episode, alloc) -> int:
        return random_policy(episode.candidates, self.rng)


class GreedyMFPolicy(Policy):
    name = "greedy-mf"

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self._E = table.dense_items("item")

    def act(self, episode, alloc) -> int:
        return select_action(self.table.user_vec(episode.user_id), episode.candidates, self._E)


class LinUCBModel:
    """Single shared ridge model with an upper-confidence exploration bonus."""

    def __init__(self, dim: int, alpha: float = 0.5):
        self.dim = dim
        self.alpha = alpha
        self.A = np.eye(dim)
        self.A_inv = np.eye(dim)
        self.b = np.zeros(dim)

    @property
    def theta(self) -> np.ndarray:
        return self.A_inv @ self.b

    def scores(self, contexts: np.ndarray) -> np.ndarray:
        if contexts.shape[-1] != self.dim:
            raise ValueError(f"context length {contexts.shape[-1]} != model dimension {self.dim}")
        mean = contexts @ self.theta
        width = np.sqrt(np.maximum(np.einsum("nk,kj,nj->n", contexts, self.A_inv, contexts), 0.0))
        return mean + self.alpha * width


def linucb_select(model: LinUCBModel, contexts: np.ndarray) -> int:
    """Row index of the highest UCB score (first on ties)."""
    return int(np.argmax(model.scores(np.atleast_2d(contexts))))


def linucb_update(model: LinUCBModel, context: np.ndarray, reward: float) -> None:
    c = np.asarray(context, dtype=float)
    model.A += np.outer(c, c)
    model.b += reward * c
    # Sherman-Morrison keeps the inverse in step with the rank-one update
    Ac = model.A_inv @ c
    model.A_inv -= np.outer(Ac, Ac) / (1.0 + c @ Ac)


class LinUCBPolicy(Policy):
    """Context is ``[item+group embedding || user vector]``; reward is the 0/1 feedback.

    The model is re-initialized at every pass and, if ``warmup`` is given,
    first learns online over those episodes (e.g. the training users).
    """

    name = "linucb"

    def __init__(self, table: EmbeddingTable, alpha: float = 0.5, warmup=None):
        self.table = table
        self.alpha = alpha
        self.warmup = warmup
        self._C = table.dense_items("combined")

    def contexts(self, user_id: int, candidates: np.ndarray) -> np.ndarray:
        p = self.table.user_vec(user_id)
        return np.hstack([self._C[candidates], np.broadcast_to(p, (len(candidates), len(p)))])

    def begin_pass(self, rng: np.random.Generator) -> None:
        super().begin_pass(rng)
        self.model = LinUCBModel(2 * self.table.d, self.alpha)
        if self.warmup is not None:
            self.warmup(self)

    def act(self, episode, alloc) -> int:
        if len(episode.candidates) == 0:
            raise EpisodeExhausted("no candidates left")
        k = linucb_select(self.model, self.contexts(episode.user_id, episode.candidates))
        return int(episode.candidates[k])

    def observe(self, episode, item_id: int, desired: bool, reward: float) -> None:
        ctx = self.contexts(episode.user_id, np.array([item_id]))[0]
        linucb_update(self.model, ctx, 1.0 if desired else 0.0)
