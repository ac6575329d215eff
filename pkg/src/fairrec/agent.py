"""Fairness-aware actor-critic recommender.

State encoding:
    eps_a = e_a + e_g                                  (item + group embedding)
    beta  = softmax(att1(relu(att2([eps_a1..eps_aN]))))  over N history slots
    m     = [beta_1 eps_a1, ..., beta_N eps_aN]
    n     = MLP(x)                                     (allocation vector)
    h     = [m || n]
Actor    z = tanh(MLP(h)), item picked by argmax_a e_a . z
Critic   Q = MLP([relu(W_h h + b_h) || z])

Encoder parameters belong to the critic's parameter group: they are trained
by the TD loss only, and the actor update treats ``h`` as a constant input.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fairrec.fairness import AllocationState
from fairrec.nn import (
    AdamState,
    Dense,
    MLP,
    TrainingDivergenceError,
    adam_step,
    pack_layers,
    relu,
    relu_backward,
    softmax,
    softmax_backward,
)

PAD = 0  # sentinel item id for unfilled history slots; its embedding rows are zero


class EpisodeExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class UserState:
    history: tuple[int, ...]  # length N, most recent last, PAD-filled at the front
    alloc: AllocationState


def pad_history(items: Sequence[int], n: int) -> tuple[int, ...]:
    recent = list(items)[-n:]
    return (PAD,) * (n - len(recent)) + tuple(int(a) for a in recent)


@dataclass(frozen=True)
class StateEncoding:
    m: np.ndarray
    n: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return np.concatenate([self.m, self.n], axis=-1)


@dataclass
class AgentConfig:
    n_history: int = 5
    hidden: int = 1000
    att_hidden: int = 64
    fs_hidden: int = 32
    fs_out: int = 16
    gamma: float = 0.9
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    batch_size: int = 1024
    buffer_capacity: int = 100_000
    sync_every: int = 100
    variant: str = "full"  # "full" or "state-" (plain concatenation encoder)


class FairnessAwareEncoder:
    """Attention-weighted user-preference state plus fairness-state MLP."""

    def __init__(self, n_history: int, d: int, n_groups: int, cfg: AgentConfig, rng: np.random.Generator):
        self.N, self.d = n_history, d
        self.att2 = Dense(n_history * d, cfg.att_hidden, rng)
        self.att1 = Dense(cfg.att_hidden, n_history, rng)
        self.fs = MLP([n_groups, cfg.fs_hidden, cfg.fs_out], rng)
        self.out_dim = n_history * d + cfg.fs_out

    def attention(self, eps: np.ndarray, mask: np.ndarray):
        B = eps.shape[0]
        flat = eps.reshape(B, self.N * self.d)
        a2 = self.att2.forward(flat)
        r = relu(a2)
        logits = self.att1.forward(r)
        # an all-padding history falls back to attending over every slot
        mask = mask | ~mask.any(axis=1, keepdims=True)
        beta = softmax(np.where(mask, logits, -np.inf))
        return beta, (flat, a2, r)

    def forward_cache(self, eps: np.ndarray, mask: np.ndarray, x: np.ndarray):
        beta, att_cache = self.attention(eps, mask)
        m = (beta[:, :, None] * eps).reshape(eps.shape[0], -1)
        n, fs_cache = self.fs.forward_cache(x)
        return np.concatenate([m, n], axis=1), (eps, beta, att_cache, fs_cache)

    def backward(self, cache, dh: np.ndarray) -> None:
        eps, beta, (flat, a2, r), fs_cache = cache
        B, Nd = eps.shape[0], self.N * self.d
        dm = dh[:, :Nd].reshape(B, self.N, self.d)
        dbeta = np.sum(dm * eps, axis=2)
        dlogits = softmax_backward(beta, dbeta)
        dr = self.att1.backward(r, dlogits)
        self.att2.backward(flat, relu_backward(a2, dr))
        self.fs.backward(fs_cache, dh[:, Nd:])

    def layers(self) -> dict[str, Dense]:
        out = {"att2": self.att2, "att1": self.att1}
        out.update({f"fs{k}": layer for k, layer in enumerate(self.fs.layers)})
        return out


class ConcatEncoder:
    """Ablation encoder: concatenated raw embeddings of the N history items."""

    def __init__(self, n_history: int, d: int):
        self.N, self.d = n_history, d
        self.out_dim = n_history * d

    def forward_cache(self, eps: np.ndarray, mask: np.ndarray, x: np.ndarray):
        return eps.reshape(eps.shape[0], -1), None

    def backward(self, cache, dh: np.ndarray) -> None:
        pass

    def layers(self) -> dict[str, Dense]:
        return {}


class Actor:
    """ReLU MLP with a tanh output so the ranking vector stays bounded."""

    def __init__(self, h_dim: int, d: int, hidden: int, rng: np.random.Generator):
        self.mlp = MLP([h_dim, hidden, hidden, d], rng)

    @property
    def layers(self) -> list[Dense]:
        return self.mlp.layers

    def forward(self, h: np.ndarray) -> np.ndarray:
        return np.tanh(self.mlp.forward(h))

    def forward_cache(self, h: np.ndarray):
        a, cache = self.mlp.forward_cache(h)
        z = np.tanh(a)
        return z, (z, cache)

    def backward(self, cache, dz: np.ndarray) -> np.ndarray:
        z, mcache = cache
        return self.mlp.backward(mcache, dz * (1.0 - z * z))


class Critic:
    def __init__(self, h_dim: int, d: int, hidden: int, rng: np.random.Generator):
        self.proj = Dense(h_dim, d, rng)
        self.mlp = MLP([2 * d, hidden, hidden, 1], rng)

    def forward_cache(self, h: np.ndarray, z: np.ndarray):
        a = self.proj.forward(h)
        c = np.concatenate([relu(a), z], axis=1)
        q, mcache = self.mlp.forward_cache(c)
        return q[:, 0], (h, a, mcache)

    def backward(self, cache, dq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h, a, mcache = cache
        dc = self.mlp.backward(mcache, dq[:, None])
        d = a.shape[1]
        dh = self.proj.backward(h, relu_backward(a, dc[:, :d]))
        return dh, dc[:, d:]

    def layers(self) -> dict[str, Dense]:
        out = {"proj": self.proj}
        out.update({f"mlp{k}": layer for k, layer in enumerate(self.mlp.layers)})
        return out


class Networks:
    """Encoder, actor and critic; the unit that is copied into the target set."""

    def __init__(self, d: int, n_groups: int, cfg: AgentConfig, rng: np.random.Generator):
        if cfg.variant == "state-":
            self.encoder = ConcatEncoder(cfg.n_history, d)
        elif cfg.variant == "full":
            self.encoder = FairnessAwareEncoder(cfg.n_history, d, n_groups, cfg, rng)
        else:
            raise ValueError(f"unknown encoder variant {cfg.variant!r}")
        self.actor = Actor(self.encoder.out_dim, d, cfg.hidden, rng)
        self.critic = Critic(self.encoder.out_dim, d, cfg.hidden, rng)

    def layer_map(self) -> dict[str, Dense]:
        out = {f"encoder.{k}": v for k, v in self.encoder.layers().items()}
        out.update({f"actor.{k}": v for k, v in enumerate(self.actor.layers)})
        out.update({f"critic.{k}": v for k, v in self.critic.layers().items()})
        return out

    def params(self, prefixes: tuple[str, ...] = ("encoder", "actor", "critic")) -> dict[str, np.ndarray]:
        return {f"{lname}.{p}": arr for lname, layer in self.layer_map().items()
                if lname.startswith(prefixes) for p, arr in layer.params.items()}

    def grads(self, prefixes: tuple[str, ...] = ("encoder", "actor", "critic")) -> dict[str, np.ndarray]:
        return {f"{lname}.{p}": arr for lname, layer in self.layer_map().items()
                if lname.startswith(prefixes) for p, arr in layer.grads.items()}

    def zero_grad(self) -> None:
        for layer in self.layer_map().values():
            layer.zero_grad()

    def pack(self, prefixes: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
        return pack_layers([v for k, v in self.layer_map().items() if k.startswith(prefixes)])


CRITIC_GROUP = ("encoder", "critic")
ACTOR_GROUP = ("actor",)


@dataclass
class Batch:
    """Column arrays of transitions: history ids, allocations, actions, rewards."""

    H: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    R: np.ndarray
    H2: np.ndarray
    X2: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.R)


@dataclass(frozen=True)
class Transition:
    state: UserState
    z: np.ndarray
    reward: float
    next_state: UserState
    done: bool


def batch_from_transitions(transitions: Sequence[Transition]) -> Batch:
    return Batch(
        H=np.array([t.state.history for t in transitions], dtype=np.int64),
        X=np.array([t.state.alloc.x for t in transitions]),
        Z=np.array([t.z for t in transitions], dtype=float),
        R=np.array([t.reward for t in transitions], dtype=float),
        H2=np.array([t.next_state.history for t in transitions], dtype=np.int64),
        X2=np.array([t.next_state.alloc.x for t in transitions]),
        done=np.array([t.done for t in transitions], dtype=bool),
    )


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling without replacement."""

    def __init__(self, capacity: int, n_history: int, n_groups: int, d: int):
        self.capacity = capacity
        self.size = 0
        self._next = 0
        self.H = np.zeros((capacity, n_history), dtype=np.int64)
        self.X = np.zeros((capacity, n_groups))
        self.Z = np.zeros((capacity, d))
        self.R = np.zeros(capacity)
        self.H2 = np.zeros((capacity, n_history), dtype=np.int64)
        self.X2 = np.zeros((capacity, n_groups))
        self.done = np.zeros(capacity, dtype=bool)

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition) -> None:
        k = self._next
        self.H[k] = tr.state.history
        self.X[k] = tr.state.alloc.x
        self.Z[k] = tr.z
        self.R[k] = tr.reward
        self.H2[k] = tr.next_state.history
        self.X2[k] = tr.next_state.alloc.x
        self.done[k] = tr.done
        self._next = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return self.take(idx)

    def take(self, idx: np.ndarray) -> Batch:
        return Batch(self.H[idx], self.X[idx], self.Z[idx], self.R[idx],
                     self.H2[idx], self.X2[idx], self.done[idx])


def select_action(z: np.ndarray, candidates: np.ndarray, item_matrix: np.ndarray) -> int:
    """Candidate maximizing ``e_a . z``; ``candidates`` sorted so ties go to the smallest id."""
    if len(candidates) == 0:
        raise EpisodeExhausted("no candidates left")
    scores = item_matrix[candidates] @ z
    return int(candidates[int(np.argmax(scores))])


def explore(z: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return z.copy()
    return z + rng.normal(0.0, sigma, size=z.shape)


class FairRecAgent:
    """Online/target networks, Adam groups, and the update rules.

    ``item_matrix`` and ``combined_matrix`` are indexed by item id
    (see ``EmbeddingTable.dense_items``); row ``PAD`` must be zero.
    """

    def __init__(
        self,
        item_matrix: np.ndarray,
        combined_matrix: np.ndarray,
        n_groups: int,
        cfg: AgentConfig | None = None,
        seed: int = 0,
    ):
        self.cfg = cfg or AgentConfig()
        self.E = item_matrix
        self.C = combined_matrix
        self.d = item_matrix.shape[1]
        self.n_groups = n_groups
        rng = np.random.default_rng(seed)
        self.online = Networks(self.d, n_groups, self.cfg, rng)
        self._critic_flat = self.online.pack(CRITIC_GROUP)
        self._actor_flat = self.online.pack(ACTOR_GROUP)
        self.target = copy.deepcopy(self.online)
        self.critic_opt = AdamState(lr=self.cfg.critic_lr)
        self.actor_opt = AdamState(lr=self.cfg.actor_lr)
        self.updates = 0
        self.syncs = 0

    @classmethod
    def from_table(cls, table, cfg: AgentConfig | None = None, seed: int = 0) -> "FairRecAgent":
        return cls(table.dense_items("item"), table.dense_items("combined"),
                   len(table.group_vecs), cfg, seed)

    # state encoding -----------------------------------------------------

    def _inputs(self, H: np.ndarray, X: np.ndarray):
        # the plain-concatenation ablation sees raw item embeddings, not item+group
        src = self.E if self.cfg.variant == "state-" else self.C
        return src[H], H != PAD, X

    def encode_batch(self, H: np.ndarray, X: np.ndarray, nets: Networks | None = None) -> np.ndarray:
        nets = nets or self.online
        return nets.encoder.forward_cache(*self._inputs(H, X))[0]

    def encode_state(self, state: UserState) -> StateEncoding:
        h = self.encode_batch(np.array([state.history]), state.alloc.x[None, :])[0]
        split = self.cfg.n_history * self.d
        return StateEncoding(h[:split], h[split:])

    def attention_weights(self, state: UserState) -> np.ndarray:
        enc = self.online.encoder
        if not isinstance(enc, FairnessAwareEncoder):
            raise TypeError("the concatenation encoder has no attention")
        eps, mask, _ = self._inputs(np.array([state.history]), state.alloc.x[None, :])
        return enc.attention(eps, mask)[0][0]

    # forward passes -----------------------------------------------------

    def actor_forward(self, h: np.ndarray, nets: Networks | None = None) -> np.ndarray:
        nets = nets or self.online
        return nets.actor.forward(h)

    def critic_forward(self, h: np.ndarray, z: np.ndarray, nets: Networks | None = None) -> np.ndarray:
        nets = nets or self.online
        h2, z2 = np.atleast_2d(h), np.atleast_2d(z)
        q = nets.critic.forward_cache(h2, z2)[0]
        return q if np.ndim(h) > 1 else q[0]

    def policy(self, state: UserState) -> np.ndarray:
        h = self.encode_batch(np.array([state.history]), state.alloc.x[None, :])
        return self.online.actor.forward(h)[0]

    def td_targets(self, batch: Batch) -> np.ndarray:
        h2 = self.encode_batch(batch.H2, batch.X2, self.target)
        z2 = self.target.actor.forward(h2)
        q2 = self.target.critic.forward_cache(h2, z2)[0]
        return batch.R + self.cfg.gamma * np.where(batch.done, 0.0, q2)

    def td_target(self, r: float, next_state: UserState, done: bool) -> float:
        if done:
            return float(r)
        b = batch_from_transitions([Transition(next_state, np.zeros(self.d), r, next_state, False)])
        return float(self.td_targets(b)[0])

    # losses and gradients -----------------------------------------------

    def critic_loss(self, batch: Batch, targets: np.ndarray) -> float:
        h = self.encode_batch(batch.H, batch.X)
        q = self.online.critic.forward_cache(h, batch.Z)[0]
        return float(np.mean((targets - q) ** 2))

    def actor_objective(self, batch: Batch) -> float:
        h = self.encode_batch(batch.H, batch.X)
        q = self.online.critic.forward_cache(h, self.online.actor.forward(h))[0]
        return float(np.mean(q))

    def critic_loss_and_grads(self, batch: Batch, targets: np.ndarray | None = None) -> float:
        """Mean squared TD error; gradients land in the online critic+encoder grads."""
        nu = self.td_targets(batch) if targets is None else targets
        nets = self.online
        self._critic_flat[1].fill(0.0)
        self._actor_flat[1].fill(0.0)
        h, enc_cache = nets.encoder.forward_cache(*self._inputs(batch.H, batch.X))
        q, ccache = nets.critic.forward_cache(h, batch.Z)
        err = nu - q
        loss = float(np.mean(err**2))
        dq = -2.0 * err / len(err)
        dh, _ = nets.critic.backward(ccache, dq)
        nets.encoder.backward(enc_cache, dh)
        return loss

    def actor_objective_and_grads(self, batch: Batch) -> float:
        """Mean Q of the online policy; actor grads hold the gradient of ``-mean Q``."""
        nets = self.online
        self._critic_flat[1].fill(0.0)
        self._actor_flat[1].fill(0.0)
        h = self.encode_batch(batch.H, batch.X)
        z, acache = nets.actor.forward_cache(h)
        q, ccache = nets.critic.forward_cache(h, z)
        _, dz = nets.critic.backward(ccache, -np.ones_like(q) / len(q))
        nets.actor.backward(acache, dz)
        self._critic_flat[1].fill(0.0)
        return float(np.mean(q))

    # updates -------------------------------------------------------------

    def update_critic(self, batch: Batch) -> float:
        if len(batch) == 0:
            raise ValueError("empty batch")
        loss = self.critic_loss_and_grads(batch)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(f"critic loss is {loss}")
        p, g = self._critic_flat
        adam_step({"critic": p}, {"critic": g}, self.critic_opt)
        return loss

    def update_actor(self, batch: Batch) -> float:
        if len(batch) == 0:
            raise ValueError("empty batch")
        mean_q = self.actor_objective_and_grads(batch)
        p, g = self._actor_flat
        adam_step({"actor": p}, {"actor": g}, self.actor_opt)
        return mean_q

    def sync_targets(self) -> None:
        tgt = self.target.params()
        for name, arr in self.online.params().items():
            np.copyto(tgt[name], arr)
        self.syncs += 1

    def update(self, batch: Batch) -> tuple[float, float]:
        """One round: critic step, actor step, and hard target sync every ``sync_every``."""
        loss = self.update_critic(batch)
        mean_q = self.update_actor(batch)
        self.updates += 1
        if self.updates % self.cfg.sync_every == 0:
            self.sync_targets()
        return loss, mean_q

    # checkpoints ---------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"online.{k}": v for k, v in self.online.params().items()}
        out.update({f"target.{k}": v for k, v in self.target.params().items()})
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for prefix, nets in (("online.", self.online), ("target.", self.target)):
            for name, arr in nets.params().items():
                src = tensors[prefix + name]
                if src.shape != arr.shape:
                    raise ValueError(f"{name}: checkpoint shape {src.shape} != {arr.shape}")
                np.copyto(arr, src)
