"""Finite-difference verification of every trainable path on toy-sized models."""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np

from fairrec.agent import PAD, AgentConfig, Batch, FairRecAgent
from fairrec.mf_embed import mf_loss, mf_loss_grad
from fairrec.nn import grad_check

PATHS = ("mf", "encoder", "critic", "actor")


@dataclass(frozen=True)
class ToySizes:
    d: int = 4
    n_history: int = 3
    width: int = 8
    n_groups: int = 3
    n_items: int = 12
    batch: int = 4


def toy_agent(rng: np.random.Generator, sizes: ToySizes = ToySizes(), variant: str = "full") -> FairRecAgent:
    E = np.zeros((sizes.n_items + 1, sizes.d))
    E[1:] = rng.normal(0.0, 0.5, size=(sizes.n_items, sizes.d))
    groups = rng.integers(0, sizes.n_groups, size=sizes.n_items)
    C = E.copy()
    for g in range(sizes.n_groups):
        members = np.flatnonzero(groups == g) + 1
        if len(members):
            C[members] += E[members].mean(axis=0)
    cfg = AgentConfig(n_history=sizes.n_history, hidden=sizes.width, att_hidden=sizes.width,
                      fs_hidden=sizes.width, fs_out=sizes.d, batch_size=sizes.batch, variant=variant)
    agent = FairRecAgent(E, C, sizes.n_groups, cfg, seed=int(rng.integers(2**31)))
    # non-zero biases keep pre-activations away from the ReLU kink at the origin
    for layer in agent.online.layer_map().values():
        layer.params["b"][:] = rng.normal(0.0, 0.5, size=layer.n_out)
    agent.target = copy.deepcopy(agent.online)
    return agent


def toy_batch(rng: np.random.Generator, sizes: ToySizes = ToySizes()) -> Batch:
    B, N, l = sizes.batch, sizes.n_history, sizes.n_groups
    H = rng.integers(1, sizes.n_items + 1, size=(B, N))
    H[0, 0] = PAD  # exercise the padding mask
    X = rng.dirichlet(np.ones(l), size=B)
    return Batch(H=H, X=X, Z=rng.uniform(-1, 1, size=(B, sizes.d)), R=rng.normal(size=B),
                 H2=rng.integers(1, sizes.n_items + 1, size=(B, N)), X2=rng.dirichlet(np.ones(l), size=B),
                 done=rng.random(B) < 0.3)


def relu_margin(agent: FairRecAgent, batch: Batch) -> float:
    """Smallest |pre-activation| feeding a ReLU in the critic-loss and actor passes."""
    pre = []
    nets = agent.online
    h, cache = nets.encoder.forward_cache(*agent._inputs(batch.H, batch.X))
    if cache is not None:
        _, _, (_, a2, _), fs_cache = cache
        pre += [a2] + [a for _, a in fs_cache[:-1]]
    z, (_, acache) = nets.actor.forward_cache(h)
    pre += [a for _, a in acache[:-1]]
    for action in (batch.Z, z):
        _, (_, a, mcache) = nets.critic.forward_cache(h, action)
        pre += [a] + [m for _, m in mcache[:-1]]
    return float(min(np.abs(p).min() for p in pre))


def smooth_instance(rng: np.random.Generator, sizes: ToySizes = ToySizes(), margin: float = 1e-4,
                    variant: str = "full") -> tuple[FairRecAgent, Batch]:
    """Toy agent and batch resampled until every ReLU input is ``margin`` away from its kink."""
    while True:
        agent, batch = toy_agent(rng, sizes, variant), toy_batch(rng, sizes)
        if relu_margin(agent, batch) >= margin:
            return agent, batch


def check_mf(rng: np.random.Generator, sizes: ToySizes = ToySizes()) -> float:
    P = rng.normal(size=(3, sizes.d))
    Q = rng.normal(size=(5, sizes.d))
    u = rng.integers(0, 3, size=8)
    i = rng.integers(0, 5, size=8)
    r = rng.uniform(1, 5, size=8)
    _, gP, gQ = mf_loss_grad(P, Q, u, i, r, 0.05)
    return grad_check(lambda: mf_loss(P, Q, u, i, r, 0.05), {"P": P, "Q": Q}, {"P": gP, "Q": gQ})


def extended(agent: FairRecAgent, batch: Batch) -> tuple[FairRecAgent, Batch]:
    """Views of ``agent``/``batch`` whose inputs are long doubles.

    Parameters stay shared float64 arrays, so perturbations made by the
    checker are seen, but every forward intermediate is promoted to extended
    precision. Central differences at h=1e-5 on float64 losses carry roundoff
    near 1e-11, which swamps gradient entries of order 1e-8.
    """
    wide = copy.copy(agent)
    wide.E = agent.E.astype(np.longdouble)
    wide.C = agent.C.astype(np.longdouble)
    return wide, replace(batch, X=batch.X.astype(np.longdouble), Z=batch.Z.astype(np.longdouble))


def _q(agent: FairRecAgent, batch: Batch, policy_action: bool):
    h = agent.encode_batch(batch.H, batch.X)
    z = agent.online.actor.forward(h) if policy_action else batch.Z
    return agent.online.critic.forward_cache(h, z)[0]


def check_agent(agent: FairRecAgent, batch: Batch, rng: np.random.Generator) -> dict[str, float]:
    h = agent.encode_batch(batch.H, batch.X)
    targets = agent.critic_forward(h, batch.Z) + rng.normal(0.0, 0.5, size=len(batch))
    agent.critic_loss_and_grads(batch, targets)
    params = agent.online.params()
    grads = {k: v.copy() for k, v in agent.online.grads().items()}
    wide, wbatch = extended(agent, batch)
    wtargets = targets.astype(np.longdouble)

    def subset(prefix):
        return {k: v for k, v in params.items() if k.startswith(prefix)}

    loss = lambda: np.mean((wtargets - _q(wide, wbatch, False)) ** 2)  # noqa: E731
    out = {
        "encoder": grad_check(loss, subset("encoder"), grads),
        "critic": grad_check(loss, subset("critic"), grads),
    }
    agent.actor_objective_and_grads(batch)
    grads = {k: v.copy() for k, v in agent.online.grads().items()}
    out["actor"] = grad_check(lambda: -np.mean(_q(wide, wbatch, True)), subset("actor"), grads)
    return {k: float(v) for k, v in out.items()}


def run_trials(n_trials: int = 100, seed: int = 0, sizes: ToySizes = ToySizes()) -> dict[str, float]:
    """Worst relative error per path over ``n_trials`` random toy instances."""
    worst = dict.fromkeys(PATHS, 0.0)
    for child in np.random.SeedSequence(seed).spawn(n_trials):
        rng = np.random.default_rng(child)
        worst["mf"] = max(worst["mf"], check_mf(rng, sizes))
        errs = check_agent(*smooth_instance(rng, sizes), rng)
        for k, v in errs.items():
            worst[k] = max(worst[k], v)
    return worst
