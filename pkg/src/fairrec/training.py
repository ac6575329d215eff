"""Data preparation, agent training loop, and policy construction for runs."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from fairrec.agent import (
    AgentConfig,
    FairRecAgent,
    ReplayBuffer,
    Transition,
    explore,
    select_action,
)
from fairrec.baselines import GreedyMFPolicy, LinUCBPolicy, Policy, RandomPolicy
from fairrec.config import RunConfig
from fairrec.dataset import (
    InteractionLog,
    ItemCatalog,
    UserSplit,
    catalog_for_log,
    parse_interactions,
    sample_users,
    split_users,
)
from fairrec.env import EnvConfig, OfflineEnv
from fairrec.evaluation import EvalReport, evaluate, run_pass
from fairrec.fairness import FairnessConfig, reward, standard_reward
from fairrec.mf_embed import EmbeddingTable, fold_in_users, group_embeddings, train_mf
from fairrec.nn import TrainingDivergenceError, load_tensors, save_tensors

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DataBundle:
    log: InteractionLog
    catalog: ItemCatalog
    split: UserSplit
    table: EmbeddingTable
    fairness: FairnessConfig
    env_config: EnvConfig
    signature: str

    def users(self, name: str) -> list[int]:
        return self.split.sorted(name)

    def env(self, reward_fn=reward) -> OfflineEnv:
        return OfflineEnv(self.log, self.catalog, self.fairness, self.env_config, reward_fn)


_LOG_CACHE: dict[tuple[str, int], InteractionLog] = {}


def load_log(path: str, threshold: int) -> InteractionLog:
    key = (str(Path(path).resolve()), threshold)
    if key not in _LOG_CACHE:
        _LOG_CACHE[key] = parse_interactions(path, threshold)
    return _LOG_CACHE[key]


def prepare_data(cfg: RunConfig) -> tuple[InteractionLog, ItemCatalog, UserSplit]:
    full = load_log(cfg.data_path, cfg.threshold)
    # the catalog spans the full id range so subsetting users never changes groups
    catalog = catalog_for_log(full, cfg.l, cfg.p, cfg.data_seed)
    sub = sample_users(full, cfg.n_users, cfg.data_seed) if cfg.n_users else full
    split = split_users(sub, seed=cfg.data_seed)
    return sub, catalog, split


def seed_records(log: InteractionLog, users, n_history: int) -> InteractionLog:
    """Each user's earliest ``n_history`` positive records (the episode's opening history)."""
    keep = []
    for user, idx in log.user_sequences().items():
        if user in users:
            keep.extend(idx[log.desired[idx]][:n_history].tolist())
    keep = np.array(sorted(keep), dtype=np.int64)
    return InteractionLog(log.users[keep], log.items[keep], log.ratings[keep],
                          log.timestamps[keep], log.threshold)


def prepare(cfg: RunConfig, table: EmbeddingTable | None = None) -> DataBundle:
    """Parse, group, split, pretrain MF on training users, fold in held-out users.

    A ``table`` from an earlier ``prepare`` (e.g. reloaded from CSV) skips the MF stage.
    """
    sub, catalog, split = prepare_data(cfg)
    if table is None:
        train_log = sub.restrict_users(split.train_users)
        table = train_mf(train_log, cfg.d, cfg.mf_lr, cfg.mf_reg, cfg.mf_epochs, cfg.data_seed,
                         lr_decay=cfg.mf_decay, item_ids=catalog.item_ids)
        table = group_embeddings(table, catalog)
        held_out = split.valid_users | split.test_users
        table = fold_in_users(table, seed_records(sub, held_out, cfg.n_history), cfg.mf_reg,
                              users=held_out)
    elif table.d != cfg.d:
        raise ValueError(f"embedding table has d={table.d}, config asks for d={cfg.d}")
    fairness = FairnessConfig(catalog.weights, cfg.lam)
    env_cfg = EnvConfig(cfg.horizon, cfg.n_history, cfg.alloc_scope, cfg.seed)
    return DataBundle(sub, catalog, split, table, fairness, env_cfg, cfg.data_signature())


def agent_config(cfg: RunConfig) -> AgentConfig:
    return AgentConfig(
        n_history=cfg.n_history, hidden=cfg.hidden, att_hidden=cfg.att_hidden,
        fs_hidden=cfg.fs_hidden, fs_out=cfg.fs_out, gamma=cfg.gamma, actor_lr=cfg.lr,
        critic_lr=cfg.lr, batch_size=cfg.batch_size, buffer_capacity=cfg.buffer_capacity,
        sync_every=cfg.sync_every, variant="state-" if cfg.ablation == "state-" else "full",
    )


class FairRecPolicy(Policy):
    """Greedy (noise-free) recommendations from a trained agent."""

    def __init__(self, agent: FairRecAgent, name: str = "fairrec"):
        self.agent = agent
        self.name = name

    def act(self, episode, alloc) -> int:
        z = self.agent.policy(episode.state(alloc))
        return select_action(z, episode.candidates, self.agent.E)


@dataclass
class CurvePoint:
    epoch: int
    step: int
    cum_reward: float
    critic_loss: float
    mean_q: float
    cvr: float
    sigma: float


@dataclass
class TrainResult:
    agent: FairRecAgent
    curve: list[CurvePoint]
    bundle: DataBundle
    seconds: float = 0.0


def train(
    cfg: RunConfig,
    bundle: DataBundle | None = None,
    progress: Callable[[CurvePoint], None] | None = None,
) -> TrainResult:
    """Epoch loop over training-user episodes with one update round per step after warm-up."""
    start = time.perf_counter()
    bundle = bundle or prepare(cfg)
    reward_fn = standard_reward if cfg.ablation == "reward-" else reward
    env = bundle.env(reward_fn)
    agent = FairRecAgent.from_table(bundle.table, agent_config(cfg), cfg.seed)
    buffer = ReplayBuffer(cfg.buffer_capacity, cfg.n_history, bundle.catalog.n_groups, bundle.table.d)
    order_rng, noise_rng, replay_rng = (np.random.default_rng(s) for s in
                                        np.random.SeedSequence(cfg.seed).spawn(3))
    users = np.array(bundle.users("train"))
    rated = np.unique(bundle.log.restrict_users(bundle.split.train_users).items)
    sigma = cfg.sigma_scale * float(np.mean(np.linalg.norm(bundle.table.dense_items()[rated], axis=1)))

    curve: list[CurvePoint] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        alloc = env.empty_allocation()
        cum = 0.0
        hits = n_steps = 0
        losses, qs = [], []
        for user in order_rng.permutation(users):
            if cfg.alloc_scope == "episode":
                alloc = env.empty_allocation()
            ep = env.reset(user)
            while not ep.done:
                state = ep.state(alloc)
                z = explore(agent.policy(state), sigma, noise_rng)
                item = select_action(z, ep.candidates, agent.E)
                res = env.step(ep, item, alloc)
                buffer.push(Transition(state, z, res.reward, res.episode.state(res.alloc), res.done))
                cum += res.reward
                hits += res.desired
                n_steps += 1
                step += 1
                if len(buffer) >= cfg.batch_size and step % cfg.update_every == 0:
                    try:
                        loss, q = agent.update(buffer.sample(cfg.batch_size, replay_rng))
                    except TrainingDivergenceError as exc:
                        raise TrainingDivergenceError(f"epoch {epoch}, step {step}: {exc}") from exc
                    losses.append(loss)
                    qs.append(q)
                ep, alloc = res.episode, res.alloc
        point = CurvePoint(epoch, step, cum, float(np.mean(losses)) if losses else float("nan"),
                           float(np.mean(qs)) if qs else float("nan"), hits / max(n_steps, 1), sigma)
        curve.append(point)
        if progress is not None:
            progress(point)
        sigma *= cfg.sigma_decay
    return TrainResult(agent, curve, bundle, time.perf_counter() - start)


def load_agent(cfg: RunConfig, bundle: DataBundle, checkpoint: str | Path) -> FairRecAgent:
    agent = FairRecAgent.from_table(bundle.table, agent_config(cfg), cfg.seed)
    agent.load_state_tensors(load_tensors(checkpoint))
    return agent


def make_linucb(bundle: DataBundle, alpha: float) -> LinUCBPolicy:
    """LinUCB that first learns online over one pass of the training users."""
    train_users = bundle.users("train")
    env = bundle.env()

    def warmup(policy: LinUCBPolicy) -> None:
        run_pass(env, policy, train_users, policy.rng, begin=False)

    return LinUCBPolicy(bundle.table, alpha, warmup)


POLICY_NAMES = ("random", "greedy-mf", "linucb", "fairrec")


def make_policy(name: str, bundle: DataBundle, cfg: RunConfig, agent: FairRecAgent | None = None) -> Policy:
    if name == "random":
        return RandomPolicy()
    if name == "greedy-mf":
        return GreedyMFPolicy(bundle.table)
    if name == "linucb":
        return make_linucb(bundle, cfg.alpha_ucb)
    if name.startswith("fairrec"):
        if agent is None:
            raise ValueError("the fairrec policy needs a trained agent")
        return FairRecPolicy(agent, name)
    raise ValueError(f"unknown policy {name!r}; choose from {POLICY_NAMES}")


def variant_name(cfg: RunConfig) -> str:
    return "fairrec" if cfg.ablation == "full" else f"fairrec({cfg.ablation})"


def evaluate_policy(policy: Policy, bundle: DataBundle, cfg: RunConfig, split: str = "test",
                    traces: dict | None = None) -> EvalReport:
    return evaluate(policy, bundle.env(), bundle.users(split), cfg.eval_seeds, bundle.signature, traces)


def grid_search(cfg: RunConfig, dims=(10, 30, 50, 100), lrs=(0.0001, 0.001, 0.01),
                progress: Callable[[RunConfig, EvalReport], None] | None = None) -> tuple[RunConfig, list]:
    """Pick (d, lr) maximizing validation UFG of the trained agent."""
    results = []
    for d in dims:
        bundle = prepare(cfg.replace(d=d))
        for lr in lrs:
            run_cfg = cfg.replace(d=d, lr=lr)
            res = train(run_cfg, bundle)
            report = evaluate_policy(FairRecPolicy(res.agent, variant_name(run_cfg)), bundle, run_cfg, "valid")
            results.append((run_cfg, report))
            if progress is not None:
                progress(run_cfg, report)
    best = max(results, key=lambda cr: cr[1].ufg)[0]
    return best, results


def write_curve(curve: list[CurvePoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "cum_reward", "critic_loss"])
        for p in curve:
            writer.writerow([p.epoch, repr(p.cum_reward), repr(p.critic_loss)])


def write_train_log(curve: list[CurvePoint], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "reward", "critic_loss", "mean_q"])
        for p in curve:
            writer.writerow([p.epoch, p.step, repr(p.cum_reward), repr(p.critic_loss), repr(p.mean_q)])


def save_checkpoint(agent: FairRecAgent, path: str | Path) -> None:
    save_tensors(agent.state_tensors(), path)
