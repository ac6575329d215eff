"""Conversion rate, proportional fairness, unit fairness gain, and evaluation passes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from fairrec.baselines import Policy
from fairrec.env import OfflineEnv, TraceRow
from fairrec.fairness import AllocationState, prop_fair


class UndefinedMetricError(ArithmeticError):
    pass


class ComparabilityError(ValueError):
    pass


def cvr(trace: Sequence[TraceRow] | Sequence[bool]) -> float:
    """Fraction of steps with a desired activity."""
    if len(trace) == 0:
        raise ValueError("cannot compute CVR of an empty step log")
    hits = sum(1 for r in trace if (r.desired if isinstance(r, TraceRow) else r))
    return hits / len(trace)


def ufg(propfair: float, cvr_value: float) -> float:
    """PropFair per unit of conversion-rate headroom, ``propfair / (1 - cvr)``."""
    if cvr_value >= 1.0:
        raise UndefinedMetricError("UFG is undefined at CVR = 1")
    return propfair / (1.0 - cvr_value)


def _ufg_or_inf(propfair: float, cvr_value: float) -> float:
    try:
        return ufg(propfair, cvr_value)
    except UndefinedMetricError:
        return math.inf


@dataclass(frozen=True)
class PassResult:
    seed: int
    trace: list[TraceRow]
    alloc: AllocationState


@dataclass(frozen=True)
class SeedMetrics:
    seed: int
    cvr: float
    propfair: float
    ufg: float
    allocation: np.ndarray


@dataclass(frozen=True)
class EvalReport:
    policy: str
    cvr: float
    propfair: float
    ufg: float
    allocation: np.ndarray
    per_seed: tuple[SeedMetrics, ...]
    signature: str = ""

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(s.seed for s in self.per_seed)


def run_pass(
    env: OfflineEnv,
    policy: Policy,
    users: Iterable[int],
    rng: np.random.Generator,
    seed: int = 0,
    begin: bool = True,
) -> PassResult:
    """Run one episode per user in order; allocation scope follows ``env.config``."""
    if begin:
        policy.begin_pass(rng)
    alloc = env.empty_allocation()
    total = env.empty_allocation()
    trace: list[TraceRow] = []
    for user in users:
        if env.config.alloc_scope == "episode":
            total = total.merge(alloc)
            alloc = env.empty_allocation()
        ep = env.reset(user)
        while not ep.done:
            item = policy.act(ep, alloc)
            res = env.step(ep, item, alloc)
            policy.observe(ep, item, res.desired, res.reward)
            trace.append(TraceRow(user, ep.t, item, res.group, res.desired, res.reward))
            ep, alloc = res.episode, res.alloc
    total = total.merge(alloc)
    return PassResult(seed, trace, total)


def metrics_of_pass(result: PassResult, weights: np.ndarray) -> SeedMetrics:
    c = cvr(result.trace)
    x = result.alloc.x
    pf = prop_fair(x, weights)
    return SeedMetrics(result.seed, c, pf, _ufg_or_inf(pf, c), x)


def evaluate(
    policy: Policy,
    env: OfflineEnv,
    users: Sequence[int],
    seeds: Sequence[int],
    signature: str = "",
    traces: dict[int, list[TraceRow]] | None = None,
) -> EvalReport:
    """Average metrics over one pass per seed; report UFG from the averaged CVR and PropFair."""
    if len(users) == 0:
        raise ValueError("no users to evaluate")
    if len(seeds) == 0:
        raise ValueError("need at least one seed")
    weights = env.fairness.weights
    per_seed = []
    for seed in seeds:
        result = run_pass(env, policy, users, np.random.default_rng(seed), seed)
        if traces is not None:
            traces[seed] = result.trace
        per_seed.append(metrics_of_pass(result, weights))
    mean_cvr = float(np.mean([s.cvr for s in per_seed]))
    mean_pf = float(np.mean([s.propfair for s in per_seed]))
    alloc = np.mean([s.allocation for s in per_seed], axis=0)
    return EvalReport(policy.name, mean_cvr, mean_pf, _ufg_or_inf(mean_pf, mean_cvr),
                      alloc, tuple(per_seed), signature)


@dataclass(frozen=True)
class SummaryRow:
    name: str
    n_seeds: int
    cvr_mean: float
    cvr_std: float
    propfair_mean: float
    propfair_std: float
    ufg_mean: float
    ufg_std: float


def compare(reports: Mapping[str, EvalReport] | Sequence[EvalReport]) -> list[SummaryRow]:
    """One row per report, sorted by name; ``ufg_mean`` derives from the mean columns."""
    items = sorted(reports.items()) if isinstance(reports, Mapping) else sorted(
        ((r.policy, r) for r in reports), key=lambda kv: kv[0])
    if len(items) < 2:
        raise ValueError("compare needs at least two runs")
    sigs = {r.signature for _, r in items}
    seeds = {r.seeds for _, r in items}
    if len(sigs) > 1:
        raise ComparabilityError(f"runs use different data settings: {sorted(sigs)}")
    if len(seeds) > 1:
        raise ComparabilityError(f"runs use different evaluation seeds: {sorted(seeds)}")
    rows = []
    for name, r in items:
        c = np.array([s.cvr for s in r.per_seed])
        pf = np.array([s.propfair for s in r.per_seed])
        u = np.array([s.ufg for s in r.per_seed])
        rows.append(SummaryRow(name, len(c), float(c.mean()), float(c.std()), float(pf.mean()),
                               float(pf.std()), _ufg_or_inf(float(pf.mean()), float(c.mean())),
                               float(u.std())))
    return rows


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def write_metrics(reports: Iterable[EvalReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "seed", "cvr", "propfair", "ufg"])
        for r in reports:
            for s in r.per_seed:
                writer.writerow([r.policy, s.seed, _fmt(s.cvr), _fmt(s.propfair), _fmt(s.ufg)])


def read_metrics(path: str | Path, signature: str = "") -> list[EvalReport]:
    """Rebuild per-policy reports from a ``metrics.csv`` file."""
    grouped: dict[str, list[SeedMetrics]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            grouped.setdefault(row["policy"], []).append(SeedMetrics(
                int(row["seed"]), float(row["cvr"]), float(row["propfair"]), float(row["ufg"]),
                np.zeros(0)))
    out = []
    for name, per_seed in grouped.items():
        c = float(np.mean([s.cvr for s in per_seed]))
        pf = float(np.mean([s.propfair for s in per_seed]))
        out.append(EvalReport(name, c, pf, _ufg_or_inf(pf, c), np.zeros(0), tuple(per_seed), signature))
    return out


def write_allocation(report: EvalReport, path: str | Path) -> None:
    """``pass,group,share`` rows for one policy; ``pass`` is the evaluation seed."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pass", "group", "share"])
        for s in report.per_seed:
            for g, share in enumerate(s.allocation):
                writer.writerow([s.seed, g, repr(float(share))])


def write_summary(rows: Sequence[SummaryRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "n_seeds", "cvr_mean", "cvr_std", "propfair_mean",
                         "propfair_std", "ufg_mean", "ufg_std"])
        for r in rows:
            writer.writerow([r.name, r.n_seeds] + [_fmt(v) for v in (
                r.cvr_mean, r.cvr_std, r.propfair_mean, r.propfair_std, r.ufg_mean, r.ufg_std)])
