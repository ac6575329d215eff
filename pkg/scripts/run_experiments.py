"""Desk-scale comparison of FairRec, its two ablations, and the baselines.

Trains every variant for each seed, evaluates on the test users, and writes

    <out>/metrics.csv              policy,seed,cvr,propfair,ufg (seed = training seed)
    <out>/summary.csv              mean and std over training seeds per policy
    <out>/curves/<variant>_d<d>_s<seed>.csv
    <out>/manifest.cfg

Example (about an hour on one core):

    python3 scripts/run_experiments.py --out runs/desk --seeds 0,1,2 --dims 10,50
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np

from fairrec import training
from fairrec.config import DESK, RunConfig, dump_config, load_config
from fairrec.evaluation import EvalReport, SeedMetrics, compare, write_metrics, write_summary

log = logging.getLogger("experiments")


def collapse(name: str, reports: dict[int, EvalReport], signature: str) -> EvalReport:
    """One report whose per-seed rows are training seeds (each averaged over evaluation seeds)."""
    per = tuple(SeedMetrics(seed, r.cvr, r.propfair, r.ufg, r.allocation) for seed, r in sorted(reports.items()))
    c = float(np.mean([s.cvr for s in per]))
    pf = float(np.mean([s.propfair for s in per]))
    return EvalReport(name, c, pf, pf / (1 - c), np.mean([s.allocation for s in per], axis=0), per, signature)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("runs/desk"))
    parser.add_argument("--config", help="key = value overrides applied on top of the desk preset")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--dims", default="50", help="embedding sizes; ablations and baselines use the largest")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = RunConfig(**DESK)
    if args.config:
        base = load_config(args.config, base)
    seeds = [int(s) for s in args.seeds.split(",")]
    dims = sorted(int(d) for d in args.dims.split(","))
    (args.out / "curves").mkdir(parents=True, exist_ok=True)

    grouped: dict[str, dict[int, EvalReport]] = {}
    for d in dims:
        bundle = training.prepare(base.replace(d=d))
        ablations = ("full", "reward-", "state-") if d == dims[-1] else ("full",)
        for ablation in ablations:
            for seed in seeds:
                cfg = base.replace(d=d, ablation=ablation, seed=seed)
                res = training.train(cfg, bundle)
                name = training.variant_name(cfg) + (f"[d={d}]" if len(dims) > 1 else "")
                report = training.evaluate_policy(training.FairRecPolicy(res.agent, name), bundle, cfg)
                grouped.setdefault(name, {})[seed] = report
                training.write_curve(res.curve, args.out / "curves" / f"{ablation}_d{d}_s{seed}.csv")
                log.info("%s seed %d: cvr %.4f propfair %.4f ufg %.4f (%.0fs)", name, seed,
                         report.cvr, report.propfair, report.ufg, res.seconds)
        if d == dims[-1]:
            cfg = base.replace(d=d)
            for name in ("random", "greedy-mf", "linucb"):
                # nothing to train, so one evaluation fills every seed's row
                report = training.evaluate_policy(training.make_policy(name, bundle, cfg), bundle, cfg)
                grouped[name] = dict.fromkeys(seeds, report)

    reports = [collapse(name, reps, base.data_signature()) for name, reps in sorted(grouped.items())]
    write_metrics(reports, args.out / "metrics.csv")
    rows = compare(reports)
    write_summary(rows, args.out / "summary.csv")
    (args.out / "manifest.cfg").write_text(
        f"# run_experiments seeds={args.seeds} dims={args.dims}\n" + dump_config(base), encoding="utf-8")
    for r in rows:
        print(f"{r.name:>24}  cvr {r.cvr_mean:.4f}  propfair {r.propfair_mean:.4f}  ufg {r.ufg_mean:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
