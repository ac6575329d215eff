"""Command-line entry point: ``fairrec <subcommand> [options]``.

Every RunConfig field is a flag (``--n-users 200``). Settings resolve in the
order defaults < ``--preset`` < ``--config`` file < explicit flags, and the
resolved config is written to ``manifest.cfg`` in the output directory so
``fairrec <subcommand> --config <dir>/manifest.cfg`` reruns the same job.
The output directory comes from ``--out``, then ``$FAIRREC_OUT``, then
``runs/<subcommand>``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from fairrec import training
from fairrec.config import PRESETS, RunConfig, dump_config, load_config, parse_overrides
from fairrec.dataset import save_catalog, save_split, write_interactions
from fairrec.env import save_trace
from fairrec.evaluation import ComparabilityError, compare, read_metrics, write_allocation, write_metrics, write_summary
from fairrec.mf_embed import load_table, save_table

OUT_ENV = "FAIRREC_OUT"
MANIFEST = "manifest.cfg"
GRAD_TOL = 1e-4

log = logging.getLogger("fairrec")


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="key = value file (e.g. a previous manifest.cfg)")
    parent.add_argument("--preset", choices=sorted(PRESETS), help="named group of overrides")
    parent.add_argument("--out", help=f"output directory (default ${OUT_ENV} or runs/<subcommand>)")
    group = parent.add_argument_group("run configuration")
    for f in fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", metavar="VALUE",
                           default=None, help=f"default {getattr(RunConfig(), f.name)!r}")
    return parent


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.preset:
        cfg = cfg.replace(**PRESETS[args.preset])
    if args.config:
        cfg = load_config(args.config, cfg)
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return cfg.replace(**parse_overrides(flags)) if flags else cfg


def output_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or Path("runs") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: RunConfig, extra: dict[str, str] | None = None) -> None:
    head = [f"# fairrec {command}"]
    head += [f"# {k}: {v}" for k, v in (extra or {}).items()]
    (out / MANIFEST).write_text("\n".join(head) + "\n" + dump_config(cfg), encoding="utf-8")


def _bundle(cfg: RunConfig, embeddings: str | None) -> training.DataBundle:
    if embeddings is None:
        return training.prepare(cfg)
    _, catalog, _ = training.prepare_data(cfg)
    return training.prepare(cfg, load_table(embeddings, catalog))


def cmd_prepare_data(args, cfg: RunConfig, out: Path) -> int:
    sub, catalog, split = training.prepare_data(cfg)
    write_interactions(sub, out / "interactions.csv")
    save_catalog(catalog, out / "catalog.csv")
    save_split(split, out / "split.csv")
    write_manifest(out, "prepare-data", cfg)
    print(f"{len(sub)} interactions, {len(sub.user_ids)} users, {catalog.n_items} items "
          f"in {catalog.n_groups} groups -> {out}")
    return 0


def cmd_pretrain(args, cfg: RunConfig, out: Path) -> int:
    bundle = training.prepare(cfg)
    save_table(bundle.table, out / "embeddings.csv")
    write_manifest(out, "pretrain", cfg)
    print(f"embeddings (d={cfg.d}) for {len(bundle.table.user_ids)} users -> {out / 'embeddings.csv'}")
    return 0


def _log_epoch(point: training.CurvePoint) -> None:
    log.info("epoch %d step %d reward %.3f critic_loss %.4g mean_q %.4g cvr %.4f",
             point.epoch, point.step, point.cum_reward, point.critic_loss, point.mean_q, point.cvr)


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    bundle = _bundle(cfg, args.embeddings)
    res = training.train(cfg, bundle, _log_epoch)
    training.save_checkpoint(res.agent, out / "checkpoint.bin")
    training.write_curve(res.curve, out / "curve.csv")
    training.write_train_log(res.curve, out / "train_log.csv")
    extra = {"embeddings": args.embeddings} if args.embeddings else None
    write_manifest(out, "train", cfg, extra)
    last = res.curve[-1]
    print(f"trained {cfg.epochs} epochs in {res.seconds:.1f}s, final reward {last.cum_reward:.3f} -> {out}")
    return 0


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> int:
    names = [n.strip() for n in args.policies.split(",") if n.strip()]
    for n in names:
        if n not in training.POLICY_NAMES:
            raise SystemExit(f"unknown policy {n!r}; choose from {', '.join(training.POLICY_NAMES)}")
    bundle = _bundle(cfg, args.embeddings)
    agent = None
    if "fairrec" in names:
        if args.checkpoint:
            agent = training.load_agent(cfg, bundle, args.checkpoint)
        else:
            log.info("no --checkpoint given; training the agent first")
            agent = training.train(cfg, bundle, _log_epoch).agent
    reports = []
    for name in names:
        label = training.variant_name(cfg) if name == "fairrec" else name
        policy = training.make_policy(label, bundle, cfg, agent)
        traces: dict = {}
        report = training.evaluate_policy(policy, bundle, cfg, args.split, traces)
        reports.append(report)
        sub = out / label
        sub.mkdir(exist_ok=True)
        write_allocation(report, sub / "allocation.csv")
        save_trace([row for seed in cfg.eval_seeds for row in traces[seed]], sub / "trace.csv")
        print(f"{label:>20}  cvr {report.cvr:.4f}  propfair {report.propfair:.4f}  ufg {report.ufg:.4f}")
    write_metrics(reports, out / "metrics.csv")
    extra = {"policies": ",".join(names), "split": args.split}
    if args.checkpoint:
        extra["checkpoint"] = args.checkpoint
    write_manifest(out, "evaluate", cfg, extra)
    return 0


def cmd_compare(args, cfg: RunConfig, out: Path) -> int:
    runs = []
    for run in args.runs:
        run = Path(run)
        run_cfg = load_config(run / MANIFEST) if (run / MANIFEST).exists() else cfg
        runs.append((run.name, read_metrics(run / "metrics.csv", run_cfg.data_signature())))
    if len({label for label, _ in runs}) < len(runs):
        runs = [(f"{k}:{label}", reps) for k, (label, reps) in enumerate(runs, start=1)]
    names = [r.policy for _, reps in runs for r in reps]
    clash = len(names) != len(set(names))
    keyed = {(f"{run}/{r.policy}" if clash else r.policy): r for run, reps in runs for r in reps}
    rows = compare(keyed)
    write_summary(rows, out / "summary.csv")
    write_manifest(out, "compare", cfg, {"runs": " ".join(str(r) for r in args.runs)})
    for r in rows:
        print(f"{r.name:>28}  cvr {r.cvr_mean:.4f}±{r.cvr_std:.4f}  propfair {r.propfair_mean:.4f}"
              f"±{r.propfair_std:.4f}  ufg {r.ufg_mean:.4f}±{r.ufg_std:.4f}")
    return 0


def cmd_grad_check(args, cfg: RunConfig, out: Path) -> int:
    from fairrec.gradcheck import run_trials

    worst = run_trials(args.trials, cfg.seed)
    with open(out / "gradcheck.csv", "w", encoding="utf-8") as fh:
        fh.write("path,max_rel_error\n")
        for path, err in worst.items():
            fh.write(f"{path},{err!r}\n")
    write_manifest(out, "grad-check", cfg, {"trials": str(args.trials)})
    ok = all(err < GRAD_TOL for err in worst.values())
    for path, err in worst.items():
        print(f"{path:>8}  {err:.3e}  {'ok' if err < GRAD_TOL else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairrec", description="fairness-aware interactive recommendation")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _config_parent()

    sub.add_parser("prepare-data", parents=[parent], help="sample users, assign groups, split users")
    sub.add_parser("pretrain", parents=[parent], help="fit MF and group embeddings")
    p = sub.add_parser("train", parents=[parent], help="train the actor-critic agent")
    p.add_argument("--embeddings", help="embeddings.csv from pretrain (skips MF training)")
    p = sub.add_parser("evaluate", parents=[parent], help="score policies on held-out users")
    p.add_argument("--policies", default=",".join(training.POLICY_NAMES))
    p.add_argument("--checkpoint", help="checkpoint.bin for the fairrec policy")
    p.add_argument("--embeddings", help="embeddings.csv from pretrain")
    p.add_argument("--split", choices=("test", "valid"), default="test")
    p = sub.add_parser("compare", parents=[parent], help="summarize evaluate runs side by side")
    p.add_argument("runs", nargs="+", help="evaluate output directories")
    p = sub.add_parser("grad-check", parents=[parent], help="finite-difference check of all gradients")
    p.add_argument("--trials", type=int, default=100, help="random toy instances (seeded by --seed)")
    return parser


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "grad-check": cmd_grad_check,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except (KeyError, ValueError, TypeError) as exc:
        print(f"fairrec: bad configuration: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args, cfg, output_dir(args))
    except ComparabilityError as exc:
        print(f"fairrec: runs are not comparable: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"fairrec: {exc}; fetch MovieLens with scripts/fetch_movielens.py or set --data-path",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
