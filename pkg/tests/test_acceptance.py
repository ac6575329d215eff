"""Acceptance suite. Each test prints one ``criterion N: PASS|FAIL`` line.

Criteria 3 to 6 share one set of desk-scale training runs (200 MovieLens users,
the ``desk`` preset), computed once per session. Run alone with

    pytest tests/test_acceptance.py -v -s
"""

import math
import statistics
import time

import numpy as np
import pytest

from fairrec.baselines import LinUCBModel, linucb_select, linucb_update
from fairrec.cli import main as cli_main
from fairrec.config import DESK, RunConfig
from fairrec.evaluation import EvalReport, ufg
from fairrec.fairness import AllocationState, optimal_allocation, prop_fair, record_conversion
from fairrec.gradcheck import run_trials
from fairrec import training

from conftest import ACCEPTANCE_LINES, MOVIELENS
from test_fairness import simplex_grid_argmax

SEEDS = (0, 1, 2)


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def decile_means(values) -> tuple[float, float]:
    k = max(1, math.ceil(0.1 * len(values)))
    return float(np.mean(values[:k])), float(np.mean(values[-k:]))


class DeskRuns:
    """Lazily trained and evaluated desk-scale runs keyed by (d, ablation, seed)."""

    def __init__(self):
        self.base = RunConfig(data_path=str(MOVIELENS), **DESK)
        self.bundles: dict[int, training.DataBundle] = {}
        self.runs: dict[tuple, tuple[training.TrainResult, EvalReport]] = {}
        self.baselines: dict[str, EvalReport] = {}

    def bundle(self, d: int) -> training.DataBundle:
        if d not in self.bundles:
            self.bundles[d] = training.prepare(self.base.replace(d=d))
        return self.bundles[d]

    def run(self, d: int, ablation: str, seed: int):
        key = (d, ablation, seed)
        if key not in self.runs:
            cfg = self.base.replace(d=d, ablation=ablation, seed=seed)
            res = training.train(cfg, self.bundle(d))
            policy = training.FairRecPolicy(res.agent, training.variant_name(cfg))
            self.runs[key] = (res, training.evaluate_policy(policy, self.bundle(d), cfg))
        return self.runs[key]

    def baseline(self, name: str, d: int = 50) -> EvalReport:
        if name not in self.baselines:
            cfg = self.base.replace(d=d)
            bundle = self.bundle(d)
            self.baselines[name] = training.evaluate_policy(training.make_policy(name, bundle, cfg), bundle, cfg)
        return self.baselines[name]

    def reports(self) -> list[EvalReport]:
        return [rep for _, rep in self.runs.values()] + list(self.baselines.values())


@pytest.fixture(scope="session")
def desk():
    if not MOVIELENS.exists():
        pytest.skip(f"MovieLens-100K not found at {MOVIELENS}; run scripts/fetch_movielens.py")
    return DeskRuns()


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    worst = run_trials(100, seed=0)
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.0f}s"
    verdict(1, max(worst.values()) < 1e-4 and elapsed < 60, detail)


def test_criterion_2_fairness_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    l = 10
    events = rng.integers(0, l, size=1000)
    state = AllocationState.empty(l)
    alloc_err = 0.0
    for k, g in enumerate(events, start=1):
        state = record_conversion(state, int(g))
        batch = np.bincount(events[:k], minlength=l) / k
        alloc_err = max(alloc_err, float(np.abs(state.x - batch).max()))

    # proportional-fairness objective sum(w log x) on the interior of a 0.001-step simplex grid
    opt_err = 0.0
    for w in rng.uniform(0.2, 3.0, size=(5, 3)):
        opt_err = max(opt_err, float(np.abs(simplex_grid_argmax(w) - optimal_allocation(w)).max()))

    uniform_err = abs(prop_fair(np.full(10, 0.1), np.ones(10)) - 10 * math.log(1.1))
    elapsed = time.perf_counter() - start
    ok = alloc_err <= 1e-12 and opt_err <= 1.5e-3 and uniform_err <= 1e-12 and elapsed < 60
    verdict(2, ok, f"alloc {alloc_err:.1e}, optimum vs grid {opt_err:.1e}, uniform {uniform_err:.1e}; "
                   f"{elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_3_metric_identity(desk):
    for d in (10, 50):
        for ablation in (("full", "reward-", "state-") if d == 50 else ("full",)):
            for seed in SEEDS:
                desk.run(d, ablation, seed)
    for name in ("random", "greedy-mf", "linucb"):
        desk.baseline(name)
    worst = 0.0
    for rep in desk.reports():
        worst = max(worst, abs(rep.ufg * (1 - rep.cvr) - rep.propfair))
        for s in rep.per_seed:
            worst = max(worst, abs(s.ufg * (1 - s.cvr) - s.propfair))
    kiva = ufg(0.8838, 0.6905)
    ok = worst <= 1e-12 and abs(kiva - 2.8555) <= 5e-4
    verdict(3, ok, f"{len(desk.reports())} reports, max identity gap {worst:.1e}; Kiva row -> {kiva:.4f}")


@pytest.mark.slow
def test_criterion_4_convergence_trend(desk):
    finals, problems, seconds = {}, [], 0.0
    for d in (10, 50):
        finals[d] = []
        for seed in SEEDS:
            res, _ = desk.run(d, "full", seed)
            seconds += res.seconds
            first, last = decile_means([p.cum_reward for p in res.curve])
            finals[d].append(last)
            if not last > first:
                problems.append(f"d={d} seed={seed} first {first:.0f} >= final {last:.0f}")
    mean10, mean50 = np.mean(finals[10]), np.mean(finals[50])
    if not mean50 >= mean10:
        problems.append(f"d=50 final {mean50:.0f} < d=10 final {mean10:.0f}")
    if seconds >= 1800:
        problems.append(f"training took {seconds:.0f}s")
    detail = (f"final-decile reward d=10 {[round(v) for v in finals[10]]}, d=50 {[round(v) for v in finals[50]]}; "
              f"{seconds / 60:.1f} min")
    verdict(4, not problems, detail + ("; " + "; ".join(problems) if problems else ""))


def median_ufg(desk, ablation: str) -> float:
    return statistics.median(desk.run(50, ablation, seed)[1].ufg for seed in SEEDS)


@pytest.mark.slow
def test_criterion_5_ablation_directionality(desk):
    full, no_reward, no_state = (median_ufg(desk, a) for a in ("full", "reward-", "state-"))
    verdict(5, full > no_reward and full > no_state,
            f"median UFG full {full:.4f}, reward- {no_reward:.4f}, state- {no_state:.4f}")


@pytest.mark.slow
def test_criterion_6_baseline_ordering(desk):
    fair = median_ufg(desk, "full")
    greedy, rand, lin = (desk.baseline(n) for n in ("greedy-mf", "random", "linucb"))

    def med(rep, attr):
        return statistics.median(getattr(s, attr) for s in rep.per_seed)

    ok = (fair > med(greedy, "ufg") and med(greedy, "cvr") > med(rand, "cvr")
          and med(lin, "cvr") > med(rand, "cvr"))
    verdict(6, ok, f"UFG fairrec {fair:.4f} vs greedy-mf {med(greedy, 'ufg'):.4f}; CVR greedy-mf "
                   f"{med(greedy, 'cvr'):.4f}, linucb {med(lin, 'cvr'):.4f}, random {med(rand, 'cvr'):.4f}")


def test_criterion_7_linucb():
    rng = np.random.default_rng(3)
    theta = rng.normal(size=5)
    model = LinUCBModel(5, alpha=0.5)
    for _ in range(2000):
        ctx = rng.normal(size=(10, 5))
        c = ctx[linucb_select(model, ctx)]
        linucb_update(model, c, float(theta @ c))
    err = float(np.linalg.norm(model.theta - theta))

    rng = np.random.default_rng(4)
    agree = 0
    for _ in range(100):
        dim = int(rng.integers(2, 7))
        model = LinUCBModel(dim, alpha=0.0)
        A, b = np.eye(dim), np.zeros(dim)
        for _ in range(int(rng.integers(0, 30))):
            c, r = rng.normal(size=dim), float(rng.normal())
            linucb_update(model, c, r)
            A += np.outer(c, c)
            b += r * c
        ctx = rng.normal(size=(int(rng.integers(1, 15)), dim))
        agree += linucb_select(model, ctx) == int(np.argmax(ctx @ np.linalg.solve(A, b)))
    verdict(7, err < 0.05 and agree == 100, f"|theta - theta*| = {err:.4f}; ridge oracle agreement {agree}/100")


def test_criterion_8_determinism(tmp_path):
    if not MOVIELENS.exists():
        pytest.skip("MovieLens u.data not fetched")
    smoke = ["--data-path", str(MOVIELENS), "--n-users", "20", "--d", "8", "--hidden", "16", "--att-hidden", "16",
             "--fs-hidden", "16", "--fs-out", "8", "--epochs", "3", "--batch-size", "16", "--mf-epochs", "5"]

    def pipeline(root, config=None):
        """Run every subcommand; with ``config`` set, each rereads its first-run manifest."""
        def go(cmd, name, *extra):
            args = ["--config", str(config / name / "manifest.cfg")] if config else smoke
            assert cli_main(["--log-level", "WARNING", cmd, *args, "--out", str(root / name), *extra]) == 0

        go("prepare-data", "prep")
        go("pretrain", "pre")
        go("train", "train")
        go("evaluate", "eval", "--checkpoint", str(root / "train" / "checkpoint.bin"))
        go("compare", "cmp", str(root / "eval"), str(root / "eval"))
        go("grad-check", "gc", "--trials", "2")

    pipeline(tmp_path / "a")
    pipeline(tmp_path / "b", config=tmp_path / "a")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    verdict(8, bool(files) and not differ, f"{len(files)} CSVs compared, {len(differ)} differ {differ or ''}")
