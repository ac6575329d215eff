import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairrec.baselines import Policy, RandomPolicy
from fairrec.dataset import ItemCatalog
from fairrec.env import EnvConfig, OfflineEnv, TraceRow
from fairrec.evaluation import (
    ComparabilityError,
    EvalReport,
    UndefinedMetricError,
    compare,
    cvr,
    evaluate,
    read_metrics,
    run_pass,
    ufg,
    write_allocation,
    write_metrics,
    write_summary,
)
from fairrec.fairness import FairnessConfig

from conftest import make_log


def rows_of(flags):
    return [TraceRow(1, k, k + 1, 0, bool(f), 0.0) for k, f in enumerate(flags)]


def test_cvr_examples():
    assert cvr(rows_of([1, 1, 1])) == 1.0
    assert cvr(rows_of([1, 0, 1, 1])) == 0.75
    assert cvr([True, False]) == 0.5
    with pytest.raises(ValueError):
        cvr([])


@given(st.lists(st.booleans(), min_size=1, max_size=200))
def test_cvr_matches_recount(flags):
    assert cvr(rows_of(flags)) == sum(flags) / len(flags)


def test_ufg_examples():
    assert ufg(0.8838, 0.6905) == pytest.approx(2.8555, abs=5e-4)
    # tolerance covers rounding of the four-digit inputs
    assert ufg(0.8666, 0.8702) == pytest.approx(6.676, abs=0.01)
    assert ufg(0.0, 0.4) == 0.0
    with pytest.raises(UndefinedMetricError):
        ufg(0.5, 1.0)


def symmetric_env(n_users=40, per_user=20, seed=0, scope="global"):
    """Two groups of 20 items each; every user rates items from both groups alike."""
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(1, n_users + 1):
        items = rng.choice(np.arange(1, 41), size=per_user, replace=False)
        for k, a in enumerate(items):
            rows.append((u, int(a), int(rng.choice([2, 5])), k))
    ids = np.arange(1, 41)
    cat = ItemCatalog(ids, (ids > 20).astype(np.int64), np.ones(2))
    return OfflineEnv(make_log(rows), cat, FairnessConfig(np.ones(2)),
                      EnvConfig(horizon=20, n_history=3, alloc_scope=scope))


def test_random_policy_balances_symmetric_groups():
    env = symmetric_env(n_users=200)
    rep = evaluate(RandomPolicy(), env, env.users, seeds=[0, 1, 2])
    np.testing.assert_allclose(rep.allocation, [0.5, 0.5], atol=0.05)


class GroupZeroPolicy(Policy):
    name = "group0"

    def act(self, episode, alloc):
        return int(episode.candidates[0])  # ids 1..20 are group 0 and sort first


def test_group_zero_policy_scores_ln2():
    # every user rates all 40 items, so group-0 candidates outlast a 5-step horizon
    rng = np.random.default_rng(1)
    rows = [(u, a, int(rng.choice([2, 5])), a) for u in range(1, 6) for a in range(1, 41)]
    ids = np.arange(1, 41)
    cat = ItemCatalog(ids, (ids > 20).astype(np.int64), np.ones(2))
    env = OfflineEnv(make_log(rows), cat, FairnessConfig(np.ones(2)), EnvConfig(horizon=5, n_history=3))
    rep = evaluate(GroupZeroPolicy(), env, env.users, seeds=[0])
    np.testing.assert_array_equal(rep.allocation, [1.0, 0.0])
    assert rep.propfair == pytest.approx(math.log(2), abs=1e-12)


def test_reports_are_deterministic_and_satisfy_identity():
    env = symmetric_env()
    a = evaluate(RandomPolicy(), env, env.users, seeds=[3, 4])
    b = evaluate(RandomPolicy(), env, env.users, seeds=[3, 4])
    assert (a.cvr, a.propfair, a.ufg) == (b.cvr, b.propfair, b.ufg)
    assert a.seeds == (3, 4)
    assert abs(a.ufg * (1 - a.cvr) - a.propfair) < 1e-12
    for s in a.per_seed:
        assert abs(s.ufg * (1 - s.cvr) - s.propfair) < 1e-12
        assert 0 <= s.propfair <= 2 * math.log(1.5) + 1e-12


def test_per_episode_scope_sums_episode_allocations():
    env = symmetric_env(scope="episode")
    res = run_pass(env, RandomPolicy(), env.users, np.random.default_rng(0))
    hits = [r.group for r in res.trace if r.desired]
    assert res.alloc.counts == (hits.count(0), hits.count(1))


def test_evaluate_requires_users_and_seeds():
    env = symmetric_env()
    with pytest.raises(ValueError):
        evaluate(RandomPolicy(), env, [], seeds=[0])
    with pytest.raises(ValueError):
        evaluate(RandomPolicy(), env, env.users, seeds=[])


def fake_report(name, cvrs, pfs, sig="s", seeds=None):
    from fairrec.evaluation import SeedMetrics

    seeds = seeds or list(range(len(cvrs)))
    per = tuple(SeedMetrics(s, c, p, p / (1 - c), np.array([0.5, 0.5])) for s, c, p in zip(seeds, cvrs, pfs))
    c, p = float(np.mean(cvrs)), float(np.mean(pfs))
    return EvalReport(name, c, p, p / (1 - c), np.array([0.5, 0.5]), per, sig)


def test_compare_rows_sorted_and_self_consistent():
    rows = compare([fake_report("zeta", [0.5, 0.6], [0.9, 0.8]), fake_report("alpha", [0.4, 0.2], [0.7, 0.9])])
    assert [r.name for r in rows] == ["alpha", "zeta"]
    for r in rows:
        assert r.ufg_mean == r.propfair_mean / (1 - r.cvr_mean)
    assert rows[1].cvr_std == pytest.approx(0.05)


def test_compare_identical_runs_identical_rows():
    a = fake_report("x", [0.5, 0.6], [0.9, 0.8])
    rows = compare({"run1": a, "run2": a})
    assert rows[0].__dict__ | {"name": ""} == rows[1].__dict__ | {"name": ""}


def test_compare_rejects_mismatched_runs():
    with pytest.raises(ComparabilityError):
        compare([fake_report("a", [0.5], [0.9], sig="s1"), fake_report("b", [0.5], [0.9], sig="s2")])
    with pytest.raises(ComparabilityError):
        compare([fake_report("a", [0.5], [0.9], seeds=[0]), fake_report("b", [0.5], [0.9], seeds=[1])])
    with pytest.raises(ValueError):
        compare([fake_report("a", [0.5], [0.9])])


def test_metric_csvs(tmp_path):
    reps = [fake_report("fairrec", [0.5, 0.6], [0.9, 0.8]), fake_report("random", [0.4, 0.2], [0.7, 0.9])]
    write_metrics(reps, tmp_path / "metrics.csv")
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "policy,seed,cvr,propfair,ufg"
    assert len(lines) == 5
    back = {r.policy: r for r in read_metrics(tmp_path / "metrics.csv", "s")}
    assert back["fairrec"].cvr == reps[0].cvr and back["random"].propfair == reps[1].propfair
    write_allocation(reps[0], tmp_path / "allocation.csv")
    assert (tmp_path / "allocation.csv").read_text().splitlines()[:2] == ["pass,group,share", "0,0,0.5"]
    write_summary(compare(reps), tmp_path / "summary.csv")
    assert (tmp_path / "summary.csv").read_text().startswith("name,n_seeds,cvr_mean")


def test_infinite_ufg_sentinel(tmp_path):
    from fairrec.evaluation import SeedMetrics

    per = (SeedMetrics(0, 1.0, 0.7, math.inf, np.array([1.0, 0.0])),)
    rep = EvalReport("perfect", 1.0, 0.7, math.inf, np.array([1.0, 0.0]), per)
    write_metrics([rep], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "perfect,0,1.0,0.7,inf"
