import csv
from pathlib import Path

import pytest

from fairrec.cli import MANIFEST, build_parser, main, resolve_config
from fairrec.config import DESK, RunConfig, load_config

from conftest import MOVIELENS

pytestmark = pytest.mark.skipif(not MOVIELENS.exists(), reason="MovieLens u.data not fetched")

SMOKE = ["--data-path", str(MOVIELENS), "--n-users", "20", "--d", "8", "--hidden", "16",
         "--att-hidden", "16", "--fs-hidden", "16", "--fs-out", "8", "--epochs", "5",
         "--batch-size", "16", "--mf-epochs", "5"]


def run(*argv) -> int:
    return main(["--log-level", "WARNING", *argv])


def cfg_of(*argv) -> RunConfig:
    return resolve_config(build_parser().parse_args(list(argv)))


def test_flag_precedence(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("d = 30\nlr = 0.01  # comment\nepochs = 7\n")
    cfg = cfg_of("train", "--preset", "desk", "--config", str(path), "--epochs", "9")
    assert (cfg.d, cfg.lr, cfg.epochs, cfg.hidden) == (30, 0.01, 9, DESK["hidden"])
    assert cfg_of("train").epochs == RunConfig().epochs
    assert cfg_of("train", "--eval-seeds", "4,5").eval_seeds == (4, 5)


def test_bad_config_is_reported(capsys):
    assert main(["train", "--ablation", "sideways"]) == 2
    assert "bad configuration" in capsys.readouterr().err


def test_missing_dataset_is_reported(tmp_path, capsys):
    assert main(["prepare-data", "--data-path", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert "fetch_movielens" in capsys.readouterr().err


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FAIRREC_OUT", str(tmp_path / "env_out"))
    assert run("prepare-data", *SMOKE) == 0
    assert (tmp_path / "env_out" / "catalog.csv").exists()
    assert (tmp_path / "env_out" / MANIFEST).exists()


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    assert run("pretrain", *SMOKE, "--out", str(root / "pre")) == 0
    emb = str(root / "pre" / "embeddings.csv")
    assert run("train", *SMOKE, "--embeddings", emb, "--out", str(root / "train")) == 0
    assert run("evaluate", *SMOKE, "--embeddings", emb, "--checkpoint", str(root / "train" / "checkpoint.bin"),
               "--out", str(root / "eval")) == 0
    return root


def test_smoke_writes_all_artifacts(smoke_runs):
    expected = ["pre/embeddings.csv", "train/checkpoint.bin", "train/curve.csv", "train/train_log.csv",
                "eval/metrics.csv"]
    expected += [f"eval/{p}/{f}" for p in ("random", "greedy-mf", "linucb", "fairrec")
                 for f in ("allocation.csv", "trace.csv")]
    for rel in expected + [f"{d}/{MANIFEST}" for d in ("pre", "train", "eval")]:
        assert (smoke_runs / rel).stat().st_size > 0, rel
    curve = (smoke_runs / "train" / "curve.csv").read_text().splitlines()
    assert curve[0] == "epoch,cum_reward,critic_loss" and len(curve) == 6
    assert (smoke_runs / "train" / "train_log.csv").read_text().startswith("epoch,step,reward,critic_loss,mean_q")
    with open(smoke_runs / "eval" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * 3
    for r in rows:
        assert abs(float(r["ufg"]) * (1 - float(r["cvr"])) - float(r["propfair"])) < 1e-12


def test_manifest_reruns_bitwise(smoke_runs, tmp_path):
    manifest = smoke_runs / "train" / MANIFEST
    assert load_config(manifest).epochs == 5
    emb = str(smoke_runs / "pre" / "embeddings.csv")
    assert run("train", "--config", str(manifest), "--embeddings", emb, "--out", str(tmp_path / "again")) == 0
    for name in ("curve.csv", "train_log.csv", "checkpoint.bin", MANIFEST):
        assert (tmp_path / "again" / name).read_bytes() == (smoke_runs / "train" / name).read_bytes(), name


def test_compare_of_two_identical_runs(smoke_runs, tmp_path):
    assert run("compare", str(smoke_runs / "eval"), str(smoke_runs / "eval"), "--out", str(tmp_path)) == 0
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0].startswith("name,n_seeds")
    body = [line.split(",", 1) for line in lines[1:]]
    assert len(body) == 8
    by_policy = {}
    for name, rest in body:
        by_policy.setdefault(name.split("/", 1)[1], set()).add(rest)
    assert all(len(v) == 1 for v in by_policy.values())


def test_compare_rejects_other_data(smoke_runs, tmp_path, capsys):
    assert run("evaluate", *SMOKE, "--policies", "random", "--data-seed", "1", "--out", str(tmp_path / "other")) == 0
    assert run("compare", str(smoke_runs / "eval"), str(tmp_path / "other"), "--out", str(tmp_path / "cmp")) == 3
    assert "not comparable" in capsys.readouterr().err


def test_reward_ablation_ignores_lambda(tmp_path):
    logs = []
    for lam in ("2.0", "5.0"):
        out = tmp_path / f"lam{lam}"
        assert run("train", *SMOKE, "--ablation", "reward-", "--lam", lam, "--epochs", "2", "--out", str(out)) == 0
        logs.append((out / "train_log.csv").read_bytes())
    assert logs[0] == logs[1]
    out = tmp_path / "full"
    assert run("train", *SMOKE, "--lam", "5.0", "--epochs", "2", "--out", str(out)) == 0
    assert (out / "train_log.csv").read_bytes() != logs[0]


def test_grad_check_command(tmp_path):
    assert main(["grad-check", "--trials", "3", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "gradcheck.csv").read_text().splitlines()
    assert rows[0] == "path,max_rel_error" and len(rows) == 5
    assert Path(tmp_path / MANIFEST).exists()
