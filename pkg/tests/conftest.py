import os
from pathlib import Path

import numpy as np
import pytest

from fairrec.dataset import InteractionLog

ROOT = Path(__file__).resolve().parents[1]
MOVIELENS = Path(os.environ.get("FAIRREC_MOVIELENS", ROOT / "data" / "ml-100k" / "u.data"))


@pytest.fixture(scope="session")
def movielens_path() -> Path:
    if not MOVIELENS.exists():
        pytest.skip(f"MovieLens-100K not found at {MOVIELENS}; run scripts/fetch_movielens.py")
    return MOVIELENS


def make_log(rows, threshold=3) -> InteractionLog:
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    return InteractionLog(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], threshold)


def synthetic_log(n_users=30, n_items=40, per_user=15, seed=0) -> InteractionLog:
    """Random ratings with distinct (user, item) pairs and increasing timestamps."""
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(1, n_users + 1):
        items = rng.choice(np.arange(1, n_items + 1), size=per_user, replace=False)
        for k, i in enumerate(items):
            rows.append((u, int(i), int(rng.integers(1, 6)), 1000 * u + k))
    return make_log(rows)


@pytest.fixture
def small_log() -> InteractionLog:
    return synthetic_log()


# verdict lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
