"""Run configuration and its plain-text ``key = value`` file form."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

EMBED_DIMS = (10, 30, 50, 100)
LEARNING_RATES = (0.0001, 0.001, 0.01)
ABLATIONS = ("full", "reward-", "state-")

# sized so one d=50 training run takes a few minutes on one core
DESK = {"n_users": 200, "hidden": 64, "batch_size": 64, "buffer_capacity": 20_000, "epochs": 15}
PRESETS = {"default": {}, "desk": DESK}


@dataclass(frozen=True)
class RunConfig:
    # data
    data_path: str = "data/ml-100k/u.data"
    n_users: int = 0  # 0 keeps every user
    threshold: int = 3
    l: int = 10
    p: float = 0.3
    data_seed: int = 0
    # matrix factorization
    d: int = 50
    mf_lr: float = 0.01
    mf_reg: float = 0.01
    mf_epochs: int = 30
    mf_decay: float = 0.9
    # agent
    seed: int = 0
    lr: float = 0.001
    n_history: int = 5
    gamma: float = 0.9
    lam: float = 2.0
    batch_size: int = 1024
    hidden: int = 1000
    att_hidden: int = 64
    fs_hidden: int = 32
    fs_out: int = 16
    buffer_capacity: int = 100_000
    sync_every: int = 100
    sigma_scale: float = 0.1
    sigma_decay: float = 0.995
    # training / environment
    epochs: int = 300
    update_every: int = 1
    ablation: str = "full"
    alloc_scope: str = "global"
    horizon: int = 20
    # evaluation
    alpha_ucb: float = 0.5
    eval_seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.alloc_scope not in ("global", "episode"):
            raise ValueError(f"alloc_scope must be 'global' or 'episode', got {self.alloc_scope!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.lam <= 1.0:
            raise ValueError("lam must exceed 1")
        for name in ("d", "n_history", "batch_size", "hidden", "epochs", "horizon", "sync_every",
                     "update_every", "mf_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.eval_seeds:
            raise ValueError("eval_seeds must not be empty")

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def data_signature(self) -> str:
        """Digest of every setting that shapes the evaluation data."""
        keys = ("data_path", "n_users", "threshold", "l", "p", "data_seed", "horizon",
                "n_history", "alloc_scope", "eval_seeds")
        text = ";".join(f"{k}={getattr(self, k)}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _coerce(field_type: Any, raw: str) -> Any:
    raw = raw.strip()
    if field_type in (int, "int"):
        return int(raw)
    if field_type in (float, "float"):
        return float(raw)
    if field_type in (str, "str"):
        return raw
    if "tuple" in str(field_type):
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    raise TypeError(f"unsupported field type {field_type}")


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_overrides(pairs: dict[str, str]) -> dict[str, Any]:
    out = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in FIELD_TYPES:
            raise KeyError(f"unknown config key {key!r}")
        out[key] = _coerce(FIELD_TYPES[key], raw)
    return out


def read_config_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    overrides = parse_overrides(read_config_text(Path(path).read_text(encoding="utf-8")))
    return (base or RunConfig()).replace(**overrides)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
