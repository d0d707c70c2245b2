"""Flat run configuration with strict JSON loading.

Unknown keys are rejected rather than ignored so a typo in a sweep file
fails loudly, and the parsed config is echoed verbatim into summaries.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

_CHOICES = {
    "task": ("link", "node"),
    "setting": ("transductive", "inductive"),
    "nss": ("random", "historical", "inductive"),
    "model": ("full", "edgebank"),
    "restart_sense": ("literal", "inverted"),
    "memory_update": ("pre_batch",),
    "neighbor_strategy": ("recent", "uniform"),
}

_POSITIVE = ("batch_size", "epochs", "d_m", "k", "mae_heads", "mae_layers",
             "d_ce", "r", "walk_heads", "w", "M", "d_v", "d_w", "d_phi1",
             "d_phi2", "workers", "synthetic_events")


@dataclass
class RunConfig:
    dataset: str = "synthetic-periodic"
    dataset_path: str = ""
    out_dir: str = "runs/out"
    task: str = "link"
    setting: str = "transductive"
    nss: str = "random"
    seed: int = 0
    model: str = "full"
    batch_size: int = 200
    lr: float = 1e-4
    epochs: int = 100
    patience: int = 5
    dropout: float = 0.1
    d_m: int = 172
    k: int = 10
    mae_heads: int = 2
    mae_layers: int = 1
    d_ce: int = 10
    r: int = 32
    walk_heads: int = 4
    w: int = 4
    alpha: float = 1e-6
    M: int = 10
    d_v: int = 100
    d_w: int = 172
    d_phi1: int = 100
    d_phi2: int = 20
    no_mae: bool = False
    no_nce: bool = False
    no_walks: bool = False
    no_restart: bool = False
    restart_mode: str = "learnable"
    restart_sense: str = "literal"
    memory_update: str = "pre_batch"
    neighbor_strategy: str = "recent"
    inductive_fraction: float = 0.1
    workers: int = 1
    figures: bool = False
    walk_dump: str = ""
    synthetic_events: int = 10000

    def __post_init__(self):
        for field, allowed in _CHOICES.items():
            if getattr(self, field) not in allowed:
                raise ValueError(
                    f"{field} must be one of {allowed}, "
                    f"got {getattr(self, field)!r}")
        for field in _POSITIVE:
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.inductive_fraction < 1.0:
            raise ValueError("inductive_fraction must lie in [0, 1)")
        if self.d_m % self.mae_heads != 0:
            raise ValueError("d_m must divide evenly into mae_heads")
        if self.d_w % self.walk_heads != 0:
            raise ValueError("d_w must divide evenly into walk_heads")
        mode = self.restart_mode
        if mode not in ("learnable", "degree"):
            if not mode.startswith("fixed:"):
                raise ValueError(f"bad restart_mode: {mode!r}")
            try:
                v = float(mode.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad restart_mode value: {mode!r}")
            if not 0.0 <= v <= 1.0:
                raise ValueError("fixed restart value must lie in [0, 1]")

    def fixed_restart_value(self) -> float | None:
        if self.restart_mode.startswith("fixed:"):
            return float(self.restart_mode.split(":", 1)[1])
        return None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: str) -> RunConfig:
    with open(path) as f:
        raw = json.load(f)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**raw)
