"""Run configuration: flat JSON keys, CLI-overridable."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

# accepted spellings for keys whose canonical field name differs
KEY_ALIASES = {"K": "k", "L": "max_len", "d^n": "d_n"}


@dataclass
class Config:
    # model widths (desk-scale defaults; the reference setup used 512/1024)
    d: int = 64
    d_n: int = 64
    d_lstm: int = 64
    d_sinu: int = 128
    k: int = 4
    max_len: int = 24
    heads: int = 8
    roi_grid: int = 3
    conv_channels: list = field(default_factory=lambda: [8, 16, 32])
    # optimization
    dropout: float = 0.1
    lr: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every_epochs: int = 50
    epochs: int = 100
    seed: int = 0
    early_stop_train_f1: float | None = None
    early_stop_val_f1: float | None = None
    # ablation switches
    no_text: bool = False
    no_visual: bool = False
    no_spatial: bool = False
    no_graph: bool = False
    strict_transitions: bool = False
    # paths
    data_dir: str = "data"
    out_dir: str = "runs/out"

    def epoch_lr(self, epoch: int) -> float:
        """Learning rate for a 1-indexed epoch under the step-decay schedule."""
        steps = epoch // self.lr_decay_every_epochs if self.lr_decay_every_epochs else 0
        return self.lr * self.lr_decay_factor**steps

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")


def config_from_dict(raw: dict) -> Config:
    known = {f.name for f in fields(Config)}
    kwargs = {}
    for key, value in raw.items():
        name = KEY_ALIASES.get(key, key)
        if name not in known:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[name] = value
    return Config(**kwargs)


def load_config(path) -> Config:
    return config_from_dict(json.loads(Path(path).read_text()))
