"""Flat key=value run configuration with file loading and flag overrides."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError


@dataclass
class RunConfig:
    # paths
    data_dir: str = "data"
    features_dir: str = "data"
    checkpoint: str = "checkpoints/model.ckpt"
    reports_dir: str = "reports"
    # protocol constants
    seed: int = 7
    k_core: int = 5
    n_negatives: int = 100
    eval_ks: str = "5,10"
    # representation / objective
    mode: str = "image"
    types: str = "Img"
    fallback: bool = False
    # training
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 5
    patience: int = 3
    train_budget: int = 1024
    backbone_trainable: bool = True
    two_stage: bool = False
    # model dims
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 64
    max_context: int = 4096
    d_s: int = 64
    vocab_max: int = 8192
    # synthetic generator
    n_users: int = 400
    n_items: int = 150
    latent_dim: int = 8
    noise: float = 0.1
    mean_seq_len: int = 12
    desc_len: int = 160
    attr_len: int = 10
    drop_image_fraction: float = 0.0
    # benchmarks
    budgets: str = "4096,2048,1024,512,256"
    bench_bounds: str = "6,9,12,15"
    bench_group_size: int = 100
    popularity_groups: int = 5

    def ks(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.eval_ks.split(",") if x)

    def active_types(self) -> tuple[str, ...]:
        return tuple(t.strip() for t in self.types.split(",") if t.strip())

    def budget_list(self) -> list[int]:
        return [int(x) for x in self.budgets.split(",") if x]

    def bounds(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.bench_bounds.split(",") if x)

    def config_hash(self) -> str:
        # storage locations do not affect computed data, so the hash skips
        # them; two runs into different directories trace to the same hash
        skip = {"data_dir", "features_dir", "checkpoint", "reports_dir"}
        canon = "\n".join(f"{k}={v}" for k, v in sorted(asdict(self).items())
                          if k not in skip)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, text: str):
    ftype = _FIELD_TYPES[name]
    if ftype in ("bool", bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {name}: {text!r} is not a boolean")
    if ftype in ("int", int):
        return int(text)
    if ftype in ("float", float):
        return float(text)
    return text


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Parse `key=value` lines ('#' comments allowed); unknown keys are errors."""
    cfg = base or RunConfig()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                setattr(cfg, key, _coerce(key, value.strip()))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return cfg


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    for key, value in pairs:
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, str(value)))
    return cfg
