"""Flat key-value experiment configuration.

One key per line (``key = value``, ``#`` comments), diff-friendly by
design. Every key has a documented default below; unknown keys are
rejected. Environment variables with the ``SKETCHRET_`` prefix override
file values (e.g. ``SKETCHRET_CYCLES=3``), and CLI flags override both.
The effective post-default config is echoed into the run directory.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .synthetic import ShapeSpec
from .trainer import TrainConfig

ENV_PREFIX = "SKETCHRET_"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # data locations
    data_dir: str = "data/corpus"
    out_dir: str = "runs/exp"
    # synthetic corpus (gen-data)
    n_labeled: int = 200
    n_unlabeled: int = 2000
    n_test: int = 200
    shape_families: tuple = ("polygon", "ellipse", "composite")
    jitter: float = 0.01
    dropout: float = 0.1
    # evaluation extras
    consistency_pairs: int = 500
    # training (mirrors TrainConfig)
    k_r: int = 5
    k_g: int = 5
    cycles: int = 20
    margin: float = 0.3
    omega_kl: float = 1.0
    lambda_kd: float = 0.1
    lambda_r1: float = 1.0
    lambda_r2: float = 1.0
    lambda_g: float = 10.0
    lr: float = 1e-4
    lr_disc: float | None = None
    grad_clip: float = 1.0
    batch_gen: int = 64
    batch_ret: int = 16
    batch_rl: int = 16
    pretrain_gen_epochs: int = 60
    pretrain_ret_epochs: int = 30
    t_max: int = 100
    sample_max_len: int | None = None
    iw: bool = True
    tr: bool = True
    at: bool = True
    jt: bool = True
    use_unlabeled: bool = True
    baseline_enabled: bool = True
    pseudo_mode: str = "sample"
    rl_mode: str = "combined"
    rl_temperature: float = 1.0
    seed: int = 0
    image_size: int = 64
    raster_pad: int = 2
    enc_channels: tuple = (32, 64, 96, 128)
    n_z: int = 128
    hidden: int = 512
    mixtures: int = 20
    attn_dim: int = 128
    ret_channels: tuple = (32, 64, 96, 128)
    embed_dim: int = 64
    disc_channels: tuple = (32, 64, 96)
    eval_every: int = 5
    save_every: int = 5
    eval_fid: bool = False

    def train_config(self) -> TrainConfig:
        train_fields = {f.name for f in fields(TrainConfig)}
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.name in train_fields}
        return TrainConfig(**values)

    def shape_spec(self) -> ShapeSpec:
        return ShapeSpec(
            families=tuple(self.shape_families),
            jitter=self.jitter,
            dropout=self.dropout,
            image_size=self.image_size,
            photo_pad=self.raster_pad,
        )

    def to_flat(self) -> dict:
        flat = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif value is None:
                value = "none"
            elif isinstance(value, bool):
                value = "true" if value else "false"
            flat[f.name] = str(value)
        return flat


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    f = _FIELDS[name]
    raw = raw.strip()
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if name == "sample_max_len":
        return None if raw.lower() in ("none", "") else int(raw)
    if name == "lr_disc":
        return None if raw.lower() in ("none", "") else float(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {name!r}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if all(p.lstrip("+-").isdigit() for p in parts):
            return tuple(int(p) for p in parts)
        return tuple(parts)
    return raw


def parse_config_text(text: str) -> dict:
    """Parse key = value lines; returns raw overrides keyed by field name."""
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        overrides[key] = _parse_value(key, raw)
    return overrides


def load_config(path: str | None = None, cli_overrides: dict | None = None, env: dict | None = None) -> ExperimentConfig:
    """Defaults, then config file, then SKETCHRET_* env vars, then CLI flags."""
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    env = os.environ if env is None else env
    for key in _FIELDS:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = _parse_value(key, env[env_key])
    for key, value in (cli_overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return ExperimentConfig(**values)


def write_effective_config(cfg: ExperimentConfig, path: str):
    flat = cfg.to_flat()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# effective configuration (defaults + file + env + flags)\n")
        for key in sorted(flat):
            fh.write(f"{key} = {flat[key]}\n")
