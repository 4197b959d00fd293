"""Plain-text ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored, unknown keys are rejected and
values are coerced to the type of the default.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .models import ConfigError, ModelConfig
from .training import TrainConfig

DATA_ROOT_ENV = "SYMFORE_DATA_ROOT"


@dataclass
class RunConfig:
    # paths
    data_dir: str = ""
    out_dir: str = "runs/default"
    label_dir: str = ""
    # data
    frame_rate: float = 25.0
    excluded_joints: str = ""
    window_stride: int = 5
    val_fraction: float = 0.2
    # windows
    observed: int = 50
    total: int = 75
    warmup: int = 24
    # labeling
    k: int = 11
    pca_dim: int = 32
    cluster_seed: int = 0
    # architecture
    tcn_channels: int = 256
    tcn_kernel: int = 3
    tcn_blocks: int = 5
    hidden_forecast: int = 512
    hidden_label_enc: int = 256
    hidden_pose_enc: int = 512
    use_label_concat: bool = True
    use_e_L: bool = True
    use_e_P: bool = True
    decoder_feedback: bool = False
    weight_norm: bool = False
    model_seed: int = 0
    # optimisation
    batch_size: int = 16
    adam_lr: float = 5e-4
    sgd_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-4
    weight_label: float = 1.0
    weight_forecast: float = 1.0
    weight_pose: float = 1.0
    max_epochs: int = 100
    train_seed: int = 0
    loss_includes_warmup: bool = True
    grad_clip: float = 0.0
    # evaluation
    eval_seed: int = 0

    def resolved_data_dir(self) -> str:
        return self.data_dir or os.environ.get(DATA_ROOT_ENV, "")

    def excluded(self) -> list[str]:
        return [j.strip() for j in self.excluded_joints.split(",") if j.strip()]

    def model_config(self, n_labels: int, pose_dim: int) -> ModelConfig:
        return ModelConfig(
            n_labels=n_labels, pose_dim=pose_dim, observed=self.observed, total=self.total,
            warmup=self.warmup, tcn_channels=self.tcn_channels, tcn_kernel=self.tcn_kernel,
            tcn_blocks=self.tcn_blocks, hidden_forecast=self.hidden_forecast,
            hidden_label_enc=self.hidden_label_enc, hidden_pose_enc=self.hidden_pose_enc,
            use_label_concat=self.use_label_concat, use_e_L=self.use_e_L, use_e_P=self.use_e_P,
            decoder_feedback=self.decoder_feedback, weight_norm=self.weight_norm,
            seed=self.model_seed)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        kw = {k: v for k, v in asdict(self).items() if k in names}
        return TrainConfig(seed=self.train_seed, **kw)

    def lines(self) -> list[str]:
        return [f"{k} = {v}" for k, v in asdict(self).items()]


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def apply_settings(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``key=value`` strings (or ``(key, value)`` pairs) in order."""
    for item in pairs:
        key, value = item.split("=", 1) if isinstance(item, str) else item
        key = key.strip()
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, str(value)))
    return cfg


def load_run_config(path: str | os.PathLike | None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path:
        pairs = []
        for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            pairs.append(line)
        apply_settings(cfg, pairs)
    return apply_settings(cfg, overrides)
