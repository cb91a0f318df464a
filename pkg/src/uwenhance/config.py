"""Flat run configuration: JSON file + CLI overrides over built-in defaults.

Precedence is CLI flag > config file > default, field by field. Unknown
keys in a config file are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .formation import FormationModel
from .losses import LossWeights
from .nets import JNetConfig
from .trainer import TrainConfig


@dataclass
class RunConfig:
    size: int = 256
    seed: int = 0
    formation_model: str = "revised"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 500
    base_channels: int = 16
    num_blocks: int = 4
    state_size: int = 8
    mic_injection: tuple[int, ...] = (0,)
    se_reduction: int = 4
    tnet_channels: int = 16
    lambda_edge: float = 0.05
    enable_reconstruction: bool = True
    enable_uiqm: bool = True
    checkpoint_path: str | None = None

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            formation_model=FormationModel(self.formation_model),
            loss_weights=LossWeights(
                lambda_edge=self.lambda_edge,
                enable_reconstruction=self.enable_reconstruction,
                enable_uiqm=self.enable_uiqm,
            ),
            jnet=JNetConfig(
                base_channels=self.base_channels,
                num_blocks=self.num_blocks,
                state_size=self.state_size,
                mic_injection=tuple(self.mic_injection),
                se_reduction=self.se_reduction,
            ),
            tnet_channels=self.tnet_channels,
            size=self.size,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            steps=self.steps,
            seed=self.seed,
        )


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, then a JSON file, then overrides.

    `overrides` entries with value None are ignored (unset CLI flags).
    """
    values: dict = {}
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        unknown = set(raw) - set(_FIELD_TYPES)
        if unknown:
            raise ConfigError(f"config {path} has unknown keys: {sorted(unknown)}")
        values.update(raw)
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config field {key!r}")
            values[key] = val
    if "mic_injection" in values:
        values["mic_injection"] = tuple(values["mic_injection"])
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
