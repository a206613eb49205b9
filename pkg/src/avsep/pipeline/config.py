"""Training configuration and presets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..losses import LAMBDA_GRID, validate_lambda
from ..model import ModelConfig

PHASES = ("sep", "dereverb", "joint")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class TrainConfig:
    chunk_seconds: float = 4.0
    batch_size: int = 20
    lam: float = 0.08
    seed: int = 0
    lr: float = 2e-4
    sep_steps: int = 2000
    dereverb_steps: int = 2000
    joint_steps: int = 1000
    validate_every: int = 100
    lambda_grid: tuple = LAMBDA_GRID
    use_angle: bool = True
    # joint objective: "multi" (MSE + lam * non-negative SI-SNR) or "mse"
    joint_objective: str = "multi"
    visual_seed: int = 0
    monitor_batch: int = 4
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        try:
            validate_lambda(self.lam)
            for lam in self.lambda_grid:
                validate_lambda(lam)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.chunk_seconds <= 0.032:
            raise ConfigError("chunk_seconds must exceed one STFT window")
        if self.batch_size < 1 or self.monitor_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if min(self.sep_steps, self.dereverb_steps, self.joint_steps) < 0 or self.validate_every < 1:
            raise ConfigError("step counts must be >= 0 and validate_every >= 1")
        if self.joint_objective not in ("multi", "mse"):
            raise ConfigError(f"unknown joint objective {self.joint_objective!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")

    def steps(self, phase: str) -> int:
        return {"sep": self.sep_steps, "dereverb": self.dereverb_steps, "joint": self.joint_steps}[phase]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_grid"] = list(self.lambda_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        base = PRESETS[preset] if preset else cls()
        model = d.pop("model", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "lambda_grid" in d:
            d["lambda_grid"] = tuple(d["lambda_grid"])
        try:
            if model is not None:
                d["model"] = replace(base.model, **model)
            return replace(base, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


TOY = TrainConfig(
    chunk_seconds=2.0,
    batch_size=4,
    sep_steps=100,
    dereverb_steps=80,
    joint_steps=40,
    validate_every=20,
    model=ModelConfig(lstm_layers=2),
)

PRESETS = {"default": TrainConfig(), "toy": TOY}


def load_train_config(path=None, **overrides) -> TrainConfig:
    """Read a JSON config (optionally with ``"preset"``) and apply keyword overrides."""
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)
