"""Run configuration for training."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..data.synth import ConfigError, DatasetConfig
from ..models.vit import ViTConfig

METHODS = ("hcvp", "erm")
PRECISIONS = ("float32", "float64")


def _default_dataset() -> DatasetConfig:
    return DatasetConfig(per_cell=40)


@dataclass
class TrainConfig:
    method: str = "hcvp"
    steps: int = 2000
    batch_size: int = 32
    lr: float = 3e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_pcl: float = 0.1
    lambda_cci: float = 1.0
    use_pcl: bool = True
    use_cci: bool = True
    temperature: float = 0.1
    normalize_sim: bool = True
    seed: int = 0
    unseen_domain: int = 3
    eval_every: int = 100
    pretrain_steps: int = 300
    precision: str = "float32"
    dataset: DatasetConfig = field(default_factory=_default_dataset)
    # when set, samples come from this exported dataset directory instead
    # of being regenerated from `dataset`
    data_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.dataset, dict):  # when rebuilt from JSON
            self.dataset = DatasetConfig(**self.dataset)
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        self.dataset.validate()
        if not 0 <= self.unseen_domain < self.dataset.domains:
            raise ConfigError(
                f"unseen_domain {self.unseen_domain} outside [0, {self.dataset.domains})"
            )
        if self.method == "erm":
            # the baseline has no prompts, hence no prompt losses
            self.use_pcl = False
            self.use_cci = False

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def vit_config(self) -> ViTConfig:
        return ViTConfig(num_classes=self.dataset.classes)

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def derive_seed(*parts: int) -> int:
    """A stable 63-bit stream seed from integer parts."""
    state = np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0]
    return int(state % (1 << 63))
