"""Training: configuration, loop, checkpoints, metrics, experiment protocols."""

from .checkpoint import Checkpoint, build_model_for, load_checkpoint, restore_model, save_checkpoint
from .config import TrainConfig, derive_seed
from .experiments import ABLATION_VARIANTS, CCI_GRID, PCL_GRID, RunSpec, ablate, execute_run, run_many, sweep
from .metrics import MetricsWriter, load_metrics
from .trainer import (
    TrainingAbortedError,
    TrainResult,
    evaluate_split,
    pretrain_extractor,
    resolve_samples,
    resume_step_losses,
    train,
)

__all__ = [
    "ABLATION_VARIANTS",
    "CCI_GRID",
    "Checkpoint",
    "MetricsWriter",
    "PCL_GRID",
    "RunSpec",
    "TrainConfig",
    "TrainResult",
    "TrainingAbortedError",
    "ablate",
    "build_model_for",
    "derive_seed",
    "evaluate_split",
    "execute_run",
    "load_checkpoint",
    "load_metrics",
    "pretrain_extractor",
    "resolve_samples",
    "restore_model",
    "resume_step_losses",
    "run_many",
    "save_checkpoint",
    "sweep",
    "train",
]
