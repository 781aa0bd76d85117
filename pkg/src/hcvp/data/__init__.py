"""Synthetic multi-domain dataset: generation, splits, batching, storage."""

from .splits import LabeledBatch, SplitPlan, batches, make_splits
from .store import export_dataset, load_dataset
from .synth import (
    SHAPES,
    SPURIOUS_COLORS,
    STYLES,
    ConfigError,
    DatasetConfig,
    DomainSpec,
    Sample,
    domain_specs,
    generate,
    spurious_index,
)

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "DomainSpec",
    "LabeledBatch",
    "Sample",
    "SHAPES",
    "SPURIOUS_COLORS",
    "STYLES",
    "SplitPlan",
    "batches",
    "domain_specs",
    "export_dataset",
    "generate",
    "load_dataset",
    "make_splits",
    "spurious_index",
]
