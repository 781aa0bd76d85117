"""Versioned binary checkpoint container.

Layout:

    bytes 0..7    magic b"HCVPCKPT"
    bytes 8..11   format version, little-endian uint32
    bytes 12..19  header length H, little-endian uint64
    bytes 20..    H bytes of UTF-8 JSON header
    ...           raw little-endian float64 payload

The header carries the run config, step, best validation accuracy and a
manifest of (name, shape, offset-in-floats) for every parameter followed
by the optimizer's first/second moments. Parameters are stored float64
regardless of the training precision; loading casts back, so a
float32 run round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..models import build_erm, build_extractor, build_hcvp
from .config import TrainConfig

MAGIC = b"HCVPCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    config: TrainConfig
    step: int
    best_val_accuracy: float
    params: dict[str, np.ndarray]
    opt_step_count: int
    opt_moments: dict[str, np.ndarray]  # keys "m.<name>" / "v.<name>"

    @property
    def method(self) -> str:
        return self.config.method


def save_checkpoint(
    path: Path,
    config: TrainConfig,
    step: int,
    best_val_accuracy: float,
    params: dict[str, np.ndarray],
    opt_step_count: int,
    opt_moments: dict[str, np.ndarray],
) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name, arr in list(params.items()) + list(opt_moments.items()):
        arr64 = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr64.tobytes())
        offset += arr64.size
    header = {
        "version": VERSION,
        "method": config.method,
        "step": step,
        "best_val_accuracy": best_val_accuracy,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "n_params": len(params),
        "opt_step_count": opt_step_count,
        "manifest": manifest,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint64(len(head)).tobytes())
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=8)[0])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    head_len = int(np.frombuffer(raw, dtype="<u8", count=1, offset=12)[0])
    header = json.loads(raw[20 : 20 + head_len].decode())
    base = 20 + head_len
    config = TrainConfig(**header["config"])
    params: dict[str, np.ndarray] = {}
    moments: dict[str, np.ndarray] = {}
    for i, entry in enumerate(header["manifest"]):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            raw, dtype="<f8", count=count, offset=base + entry["offset"] * 8
        ).reshape(shape)
        target = params if i < header["n_params"] else moments
        target[entry["name"]] = np.array(arr)  # writable copy
    return Checkpoint(
        config=config,
        step=int(header["step"]),
        best_val_accuracy=float(header["best_val_accuracy"]),
        params=params,
        opt_step_count=int(header["opt_step_count"]),
        opt_moments=moments,
    )


def build_model_for(config: TrainConfig):
    """Fresh (randomly initialized) model matching a run config."""
    if config.method == "hcvp":
        extractor = build_extractor(config.seed, dtype=config.dtype)
        model = build_hcvp(config.vit_config(), extractor, config.seed, dtype=config.dtype)
        extractor.freeze()
        return model
    return build_erm(config.vit_config(), config.seed, dtype=config.dtype)


def restore_model(ckpt: Checkpoint):
    """Rebuild the model and overwrite every parameter from the checkpoint."""
    model = build_model_for(ckpt.config)
    dtype = ckpt.config.dtype
    tensors = model.param_dict()
    missing = set(tensors) - set(ckpt.params)
    extra = set(ckpt.params) - set(tensors)
    if missing or extra:
        raise ValueError(f"checkpoint/model mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, arr in ckpt.params.items():
        tensors[name].data = arr.astype(dtype)
    return model
