"""Dataset directory format.

A dataset directory holds, per split, one raw tensor file plus a plain-text
manifest, and a single descriptor:

    dataset.json     generation config, image geometry, split table
    <split>.bin      one record per sample: 3*32*32 little-endian float32,
                     row-major (channel, row, column)
    <split>.idx      one line per sample: "<byte_offset> <label> <domain>"

Images are stored float32 and widened back to float64 on load.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .synth import IMAGE_SIZE, ConfigError, DatasetConfig, Sample

FORMAT = "hcvp-dataset-v1"
_RECORD_FLOATS = 3 * IMAGE_SIZE * IMAGE_SIZE


def export_dataset(
    splits: dict[str, list[Sample]], out_dir: Path, config: DatasetConfig
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = {}
    for name, samples in splits.items():
        bin_path = out_dir / f"{name}.bin"
        idx_path = out_dir / f"{name}.idx"
        offset = 0
        with open(bin_path, "wb") as fb, open(idx_path, "w") as fi:
            for s in samples:
                raw = s.image.astype("<f4").tobytes()
                fb.write(raw)
                fi.write(f"{offset} {s.label} {s.domain}\n")
                offset += len(raw)
        table[name] = {"bin": bin_path.name, "index": idx_path.name, "count": len(samples)}
    descriptor = {
        "format": FORMAT,
        "image_size": IMAGE_SIZE,
        "config": asdict(config),
        "splits": table,
    }
    (out_dir / "dataset.json").write_text(json.dumps(descriptor, indent=2, sort_keys=True) + "\n")


def load_dataset(path: Path) -> tuple[dict[str, list[Sample]], DatasetConfig]:
    path = Path(path)
    descriptor_path = path / "dataset.json"
    if not descriptor_path.exists():
        raise FileNotFoundError(f"not a dataset directory (no dataset.json): {path}")
    descriptor = json.loads(descriptor_path.read_text())
    if descriptor.get("format") != FORMAT:
        raise ConfigError(f"unsupported dataset format {descriptor.get('format')!r} in {path}")
    config = DatasetConfig(**descriptor["config"])
    out: dict[str, list[Sample]] = {}
    for name, entry in descriptor["splits"].items():
        blob = (path / entry["bin"]).read_bytes()
        samples: list[Sample] = []
        for line_no, line in enumerate((path / entry["index"]).read_text().splitlines()):
            offset_s, label_s, domain_s = line.split()
            offset = int(offset_s)
            flat = np.frombuffer(blob, dtype="<f4", count=_RECORD_FLOATS, offset=offset)
            image = flat.astype(np.float64).reshape(3, IMAGE_SIZE, IMAGE_SIZE)
            samples.append(
                Sample(image=image, label=int(label_s), domain=int(domain_s), index=line_no)
            )
        out[name] = samples
    return out, config
