"""Append-only newline-delimited metric records."""

from __future__ import annotations

import json
from pathlib import Path


class MetricsWriter:
    """One JSON object per line, flushed as written; also kept in memory."""

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        # fresh file per run so a rerun reproduces it byte for byte
        self._fh = open(self.path, "w") if self.path is not None else None

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def load_metrics(path: Path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
