"""Append-only results file: one metric per row, JSON lines."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

from .dataio import canonical_json


class ResultsError(ValueError):
    pass


@dataclass
class ResultsRow:
    run_id: str
    phase: str
    metric: str
    value: float
    slack: float | None = None
    inputs_digest: str = ""

    def to_json(self) -> str:
        return canonical_json(asdict(self))


COLUMNS = ("run_id", "phase", "metric", "value", "slack", "inputs_digest")


def append_rows(path: str, rows) -> None:
    with open(path, "a") as f:
        for row in rows:
            f.write(row.to_json() + "\n")


def read_rows(path: str) -> list[ResultsRow]:
    if not os.path.exists(path):
        raise ResultsError(f"results file not found: {path}")
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            out.append(ResultsRow(**json.loads(line)))
    return out
