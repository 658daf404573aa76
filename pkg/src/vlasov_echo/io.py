"""CSV / NDJSON writers and the run manifest."""

from __future__ import annotations

import json
import math
import os
import subprocess
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

FLOAT_FMT = "%.17g"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % float(x)
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_ndjson(path: str, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True, allow_nan=False) + "\n")


def read_ndjson(path: str) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def trace_rows(traces) -> Iterable[tuple]:
    """(t, k, re, im, abs) rows, mode-major."""
    for tr in traces:
        for t, v in zip(tr.times, tr.values):
            yield (float(t), int(tr.k), float(v.real), float(v.imag), float(abs(v)))


TRACE_HEADER = ("t", "k", "re_rho", "im_rho", "abs_rho")


def build_hash() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


@dataclass
class Manifest:
    subcommand: str
    parameters: Dict[str, Any]
    version: str
    files: List[str] = field(default_factory=list)
    figures: List[str] = field(default_factory=list)
    wall_time: float = 0.0
    status: int = 0
    notes: Dict[str, Any] = field(default_factory=dict)

    def add(self, name: str, figure: bool = False) -> str:
        (self.figures if figure else self.files).append(name)
        return name

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, "manifest.json")
        rec = {
            "subcommand": self.subcommand,
            "parameters": _jsonable(self.parameters),
            "version": self.version,
            "files": sorted(self.files),
            "figures": sorted(self.figures),
            "wall_time": self.wall_time,
            "status": self.status,
            "notes": _jsonable(self.notes),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rec, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path
