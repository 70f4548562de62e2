"""Serializable diagnostic reports shared by all checks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

SCHEMA_VERSION = "1.0"


def _plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


@dataclass
class DiagnosticsReport:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    witness_point: Any = None
    witness_values: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    run_id: str = ""
    frame: int | None = None

    def __bool__(self) -> bool:
        return bool(self.passed)

    def to_dict(self) -> dict:
        return _plain({
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "pass": bool(self.passed),
            "measured": self.measured,
            "witness": {"point": self.witness_point, "values": self.witness_values},
            "config": self.config,
            "provenance": {"run_id": self.run_id, "frame": self.frame},
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        keys = list(self.measured)[:4]
        body = ", ".join(f"{k}={_fmt(self.measured[k])}" for k in keys)
        return f"[{status}] {self.name}: {body}"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    return str(v)


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
