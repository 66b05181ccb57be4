"""Report, table and vector writers.

All files for one experiment are written by a single :class:`ReportWriter`
from the calling thread, so concurrent seed runs never interleave output.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def jsonable(obj):
    """Recursively replace non-finite floats with ``None`` and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps_report(report, drop=()) -> str:
    d = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    for key in drop:
        d.pop(key, None)
    return json.dumps(jsonable(d), sort_keys=True, separators=(",", ":"))


def write_vector(path, vec, meta: dict | None = None) -> Path:
    """Little-endian float64 dump plus a ``.json`` sidecar with the shape."""
    path = Path(path)
    arr = np.ascontiguousarray(vec, dtype="<f8")
    arr.tofile(path)
    side = {"dtype": "float64", "byteorder": "little", "shape": list(arr.shape), "file": path.name}
    side.update(meta or {})
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(jsonable(side), sort_keys=True, indent=1))
    return sidecar


def read_vector(path) -> np.ndarray:
    path = Path(path)
    side = json.loads(path.with_name(path.name + ".json").read_text())
    return np.fromfile(path, dtype="<f8").reshape(side["shape"])


class ReportWriter:
    """Owns one output directory."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def reports_path(self) -> Path:
        return self.out_dir / "reports.jsonl"

    def write_reports(self, reports, append: bool = False) -> Path:
        with open(self.reports_path, "a" if append else "w") as fh:
            for rep in reports:
                fh.write(dumps_report(rep) + "\n")
        return self.reports_path

    def write_table(self, name: str, rows: list[dict], columns: list[str] | None = None) -> Path:
        path = self.out_dir / name
        columns = columns or (list(rows[0]) if rows else [])
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: _cell(row.get(k)) for k in columns})
        return path

    def dump_vector(self, name: str, vec, meta: dict | None = None) -> Path:
        vdir = self.out_dir / "vectors"
        vdir.mkdir(exist_ok=True)
        path = vdir / name
        write_vector(path, vec, meta)
        return path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def read_reports(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "reports.jsonl"
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
