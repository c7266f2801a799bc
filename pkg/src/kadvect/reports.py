"""Convergence reports and deterministic CSV/JSON emission.

Floats are written with ``repr`` (shortest round-trip form), so identical
numbers always produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def fit_rate(params: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(param)``.

    Non-positive errors are dropped; returns ``nan`` with fewer than two usable points.
    """
    p = np.asarray(params, dtype=float)
    e = np.abs(np.asarray(errors, dtype=float))
    ok = (e > 0) & np.isfinite(e) & (p > 0)
    if ok.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(p[ok]), np.log(e[ok]), 1)
    return float(slope)


def decreasing_in_trend(values: Sequence[float]) -> bool:
    """Last value below the first and a negative fitted slope against the index."""
    v = np.abs(np.asarray(values, dtype=float))
    if v.size < 2 or not np.all(np.isfinite(v)):
        return False
    if np.all(v == 0):
        return True
    slope = np.polyfit(np.arange(v.size), np.log(np.maximum(v, 1e-300)), 1)[0]
    return bool(v[-1] < v[0] and slope < 0)


@dataclass
class ConvergenceReport:
    """A table of ``(parameter, error)`` pairs with a fitted log-log rate and verdict."""

    parameter: str
    params: list[float]
    errors: list[float]
    rate: float = float("nan")
    verdict: bool = False
    criterion: str = ""
    columns: dict[str, list[float]] = field(default_factory=dict)
    info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.params = [float(p) for p in self.params]
        self.errors = [float(e) for e in self.errors]
        if math.isnan(self.rate):
            self.rate = fit_rate(self.params, self.errors)

    def rows(self) -> list[dict[str, float]]:
        out = []
        for i, (p, e) in enumerate(zip(self.params, self.errors)):
            row = {self.parameter: p, "error": e}
            for name, col in self.columns.items():
                row[name] = col[i]
            out.append(row)
        return out

    def summary(self) -> dict[str, Any]:
        return {"parameter": self.parameter, "rate": self.rate, "verdict": bool(self.verdict),
                "criterion": self.criterion, "n_points": len(self.params), **self.info}


def fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(rows: Iterable[dict[str, Any]], header: Sequence[str] | None = None) -> str:
    rows = list(rows)
    if header is None:
        header = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r.get(h, "")) for h in header])
    return buf.getvalue()


def write_csv(path: Path, rows: Iterable[dict[str, Any]], header: Sequence[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(csv_text(rows, header))
    return path


def _jsonable(o: Any):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


def write_json(path: Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
