"""CSV and snapshot files.

All floats are written with ``%.16e`` (17 significant digits), so a reader
recovers every double exactly and two identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from qgexpand.dynamics import DiagnosticsRow
from qgexpand.harness.experiments import ResidualRow
from qgexpand.spectral import Field, make_grid

RESIDUAL_COLUMNS = ("t", "q", "level", "norm", "M0", "M1x", "M1y", "tail_mass")
STEP_COLUMNS = ("t", "l1", "l2", "linf", "M0", "M1x", "M1y", "tail_mass",
                "flux_x", "flux_y", "flux_int_x", "flux_int_y")

FLOAT_FMT = "%.16e"


def fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return FLOAT_FMT % v


def _write(path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_residuals(rows: Sequence[ResidualRow], path) -> Path:
    return _write(path, RESIDUAL_COLUMNS, (
        (fmt(r.t), fmt(r.q), r.level, fmt(r.norm), fmt(r.M0), fmt(r.M1x), fmt(r.M1y), fmt(r.tail_mass))
        for r in rows
    ))


def read_residuals(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESIDUAL_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(RESIDUAL_COLUMNS)}")
        return [
            ResidualRow(float(d["t"]), float(d["q"]), d["level"], float(d["norm"]), float(d["M0"]),
                        float(d["M1x"]), float(d["M1y"]), float(d["tail_mass"]))
            for d in reader
        ]


def write_steps(diagnostics: Sequence[DiagnosticsRow], path) -> Path:
    return _write(path, STEP_COLUMNS, (
        tuple(fmt(v) for v in (d.t, d.l1, d.l2, d.linf, d.M0, d.M1[0], d.M1[1], d.tail_mass,
                               d.flux[0], d.flux[1], d.flux_integral[0], d.flux_integral[1]))
        for d in diagnostics
    ))


def read_steps(path) -> np.ndarray:
    """Per-step table as a structured array keyed by :data:`STEP_COLUMNS`."""
    return np.genfromtxt(path, delimiter=",", names=True, dtype=float, encoding="utf-8")


def write_snapshot(f: Field, t: float, model: str, path) -> Path:
    """Header line ``N L t model`` followed by the N×N matrix, one row per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = f.grid
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{g.N} {fmt(g.L)} {fmt(t)} {model}\n")
        np.savetxt(fh, f.values, fmt=FLOAT_FMT)
    return path


def read_snapshot(path):
    """Returns ``(field, t, model)``."""
    with Path(path).open(encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 4:
            raise ValueError(f"{path}: malformed snapshot header")
        N, L, t, model = int(head[0]), float(head[1]), float(head[2]), head[3]
        vals = np.loadtxt(fh, ndmin=2)
    if vals.shape != (N, N):
        raise ValueError(f"{path}: payload shape {vals.shape} does not match N={N}")
    return Field(make_grid(N, L), vals), t, model
