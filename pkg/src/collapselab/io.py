"""
File formats and atomic writers.

Field snapshots are a one-line JSON header followed by row-major CSV data;
trace tables are plain CSV with 17 significant digits (exact float round
trip); reports are JSON. All writes go through a temp-file rename so readers
never observe partial files. See FORMATS.md for the byte-level contracts.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from typing import Optional, Union

import numpy as np

from .grids import CartesianGrid, RadialGrid, ScalarField
from .observables import TraceTable

__all__ = [
    "atomic_write",
    "sha256_digest",
    "write_json",
    "read_json",
    "write_field",
    "read_field",
    "write_trace",
    "read_trace",
    "svg_line_plot",
]

FMT = "%.17g"


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: str, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _grid_header(grid) -> dict:
    if isinstance(grid, CartesianGrid):
        return {
            "kind": "cartesian", "Lx": grid.Lx, "Ly": grid.Ly,
            "nx": grid.nx, "ny": grid.ny, "x0": grid.x0, "y0": grid.y0,
            "masked": grid.mask is not None,
        }
    return {"kind": "radial", "R": grid.R, "n": grid.n, "grading": grid.grading}


def write_field(path: str, f: ScalarField) -> None:
    """JSON header line, then row-major CSV.

    Cartesian: nx rows of ny values (mask rows appended as 0/1 when masked).
    Radial: one 'r,value' row per node.
    """
    header = {"format": "collapselab-field", "version": 1,
              "time": f.time, "grid": _grid_header(f.grid)}
    lines = [json.dumps(header, sort_keys=True)]
    if isinstance(f.grid, CartesianGrid):
        for row in f.values:
            lines.append(",".join(FMT % x for x in row))
        if f.grid.mask is not None:
            for row in f.grid.mask:
                lines.append(",".join("1" if x else "0" for x in row))
    else:
        for r, val in zip(f.grid.nodes, f.values):
            lines.append(f"{FMT % r},{FMT % val}")
    atomic_write(path, "\n".join(lines) + "\n")


def read_field(path: str) -> ScalarField:
    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    header = json.loads(lines[0])
    if header.get("format") != "collapselab-field":
        raise ValueError(f"{path}: not a field snapshot")
    g = header["grid"]
    if g["kind"] == "cartesian":
        nx, ny = g["nx"], g["ny"]
        vals = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:1 + nx]])
        mask = None
        if g["masked"]:
            mask = np.array(
                [[t == "1" for t in ln.split(",")] for ln in lines[1 + nx:1 + 2 * nx]])
        grid = CartesianGrid(g["Lx"], g["Ly"], nx, ny, g["x0"], g["y0"], mask)
        return ScalarField(grid, vals, header["time"])
    rows = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:]])
    grid = RadialGrid(R=g["R"], nodes=rows[:, 0], grading=g["grading"])
    return ScalarField(grid, rows[:, 1], header["time"])


def write_trace(path: str, table: TraceTable) -> None:
    atomic_write(path, table.to_csv())


def read_trace(path: str) -> TraceTable:
    with open(path) as fh:
        return TraceTable.from_csv(fh.read())


def svg_line_plot(x: np.ndarray, y: np.ndarray, xlabel: str, ylabel: str,
                  width: int = 640, height: int = 420) -> str:
    """Self-contained SVG line plot, no rendering dependencies."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length samples at least")
    ml, mr, mt, mb = 70, 20, 20, 45
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = float(x.min()), float(x.max())
    y0, y1 = float(y.min()), float(y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    px = ml + (x - x0) / (x1 - x0) * pw
    py = mt + (y1 - y) / (y1 - y0) * ph
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<polyline points="{pts}" fill="none" stroke="#1f6feb" stroke-width="1.5"/>',
        f'<text x="{ml + pw / 2:.0f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="13">{xlabel}</text>',
        f'<text x="15" y="{mt + ph / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 15 {mt + ph / 2:.0f})">{ylabel}</text>',
        f'<text x="{ml}" y="{height - 28}" font-size="11" text-anchor="middle">{x0:.6g}</text>',
        f'<text x="{ml + pw}" y="{height - 28}" font-size="11" text-anchor="middle">{x1:.6g}</text>',
        f'<text x="{ml - 5}" y="{mt + ph}" font-size="11" text-anchor="end">{y0:.6g}</text>',
        f'<text x="{ml - 5}" y="{mt + 10}" font-size="11" text-anchor="end">{y1:.6g}</text>',
        "</svg>",
    ]
    return "\n".join(parts)
