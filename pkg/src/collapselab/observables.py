"""
Conserved and dissipated quantities along a trajectory.

Mass, free energy, dissipation rate, weak-form residuals against the
symmetrized Green's kernel, the moment monotonicity constant and the
stationarity defect. All functions are pure in immutable snapshots; the
TraceTable collects them at the snapshot cadence and round-trips through CSV
exactly (17 significant digits).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .grids import CartesianGrid, RadialGrid, ScalarField, integrate
from .poisson import GreenKernel, interaction_sum, quadratic_form, solve_poisson_dirichlet
from .testfunctions import TestFunction

__all__ = [
    "TraceTable",
    "free_energy",
    "dissipation",
    "pairing",
    "weak_form_residual",
    "monotonicity_bound",
    "stationarity_residual",
]

# Cells below this density are dry: they carry no entropy gradient.
DENSITY_FLOOR = 1e-300


@dataclass
class TraceTable:
    """Column-named table of scalar observables, one row per snapshot.

    The first column is always time and must be strictly increasing.
    """

    columns: List[str]
    rows: List[List[float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.columns or self.columns[0] != "time":
            raise ValueError("first column must be 'time'")

    def append(self, row: Sequence[float]) -> None:
        row = [float(x) for x in row]
        if len(row) != len(self.columns):
            raise ValueError("row length does not match columns")
        if self.rows and row[0] <= self.rows[-1][0]:
            raise ValueError("time must be strictly increasing")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for r in self.rows:
            buf.write(",".join("%.17g" % x for x in r) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TraceTable":
        lines = [ln for ln in text.strip().split("\n") if ln]
        table = cls(columns=lines[0].split(","))
        for ln in lines[1:]:
            table.append([float(tok) for tok in ln.split(",")])
        return table


def _entropy(u: ScalarField) -> float:
    """Integral of u (log u - 1) with the continuous extension 0 at u = 0."""
    vals = u.values
    if isinstance(u.grid, CartesianGrid):
        w = vals[u.grid.active()]
        pos = w > 0.0
        return float((w[pos] * (np.log(w[pos]) - 1.0)).sum() * u.grid.cell_area)
    r = u.grid.nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(vals > 0.0, vals * (np.log(np.maximum(vals, DENSITY_FLOOR)) - 1.0), 0.0)
    return float(simpson(2.0 * np.pi * r * g, x=r))


def free_energy(u: ScalarField) -> float:
    """F(u) = int u (log u - 1) - (1/2) <(-Laplace)^{-1} u, u>."""
    if not np.any(u.values):
        return 0.0
    return _entropy(u) - 0.5 * quadratic_form(u)


def dissipation(u: ScalarField, v: ScalarField) -> float:
    """D = int u |grad(log u - v)|^2, edge-centered differences.

    Edges touching a cell below the density floor contribute nothing (the
    flux u grad(log u - v) vanishes with u).
    """
    if isinstance(u.grid, CartesianGrid):
        act = u.grid.active()
        hx, hy = u.grid.h
        uu = u.values
        with np.errstate(divide="ignore"):
            w = np.where(uu > DENSITY_FLOOR, np.log(np.maximum(uu, DENSITY_FLOOR)), 0.0)
        w = w - v.values
        total = 0.0
        for axis, h in ((0, hx), (1, hy)):
            a = act & np.roll(act, -1, axis=axis)
            if axis == 0:
                a[-1, :] = False
            else:
                a[:, -1] = False
            wet = (uu > DENSITY_FLOOR) & (np.roll(uu, -1, axis=axis) > DENSITY_FLOOR)
            sel = a & wet
            dw = (np.roll(w, -1, axis=axis) - w)[sel] / h
            ue = 0.5 * (uu + np.roll(uu, -1, axis=axis))[sel]
            total += float((ue * dw * dw).sum() * u.grid.cell_area)
        return total
    r = u.grid.nodes
    uu = u.values
    with np.errstate(divide="ignore"):
        w = np.where(uu > DENSITY_FLOOR, np.log(np.maximum(uu, DENSITY_FLOOR)), 0.0)
    w = w - v.values
    dr = np.diff(r)
    dw = np.diff(w) / dr
    ue = 0.5 * (uu[1:] + uu[:-1])
    re = 0.5 * (r[1:] + r[:-1])
    wet = (uu[1:] > DENSITY_FLOOR) & (uu[:-1] > DENSITY_FLOOR)
    return float((2.0 * np.pi * re * ue * dw * dw * dr)[wet].sum())


def pairing(u: ScalarField, phi: TestFunction) -> float:
    """<phi, u> over the domain."""
    if isinstance(u.grid, CartesianGrid):
        X, Y = u.grid.cell_centers()
        act = u.grid.active()
        pts = np.column_stack([X[act], Y[act]])
        return float((phi(pts) * u.values[act]).sum() * u.grid.cell_area)
    r = u.grid.nodes
    pts = np.column_stack([r, np.zeros_like(r)])
    return float(simpson(2.0 * np.pi * r * phi(pts) * u.values, x=r))


def _laplacian_pairing(u: ScalarField, phi: TestFunction) -> float:
    X, Y = u.grid.cell_centers()
    act = u.grid.active()
    pts = np.column_stack([X[act], Y[act]])
    return float((phi.laplacian(pts) * u.values[act]).sum() * u.grid.cell_area)


def weak_form_residual(trajectory: Sequence[ScalarField], phi: TestFunction,
                       kernel: GreenKernel) -> np.ndarray:
    """Defect of d/dt <phi,u> = <Laplace phi, u> + (1/2) pair sum, per
    interior snapshot (centered time difference).

    phi must belong to the zero-normal-derivative class.
    """
    if not phi.admissible:
        raise ValueError("test function is not admissible for the weak form")
    if len(trajectory) < 3:
        raise ValueError("need at least 3 snapshots for centered differencing")
    res = []
    for k in range(1, len(trajectory) - 1):
        lo, mid, hi = trajectory[k - 1], trajectory[k], trajectory[k + 1]
        dpdt = (pairing(hi, phi) - pairing(lo, phi)) / (hi.time - lo.time)
        rhs = _laplacian_pairing(mid, phi) + interaction_sum(mid, phi, kernel)
        res.append(abs(dpdt - rhs))
    return np.array(res)


def monotonicity_bound(times: np.ndarray, pairings: np.ndarray, phi: TestFunction,
                       domain_diameter: float) -> float:
    """sup_t |d/dt <phi,u>| / ||grad phi||_{C^1} from a pairing trace.

    Returns 0 for a constant test function (0/0 convention).
    """
    norm = phi.grad_c1_norm(domain_diameter)
    if norm == 0.0:
        return 0.0
    times = np.asarray(times, dtype=float)
    pairings = np.asarray(pairings, dtype=float)
    if times.size < 8:
        raise ValueError("need at least 8 samples")
    rates = np.abs(np.diff(pairings) / np.diff(times))
    return float(rates.max() / norm)


def stationarity_residual(u: ScalarField, v: ScalarField) -> float:
    """Area-weighted variance of log u - v (0 exactly on stationary states)."""
    if isinstance(u.grid, CartesianGrid):
        act = u.grid.active()
        uu = u.values[act]
        if np.any(uu <= 0):
            raise ValueError("density must be positive")
        w = np.log(uu) - v.values[act]
        return float(np.mean((w - w.mean()) ** 2))
    uu = u.values
    if np.any(uu <= 0):
        raise ValueError("density must be positive")
    w = np.log(uu) - v.values
    r = u.grid.nodes
    wts = 2.0 * np.pi * r
    wts = np.concatenate((np.diff(r) / 2, [0.0])) * wts + np.concatenate(([0.0], np.diff(r) / 2)) * wts
    mean = float((w * wts).sum() / wts.sum())
    return float(((w - mean) ** 2 * wts).sum() / wts.sum())
