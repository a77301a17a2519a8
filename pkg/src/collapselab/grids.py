"""
Grids, fields and quadrature.

Two grid families: a uniform cell-centered Cartesian grid (optionally with a
disk mask, cells classified by center membership) and a radial node grid with
geometric grading toward the origin. Everything downstream computes on
immutable snapshots of these.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import simpson

__all__ = [
    "CartesianGrid",
    "RadialGrid",
    "ScalarField",
    "MeasureSnapshot",
    "make_cartesian_grid",
    "make_disk_grid",
    "make_radial_grid",
    "integrate",
    "local_mass",
]

MIN_CELLS = 8
MIN_RADIAL_NODES = 32

# Geometric grading is clamped so the first node never drops below this
# fraction of R; blowup layers thinner than that are not resolvable anyway.
MIN_FIRST_NODE_FRACTION = 1e-8


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CartesianGrid:
    """Uniform cell-centered grid on [x0, x0+Lx] x [y0, y0+Ly].

    ``mask`` (shape (nx, ny), bool) marks active cells; None means the full
    rectangle is active. Disk domains are represented as a masked square.
    """

    Lx: float
    Ly: float
    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("domain lengths must be positive")
        if self.nx < MIN_CELLS or self.ny < MIN_CELLS:
            raise ValueError(f"cell counts must be >= {MIN_CELLS}")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != (self.nx, self.ny):
                raise ValueError("mask shape must be (nx, ny)")
            m = m.copy()
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @property
    def h(self) -> Tuple[float, float]:
        return (self.Lx / self.nx, self.Ly / self.ny)

    @property
    def cell_area(self) -> float:
        hx, hy = self.h
        return hx * hy

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Meshgrid (ij indexing) of cell-center coordinates, shape (nx, ny)."""
        hx, hy = self.h
        x = self.x0 + (np.arange(self.nx) + 0.5) * hx
        y = self.y0 + (np.arange(self.ny) + 0.5) * hy
        return np.meshgrid(x, y, indexing="ij")

    def active(self) -> np.ndarray:
        if self.mask is None:
            return np.ones((self.nx, self.ny), dtype=bool)
        return self.mask

    def fingerprint(self) -> tuple:
        """Hashable identity used to cache factorizations."""
        mkey = None if self.mask is None else self.mask.tobytes()
        return (self.Lx, self.Ly, self.nx, self.ny, self.x0, self.y0, mkey)


@dataclass(frozen=True)
class RadialGrid:
    """Node grid 0 = r_0 < r_1 < ... < r_n = R on a disk of radius R.

    grading < 1 gives geometric node spacing toward the origin (spacing ratio
    equal to the effective grading); grading == 1 is uniform.
    """

    R: float
    nodes: np.ndarray
    grading: float

    def __post_init__(self):
        nodes = _readonly(self.nodes)
        if nodes[0] != 0.0 or not np.isclose(nodes[-1], self.R):
            raise ValueError("nodes must run from 0 to R")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if nodes.size - 1 < MIN_RADIAL_NODES:
            raise ValueError(f"need at least {MIN_RADIAL_NODES} intervals")
        object.__setattr__(self, "nodes", nodes)

    @property
    def n(self) -> int:
        return self.nodes.size - 1

    def fingerprint(self) -> tuple:
        return (self.R, self.grading, self.nodes.size)


Grid = Union[CartesianGrid, RadialGrid]


@dataclass(frozen=True)
class ScalarField:
    """Values sampled on a grid at a fixed time.

    Cartesian: one value per cell (cells outside the mask are carried as 0).
    Radial: one value per node, interpreted as a radially symmetric function.
    """

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = _readonly(self.values)
        if isinstance(self.grid, CartesianGrid):
            if v.shape != (self.grid.nx, self.grid.ny):
                raise ValueError("values shape must match (nx, ny)")
        else:
            if v.shape != self.grid.nodes.shape:
                raise ValueError("values shape must match nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray, time: Optional[float] = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.time if time is None else time)

    def max(self) -> float:
        if isinstance(self.grid, CartesianGrid):
            return float(self.values[self.grid.active()].max())
        return float(self.values.max())


@dataclass(frozen=True)
class MeasureSnapshot:
    """Atomic part plus absolutely continuous remainder of a limit measure."""

    atoms: Tuple[Tuple[Tuple[float, float], float], ...] = ()
    density: Optional[ScalarField] = None

    def __post_init__(self):
        for _, mass in self.atoms:
            if mass <= 0:
                raise ValueError("atom masses must be positive")

    def total_mass(self) -> float:
        total = sum(m for _, m in self.atoms)
        if self.density is not None:
            total += integrate(self.density)
        return float(total)


def make_cartesian_grid(Lx: float, Ly: float, nx: int, ny: int) -> CartesianGrid:
    """Uniform rectangle grid with cell widths (Lx/nx, Ly/ny)."""
    return CartesianGrid(float(Lx), float(Ly), int(nx), int(ny))


def make_disk_grid(R: float, n: int) -> CartesianGrid:
    """Disk of radius R centered at the origin as a masked square grid.

    Cells belong to the disk iff their center does.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    g = CartesianGrid(2.0 * R, 2.0 * R, int(n), int(n), x0=-R, y0=-R)
    X, Y = g.cell_centers()
    mask = X * X + Y * Y < R * R
    return CartesianGrid(2.0 * R, 2.0 * R, int(n), int(n), x0=-R, y0=-R, mask=mask)


def make_radial_grid(R: float, n: int, grading: float) -> RadialGrid:
    """Radial grid with n intervals, geometrically refined toward r = 0.

    For grading < 1 the nodes are r_k = R * g^(n-k) with g the effective
    grading (the requested value, clamped so r_1 >= 1e-8 R); spacings then
    shrink toward the origin with ratio g. grading == 1 gives uniform nodes.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if n < MIN_RADIAL_NODES:
        raise ValueError(f"n must be >= {MIN_RADIAL_NODES}")
    if not (0.0 < grading <= 1.0):
        raise ValueError("grading must lie in (0, 1]")
    if grading == 1.0:
        nodes = np.linspace(0.0, R, n + 1)
    else:
        g = max(grading, MIN_FIRST_NODE_FRACTION ** (1.0 / (n - 1)))
        k = np.arange(1, n + 1, dtype=float)
        nodes = np.concatenate(([0.0], R * g ** (n - k)))
        nodes[-1] = R
    return RadialGrid(R=float(R), nodes=nodes, grading=float(grading))


def integrate(f: ScalarField) -> float:
    """Total integral of the field over the domain.

    Cartesian: cell sum (exact for cellwise constant data). Radial: Simpson
    quadrature of 2*pi*r*u over the nodes.
    """
    if isinstance(f.grid, CartesianGrid):
        act = f.grid.active()
        return float(f.values[act].sum() * f.grid.cell_area)
    r = f.grid.nodes
    return float(simpson(2.0 * np.pi * r * f.values, x=r))


def local_mass(f: ScalarField, center: Sequence[float], radius: float) -> float:
    """Mass of f inside the ball B(center, radius).

    Cartesian: sum over active cells whose centers lie in the ball. Radial:
    trapezoid of 2*pi*r*u up to the radius (center must be the origin), with
    the last partial interval included, so the result is monotone in radius.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if isinstance(f.grid, CartesianGrid):
        X, Y = f.grid.cell_centers()
        sel = f.grid.active() & (
            (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius * radius
        )
        return float(f.values[sel].sum() * f.grid.cell_area)
    if abs(center[0]) > 0 or (len(center) > 1 and abs(center[1]) > 0):
        raise ValueError("radial fields support local mass at the origin only")
    r = f.grid.nodes
    g = 2.0 * np.pi * r * f.values
    if radius >= r[-1]:
        return float(np.trapezoid(g, r))
    k = int(np.searchsorted(r, radius))  # r[k-1] <= radius < r[k]
    total = float(np.trapezoid(g[:k], r[:k]))
    g_r = g[k - 1] + (g[k] - g[k - 1]) * (radius - r[k - 1]) / (r[k] - r[k - 1])
    total += 0.5 * (g[k - 1] + g_r) * (radius - r[k - 1])
    return total
