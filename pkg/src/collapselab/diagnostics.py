"""
Blowup diagnostics: backward self-similar rescaling, parabolic-envelope
masses, rescaled second moments, cutoff constructions, epsilon-regularity
probes and the bubble decomposition of rescaled snapshots.

All functions are pure post-processing over immutable snapshots. The bubble
peel is deterministic: ties in the argmax break by C-order cell index, so
relabeling the traversal cannot change the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .grids import CartesianGrid, RadialGrid, ScalarField, integrate, local_mass
from .radial import RadialMassProfile, reconstruct_density

__all__ = [
    "RescaledSnapshot",
    "Bubble",
    "BubbleSet",
    "Cutoff",
    "EpsRegularityReport",
    "make_cutoff",
    "backward_rescale",
    "envelope_mass_trace",
    "rescaled_second_moment",
    "local_second_moment",
    "detect_bubbles",
    "check_eps_regularity",
]

EIGHT_PI = 8.0 * np.pi
DEFAULT_EPS = 0.5
DEFAULT_EPS0 = 1.0


# --------------------------------------------------------------------------
# cutoffs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Cutoff:
    """Piecewise-polynomial C^2 cutoff with exact derivative evaluators.

    kind 'c-moment': c(alpha) with c = alpha - 1 on [0, 1/4], c = 0 on
    [4, inf), -1 <= c <= 0 and 0 <= c' <= 1 everywhere; the bridge on
    [1/4, 4] has c'(alpha) = (1-s)^8 (1+8s), s = (alpha - 1/4)/3.75, whose
    integral over the bridge is exactly 3/4 so both matching conditions hold
    with polynomial identities, not numerics.

    kind 'phi-annulus': radial plateau function, 1 on B(0, r/2), 0 outside
    B(0, r), quintic smoothstep in between.
    """

    kind: str
    r: float = 1.0

    def __post_init__(self):
        if self.kind not in ("c-moment", "phi-annulus"):
            raise ValueError(f"unknown cutoff kind {self.kind!r}")
        if self.kind == "phi-annulus" and self.r <= 0:
            raise ValueError("annulus radius must be positive")

    def value(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if self.kind == "c-moment":
            s = np.clip((a - 0.25) / 3.75, 0.0, 1.0)
            bridge = -0.75 + 3.75 * (0.2 - (1.0 - s) ** 9 * (0.2 + 0.8 * s))
            return np.where(a <= 0.25, a - 1.0, np.where(a >= 4.0, 0.0, bridge))
        s = np.clip((a - 0.5 * self.r) / (0.5 * self.r), 0.0, 1.0)
        return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)

    def d1(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if self.kind == "c-moment":
            s = np.clip((a - 0.25) / 3.75, 0.0, 1.0)
            bridge = (1.0 - s) ** 8 * (1.0 + 8.0 * s)
            return np.where(a <= 0.25, 1.0, np.where(a >= 4.0, 0.0, bridge))
        inside = (a > 0.5 * self.r) & (a < self.r)
        s = np.clip((a - 0.5 * self.r) / (0.5 * self.r), 0.0, 1.0)
        return np.where(inside, -30.0 * s * s * (1.0 - s) ** 2 / (0.5 * self.r), 0.0)

    def d2(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if self.kind == "c-moment":
            s = np.clip((a - 0.25) / 3.75, 0.0, 1.0)
            bridge = -72.0 * s * (1.0 - s) ** 7 / 3.75
            return np.where((a <= 0.25) | (a >= 4.0), 0.0, bridge)
        inside = (a > 0.5 * self.r) & (a < self.r)
        s = np.clip((a - 0.5 * self.r) / (0.5 * self.r), 0.0, 1.0)
        return np.where(inside, -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (0.5 * self.r) ** 2, 0.0)


def make_cutoff(kind: str, r: float = 1.0) -> Cutoff:
    return Cutoff(kind=kind, r=r)


# --------------------------------------------------------------------------
# backward self-similar rescaling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RescaledSnapshot:
    """z(y, s) = (T - t) u(x, t) on y = (x - x0)/(T - t)^{1/2}."""

    z: ScalarField
    s: float
    x0: Tuple[float, float]
    T_est: float
    b_window: float


def backward_rescale(u: ScalarField, x0: Sequence[float], T_est: float,
                     b_window: float = 16.0) -> RescaledSnapshot:
    """Rescale a density snapshot around (x0, T_est).

    The y-grid is the image of the cells (or nodes) inside
    B(x0, b_window R(t)), so the rescaled mass inside |y| <= b equals the
    local mass inside bR(t) identically.
    """
    t = u.time
    if t >= T_est:
        raise ValueError("rescaling requires t < T_est")
    if b_window <= 0:
        raise ValueError("b_window must be positive")
    Tt = T_est - t
    Rt = np.sqrt(Tt)
    s = -np.log(Tt)
    if isinstance(u.grid, RadialGrid):
        r = u.grid.nodes
        rmax = min(b_window * Rt, u.grid.R)
        k = int(np.searchsorted(r, rmax))
        nodes = np.concatenate([r[:k], [rmax]]) / Rt
        zvals = Tt * np.concatenate([u.values[:k], [np.interp(rmax, r, u.values)]])
        ygrid = RadialGrid(R=float(nodes[-1]), nodes=nodes, grading=u.grid.grading)
        return RescaledSnapshot(ScalarField(ygrid, zvals, u.time), float(s),
                                (0.0, 0.0), float(T_est), float(b_window))
    grid = u.grid
    hx, hy = grid.h
    X, Y = grid.cell_centers()
    rad = b_window * Rt
    inside = grid.active() & ((X - x0[0]) ** 2 + (Y - x0[1]) ** 2 <= rad * rad)
    if not np.any(inside):
        raise ValueError("no active cells inside the rescaling window")
    ii, jj = np.where(inside)
    i0, i1 = ii.min(), ii.max()
    j0, j1 = jj.min(), jj.max()
    # pad the bounding box to a representable grid
    while i1 - i0 + 1 < 8:
        i0, i1 = max(i0 - 1, 0), min(i1 + 1, grid.nx - 1)
    while j1 - j0 + 1 < 8:
        j0, j1 = max(j0 - 1, 0), min(j1 + 1, grid.ny - 1)
    nx, ny = i1 - i0 + 1, j1 - j0 + 1
    ygrid = CartesianGrid(
        Lx=nx * hx / Rt, Ly=ny * hy / Rt, nx=nx, ny=ny,
        x0=(grid.x0 + i0 * hx - x0[0]) / Rt, y0=(grid.y0 + j0 * hy - x0[1]) / Rt,
        mask=inside[i0:i1 + 1, j0:j1 + 1],
    )
    zvals = np.where(inside, Tt * u.values, 0.0)[i0:i1 + 1, j0:j1 + 1]
    return RescaledSnapshot(ScalarField(ygrid, zvals, u.time), float(s),
                            (float(x0[0]), float(x0[1])), float(T_est), float(b_window))


def envelope_mass_trace(trajectory: Sequence[Union[ScalarField, RadialMassProfile]],
                        x0: Sequence[float], T_est: float, b: float
                        ) -> Tuple[np.ndarray, float]:
    """Per-snapshot mass inside B(x0, b R(t)), R(t) = (T - t)^{1/2}.

    Returns (trace of (t, mass), flatness of the final-snapshot b-ladder
    between b = 8 and b = 16).
    """
    if b <= 0:
        raise ValueError("b must be positive")
    rows = []
    for snap in trajectory:
        t = snap.t if isinstance(snap, RadialMassProfile) else snap.time
        if t >= T_est:
            continue
        radius = b * np.sqrt(T_est - t)
        if isinstance(snap, RadialMassProfile):
            rows.append((t, snap.mass_at(radius)))
        else:
            rows.append((t, local_mass(snap, x0, radius)))
    if not rows:
        raise ValueError("no snapshots precede T_est")
    last = trajectory[-1]
    t_last = last.t if isinstance(last, RadialMassProfile) else last.time
    Rt = np.sqrt(max(T_est - t_last, 0.0))
    if Rt > 0:
        if isinstance(last, RadialMassProfile):
            m8, m16 = last.mass_at(8 * Rt), last.mass_at(16 * Rt)
        else:
            m8 = local_mass(last, x0, 8 * Rt)
            m16 = local_mass(last, x0, 16 * Rt)
        flat = abs(m16 - m8) / max(m16, 1e-300)
    else:
        flat = np.inf
    return np.array(rows), float(flat)


def rescaled_second_moment(snapshot: RescaledSnapshot, b: float) -> float:
    """I_b(s) = integral of |y|^2 z(y, s) over |y| <= b."""
    z = snapshot.z
    if isinstance(z.grid, RadialGrid):
        y = z.grid.nodes
        g = 2.0 * np.pi * y**3 * z.values
        sel = y <= b
        return float(np.trapezoid(g[sel], y[sel]))
    X, Y = z.grid.cell_centers()
    r2 = X * X + Y * Y
    sel = z.grid.active() & (r2 <= b * b)
    return float((r2[sel] * z.values[sel]).sum() * z.grid.cell_area)


def local_second_moment(u: ScalarField, cutoff: Cutoff, beta: float,
                        center: Sequence[float] = (0.0, 0.0)) -> float:
    """<c(beta^{-2} |x - x0|^2) + 1, u> with the c-moment cutoff."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if cutoff.kind != "c-moment":
        raise ValueError("local second moment uses the c-moment cutoff")
    if isinstance(u.grid, RadialGrid):
        if center[0] != 0.0 or center[1] != 0.0:
            raise ValueError("radial fields support the origin only")
        r = u.grid.nodes
        w = cutoff.value((r / beta) ** 2) + 1.0
        return float(np.trapezoid(2.0 * np.pi * r * w * u.values, r))
    X, Y = u.grid.cell_centers()
    a = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / beta**2
    act = u.grid.active()
    w = cutoff.value(a[act]) + 1.0
    return float((w * u.values[act]).sum() * u.grid.cell_area)


# --------------------------------------------------------------------------
# bubble decomposition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Bubble:
    center: Tuple[float, float]
    radius: float
    mass: float
    classification: str  # compact | dichotomy


@dataclass(frozen=True)
class BubbleSet:
    bubbles: Tuple[Bubble, ...]
    exterior_sup: float
    residual_mass: float
    halt: str  # vanishing | residual_mass | budget

    @property
    def m_count(self) -> int:
        return len(self.bubbles)

    def to_dict(self) -> dict:
        return {
            "bubbles": [
                {"center": list(b.center), "radius": b.radius, "mass": b.mass,
                 "classification": b.classification}
                for b in self.bubbles
            ],
            "exterior_sup": self.exterior_sup,
            "residual_mass": self.residual_mass,
            "halt": self.halt,
        }


def detect_bubbles(snapshot: RescaledSnapshot, eps: float = DEFAULT_EPS,
                   eps0: float = DEFAULT_EPS0, max_bubbles: int = 16) -> BubbleSet:
    """Greedy bubble peel of a rescaled snapshot.

    Repeatedly: take the global max of z (C-order tie-break), grow a ball by
    radius doubling until the enclosed mass varies by less than eps over one
    doubling, classify the peel compact when that plateau mass lies within
    eps of 8 pi (dichotomy otherwise), mask the ball and continue. Stops when
    the remaining sup of z drops to eps (vanishing) or the remaining mass
    drops below eps0. Recorded balls never overlap: growth is capped at
    tangency with previously peeled balls.
    """
    if not (0.0 < eps):
        raise ValueError("eps must be positive")
    z = snapshot.z
    if not isinstance(z.grid, CartesianGrid):
        raise ValueError("bubble detection expects a Cartesian rescaled field")
    grid = z.grid
    X, Y = grid.cell_centers()
    vals = np.where(grid.active(), z.values, 0.0)
    alive = grid.active().copy()
    area = grid.cell_area
    h = max(grid.h)
    bubbles: List[Bubble] = []
    halt = "budget"
    for _ in range(max_bubbles):
        masked = np.where(alive, vals, -np.inf)
        flat_idx = int(np.argmax(masked))
        zmax = masked.flat[flat_idx]
        if not np.isfinite(zmax) or zmax <= eps:
            halt = "vanishing"
            break
        if float(vals[alive].sum()) * area < eps0:
            halt = "residual_mass"
            break
        ci, cj = np.unravel_index(flat_idx, vals.shape)
        cx, cy = X[ci, cj], Y[ci, cj]
        # cap at tangency with previously recorded balls
        cap = np.inf
        for bub in bubbles:
            cap = min(cap, np.hypot(cx - bub.center[0], cy - bub.center[1]) - bub.radius)
        d2 = (X - cx) ** 2 + (Y - cy) ** 2

        def ball_mass(rad):
            sel = alive & (d2 <= rad * rad)
            return float(vals[sel].sum()) * area

        radius = 2.0 * h
        classification = "dichotomy"
        domain_span = np.hypot(grid.Lx, grid.Ly)
        while True:
            grown = min(2.0 * radius, cap)
            if grown <= radius or radius >= domain_span:
                break  # never flattened within the allowed range
            m_lo, m_hi = ball_mass(radius), ball_mass(grown)
            if abs(m_hi - m_lo) < eps:
                radius = grown
                classification = "compact" if abs(m_hi - EIGHT_PI) <= eps else "dichotomy"
                break
            radius = grown
        mass = ball_mass(radius)
        bubbles.append(Bubble((float(cx), float(cy)), float(radius), mass, classification))
        alive &= ~(d2 <= radius * radius)
    remaining = np.where(alive, vals, 0.0)
    return BubbleSet(
        bubbles=tuple(bubbles),
        exterior_sup=float(remaining.max()) if remaining.size else 0.0,
        residual_mass=float(remaining.sum()) * area,
        halt=halt,
    )


# --------------------------------------------------------------------------
# epsilon-regularity
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsRegularityReport:
    premise_mass: float
    premise_holds: bool
    sup_scaled: float  # sup over the window of R^2 u on B(x0, R/2)
    C5_candidate: float
    verdict: str  # ok | premise_false | inconclusive

    def to_dict(self) -> dict:
        return {
            "premise_mass": self.premise_mass,
            "premise_holds": self.premise_holds,
            "sup_scaled": self.sup_scaled,
            "C5_candidate": self.C5_candidate,
            "verdict": self.verdict,
        }


def check_eps_regularity(trajectory: Sequence[ScalarField], x0: Sequence[float],
                         R: float, eps0: float, sigma0: float,
                         t0: Optional[float] = None) -> EpsRegularityReport:
    """Probe the local-regularity implication on one parabolic cylinder.

    Premise: mass of u(t0) in B(x0, R) below eps0. Conclusion measured:
    sup of R^2 u over B(x0, R/2) across snapshots in
    [t0 - sigma0 R^2, t0 + sigma0 R^2]. When the premise fails the report is
    vacuous; when the trajectory does not cover the window it is
    inconclusive.
    """
    if R <= 0 or eps0 <= 0 or sigma0 <= 0:
        raise ValueError("R, eps0, sigma0 must be positive")
    times = np.array([f.time for f in trajectory])
    if t0 is None:
        t0 = float(times[len(times) // 2])
    lo, hi = t0 - sigma0 * R * R, t0 + sigma0 * R * R
    lo = max(lo, float(times[0]))  # no data before the initial time exists
    if times[0] > t0 or times[-1] < hi:
        return EpsRegularityReport(np.nan, False, np.nan, np.nan, "inconclusive")
    k0 = int(np.argmin(np.abs(times - t0)))
    premise = local_mass(trajectory[k0], x0, R)
    holds = premise < eps0
    sup_scaled = 0.0
    for f in trajectory:
        if lo <= f.time <= hi:
            g = f.grid
            X, Y = g.cell_centers()
            sel = g.active() & ((X - x0[0]) ** 2 + (Y - x0[1]) ** 2 <= (R / 2) ** 2)
            if np.any(sel):
                sup_scaled = max(sup_scaled, R * R * float(f.values[sel].max()))
    if not holds:
        return EpsRegularityReport(premise, False, sup_scaled, np.nan, "premise_false")
    return EpsRegularityReport(premise, True, sup_scaled, sup_scaled, "ok")
