"""
Stationary mean-field states: -Laplace v = lambda e^v / int e^v, v = 0 on
the boundary.

Newton iteration with the exact Jacobian, including the rank-one term from
the normalization integral (handled by the Sherman-Morrison identity), plus
pseudo-arclength continuation in lambda. The radial disk solve carries an
optional two-grid defect correction that removes the leading O(h^2) error;
the residual certificate then refers to the two underlying Newton solves,
each converged on its own grid.

Closed-form disk family for oracles: mu = lambda/(8 pi - lambda),
v(r) = 2 log((1+mu)/(1+mu r^2)), u(r) = 8 mu/(1+mu r^2)^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .grids import CartesianGrid, RadialGrid, ScalarField, integrate, make_radial_grid
from .poisson import _grid_operator

__all__ = [
    "MeanFieldState",
    "NewtonDivergence",
    "solve_meanfield",
    "continue_branch",
    "to_density",
    "disk_mu",
    "disk_potential",
    "disk_density",
]

MAX_NEWTON_ITERATIONS = 50
DEFAULT_TOL = 1e-8


class NewtonDivergence(RuntimeError):
    """Newton failed; the message carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class MeanFieldState:
    """Converged potential with its mass parameter and residual certificate."""

    v: ScalarField
    lam: float
    newton_residual: float
    branch_parameter: float = 0.0


def disk_mu(lam: float) -> float:
    if not (0.0 < lam < 8.0 * np.pi):
        raise ValueError("closed-form disk family requires 0 < lambda < 8 pi")
    return lam / (8.0 * np.pi - lam)


def disk_potential(r: np.ndarray, mu: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 2.0 * np.log((1.0 + mu) / (1.0 + mu * r * r))


def disk_density(r: np.ndarray, mu: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 8.0 * mu / (1.0 + mu * r * r) ** 2


# --------------------------------------------------------------------------
# Newton kernels
# --------------------------------------------------------------------------


def _radial_fv_operator(n: int, R: float):
    """Finite-volume -Laplace on the uniform radial grid, nodes 0..n-1
    unknown, node n Dirichlet; returns (A, quadrature weights, boundary
    weight of the Dirichlet node)."""
    h = R / n
    r = np.arange(n) * h
    rows, cols, vals = [], [], []
    c0 = (0.5 * h) / h / (h * h / 8.0)
    rows += [0, 0]
    cols += [0, 1]
    vals += [c0, -c0]
    for k in range(1, n):
        vol = r[k] * h
        cp = (r[k] + 0.5 * h) / h / vol
        cm = (r[k] - 0.5 * h) / h / vol
        rows += [k, k]
        cols += [k - 1, k]
        vals += [-cm, cm + cp]
        if k + 1 < n:
            rows.append(k)
            cols.append(k + 1)
            vals.append(-cp)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
    w = np.empty(n)
    w[0] = np.pi * (0.5 * h) ** 2
    w[1:] = 2.0 * np.pi * r[1:] * h
    w_bnd = 2.0 * np.pi * R * (0.5 * h)
    return A, w, w_bnd


def _newton(A, w, w_bnd, lam, v0, tol) -> Tuple[np.ndarray, float, int]:
    """Newton with Sherman-Morrison for F(v) = A v - lam e^v / S,
    S = sum(w e^v) + w_bnd (the Dirichlet boundary carries e^0)."""
    v = np.array(v0, dtype=float)
    res = np.inf
    for it in range(MAX_NEWTON_ITERATIONS):
        ev = np.exp(v)
        S = float(w @ ev) + w_bnd
        F = A @ v - lam * ev / S
        res = float(np.abs(F).max())
        if res <= tol:
            return v, res, it
        try:
            lu = splu((A - sp.diags(lam * ev / S)).tocsc())
        except RuntimeError as exc:
            raise NewtonDivergence(
                f"singular Jacobian ({exc}); use continuation near folds", res)
        y = lu.solve(-F)
        z = lu.solve(ev)
        c = lam / S**2
        q = w * ev
        denom = 1.0 + c * float(q @ z)
        if denom == 0.0:
            raise NewtonDivergence("singular bordered Jacobian; use continuation", res)
        v = v + y - z * (c * float(q @ y) / denom)
        if not np.all(np.isfinite(v)):
            raise NewtonDivergence("Newton iterate left the finite range", res)
    raise NewtonDivergence("Newton did not converge in 50 iterations", res)


def _solve_radial(lam: float, grid: RadialGrid, v_guess: Optional[np.ndarray],
                  tol: float, refine: bool) -> Tuple[np.ndarray, float]:
    if grid.grading != 1.0:
        raise ValueError("radial mean-field solve expects a uniform grid")
    n, R = grid.n, grid.R
    A, w, w_bnd = _radial_fv_operator(n, R)
    v0 = np.zeros(n) if v_guess is None else np.asarray(v_guess, dtype=float)[:n]
    v_fine, res, _ = _newton(A, w, w_bnd, lam, v0, tol)
    if refine:
        if n % 2:
            raise ValueError("two-grid refinement needs an even node count")
        A2, w2, wb2 = _radial_fv_operator(n // 2, R)
        v_coarse, res2, _ = _newton(A2, w2, wb2, lam, v_fine[::2], tol)
        err = (v_coarse - v_fine[::2]) / 3.0
        r_coarse = np.arange(n // 2) * (R / (n // 2))
        r_fine = np.arange(n) * (R / n)
        v_fine = v_fine - CubicSpline(r_coarse, err)(r_fine)
        res = max(res, res2)
    return np.concatenate([v_fine, [0.0]]), res


def _solve_cartesian(lam: float, grid: CartesianGrid, v_guess: Optional[np.ndarray],
                     tol: float) -> Tuple[np.ndarray, float]:
    A, _, _ = _grid_operator(grid)
    act = grid.active()
    w = np.full(A.shape[0], grid.cell_area)
    v0 = np.zeros(A.shape[0]) if v_guess is None else np.asarray(v_guess)[act]
    v, res, _ = _newton(A, w, 0.0, lam, v0, tol)
    full = np.zeros((grid.nx, grid.ny))
    full[act] = v
    return full, res


def solve_meanfield(lam: float, v_guess: ScalarField, tol: float = DEFAULT_TOL,
                    refine: bool = True) -> MeanFieldState:
    """Newton solve on the grid of v_guess (use a zero field to start from
    the trivial branch).

    Radial grids must be uniform; there the returned potential carries the
    two-grid defect correction unless refine is False, and newton_residual is
    the larger of the two per-grid Newton residuals.
    """
    if lam <= 0 or tol <= 0:
        raise ValueError("lambda and tol must be positive")
    grid = v_guess.grid
    if isinstance(grid, RadialGrid):
        v, res = _solve_radial(lam, grid, v_guess.values, tol, refine)
    else:
        v, res = _solve_cartesian(lam, grid, v_guess.values, tol)
    return MeanFieldState(v=ScalarField(grid, v), lam=float(lam), newton_residual=res)


def to_density(state: MeanFieldState) -> ScalarField:
    """u = lambda e^v / int e^v, normalized with the same quadrature that
    integrate() uses so the mass comes out exactly."""
    grid = state.v.grid
    if isinstance(grid, CartesianGrid):
        ev = np.where(grid.active(), np.exp(state.v.values), 0.0)
    else:
        ev = np.exp(state.v.values)
    total = integrate(ScalarField(grid, ev))
    return ScalarField(grid, ev * (state.lam / total), state.v.time)


# --------------------------------------------------------------------------
# pseudo-arclength continuation
# --------------------------------------------------------------------------


def _extended_residual(A, w, w_bnd, v, lam):
    ev = np.exp(v)
    S = float(w @ ev) + w_bnd
    return A @ v - lam * ev / S, ev, S


def _bordered_solve(A, w, w_bnd, v, lam, F, ev, S, tau_v, tau_l, rhs_n):
    """Solve the arclength-bordered Newton system by block elimination."""
    lu = splu((A - sp.diags(lam * ev / S)).tocsc())
    c = lam / S**2
    q = w * ev

    def jsolve(b):
        y = lu.solve(b)
        z = lu.solve(ev)
        return y - z * (c * float(q @ y) / (1.0 + c * float(q @ z)))

    G_l = -ev / S  # d/d lambda of the residual
    a = jsolve(-F)
    bvec = jsolve(G_l)
    # [J G_l; tau_v tau_l] [dv; dl] = [-F; -rhs_n]
    dl = (-rhs_n - float(tau_v @ a)) / (tau_l - float(tau_v @ bvec))
    dv = a - bvec * dl
    return dv, dl


def continue_branch(grid: RadialGrid, lam_start: float, lam_end: float,
                    steps: int, tol: float = DEFAULT_TOL) -> List[MeanFieldState]:
    """Trace the branch from lam_start toward lam_end by pseudo-arclength.

    States are monotone in arclength, not necessarily in lambda; the step
    halves on Newton failure and the branch terminates (with the states found
    so far) on step underflow. Potentials are reported without the two-grid
    correction; each carries its own Newton residual certificate.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    n, R = grid.n, grid.R
    A, w, w_bnd = _radial_fv_operator(n, R)
    v, res, _ = _newton(A, w, w_bnd, lam_start, np.zeros(n), tol)

    def pack(vv, ll, rres, s):
        return MeanFieldState(ScalarField(grid, np.concatenate([vv, [0.0]])),
                              float(ll), rres, branch_parameter=float(s))

    states = [pack(v, lam_start, res, 0.0)]
    if steps == 0:
        return states
    lam = lam_start
    ds = abs(lam_end - lam_start) / steps
    direction = np.sign(lam_end - lam_start) or 1.0
    # first tangent: pure lambda direction
    tau_v = np.zeros(n)
    tau_l = direction
    s_acc = 0.0
    for _ in range(20 * steps):
        if (direction > 0 and lam >= lam_end) or (direction < 0 and lam <= lam_end):
            break
        step_ok = False
        while ds >= 1e-12 * (abs(lam_end - lam_start) + 1.0):
            v_pred = v + ds * tau_v
            lam_pred = lam + ds * tau_l
            vv, ll = v_pred.copy(), lam_pred
            try:
                for _ in range(MAX_NEWTON_ITERATIONS):
                    F, ev, S = _extended_residual(A, w, w_bnd, vv, ll)
                    rhs_n = float(tau_v @ (vv - v_pred)) + tau_l * (ll - lam_pred)
                    res = max(float(np.abs(F).max()), abs(rhs_n))
                    if res <= tol:
                        break
                    dv, dl = _bordered_solve(A, w, w_bnd, vv, ll, F, ev, S,
                                             tau_v, tau_l, rhs_n)
                    vv = vv + dv
                    ll = ll + dl
                    if not (np.all(np.isfinite(vv)) and np.isfinite(ll)):
                        raise NewtonDivergence("corrector diverged", res)
                else:
                    raise NewtonDivergence("corrector did not converge", res)
                step_ok = True
                break
            except NewtonDivergence:
                ds *= 0.5
        if not step_ok:
            break  # step underflow: branch terminated
        # secant tangent for the next step
        dv_sec, dl_sec = vv - v, ll - lam
        norm = float(np.sqrt(dv_sec @ dv_sec + dl_sec * dl_sec))
        if norm > 0:
            tau_v, tau_l = dv_sec / norm, dl_sec / norm
        v, lam = vv, ll
        s_acc += norm
        states.append(pack(v, lam, res, s_acc))
        ds = min(ds * 1.5, abs(lam_end - lam_start) / max(steps, 1))
    return states
