import numpy as np
import pytest

from collapselab.evolution import (SchemeViolation, SimState, StepControl,
                                   adaptive_dt, run, step)
from collapselab.grids import ScalarField, integrate, make_disk_grid
from collapselab.poisson import solve_poisson_dirichlet


def _state(grid, u_vals, t=0.0):
    u = ScalarField(grid, u_vals, t)
    return SimState(u=u, v=solve_poisson_dirichlet(u), t=t)


def _uniform(grid, mass):
    area = grid.active().sum() * grid.cell_area
    return np.where(grid.active(), mass / area, 0.0)


# ---------------------------------------------------------------- dt policy


def test_adaptive_dt_diffusion_limit():
    g = make_disk_grid(1.0, 200)  # h = 0.01
    st = _state(g, np.where(g.active(), 1e-6, 0.0))
    ctrl = StepControl(cfl_safety=0.5, zero_drift=True)
    # tiny u and no drift: the h^2/4 cap binds
    assert adaptive_dt(st, ctrl) == pytest.approx(0.5 * 0.01**2 / 4, rel=1e-12)


def test_adaptive_dt_reaction_limit():
    g = make_disk_grid(1.0, 32)
    vals = _uniform(g, 1.0)
    vals[16, 16] = 1e6
    st = _state(g, vals)
    ctrl = StepControl(cfl_safety=0.5)
    assert adaptive_dt(st, ctrl) <= 0.5 * 1e-6 * (1 + 1e-12)


def test_adaptive_dt_monotone_in_drift():
    g = make_disk_grid(1.0, 64)
    st1 = _state(g, _uniform(g, 1.0))
    st2 = _state(g, _uniform(g, 50.0))  # stronger potential gradient
    ctrl = StepControl()
    assert adaptive_dt(st2, ctrl) <= adaptive_dt(st1, ctrl)


def test_step_control_validation():
    with pytest.raises(ValueError):
        StepControl(cfl_safety=0.95)
    with pytest.raises(ValueError):
        StepControl(dt_max=0.0)
    with pytest.raises(ValueError):
        StepControl(horizon=-1.0)


# ---------------------------------------------------------------- single step


def test_zero_drift_step_is_heat_stencil():
    # with the potential zeroed the exponential-fitting flux reduces to the
    # standard 5-point explicit heat update exactly
    g = make_disk_grid(1.0, 32)
    rng = np.random.default_rng(4)
    vals = np.where(g.active(), rng.uniform(0.5, 1.5, (32, 32)), 0.0)
    st = _state(g, vals)
    ctrl = StepControl(zero_drift=True)
    dt = 1e-5
    out = step(st, ctrl, dt=dt).u.values

    h = g.h[0]
    act = g.active()
    expect = vals.copy()
    lap = np.zeros_like(vals)
    for axis in (0, 1):
        e = act & np.roll(act, -1, axis=axis)
        if axis == 0:
            e[-1, :] = False
            lo = np.where(e)
            hi = (lo[0] + 1, lo[1])
        else:
            e[:, -1] = False
            lo = np.where(e)
            hi = (lo[0], lo[1] + 1)
        f = (vals[lo] - vals[hi]) / h**2
        np.subtract.at(lap, lo, f)
        np.add.at(lap, hi, f)
    expect = vals + dt * lap
    assert np.abs(out - expect)[act].max() < 1e-15


def test_initial_data_validation():
    g = make_disk_grid(1.0, 32)
    ctrl = StepControl(horizon=0.01)
    with pytest.raises(ValueError):
        run(ScalarField(g, np.zeros((32, 32))), ctrl)
    bad = _uniform(g, 1.0)
    bad[16, 16] = -1.0
    with pytest.raises(ValueError):
        run(ScalarField(g, bad), ctrl)


# ---------------------------------------------------------------- runs


def test_mass_conserved_and_positive():
    g = make_disk_grid(1.0, 48)
    X, Y = g.cell_centers()
    vals = np.where(g.active(), np.exp(-((X) ** 2 + (Y) ** 2) / 0.05), 0.0)
    u0 = ScalarField(g, vals)
    m0 = integrate(u0)
    ctrl = StepControl(horizon=0.02, snapshot_interval=0.01)
    snaps, table, halt = run(u0, ctrl)
    assert halt == "horizon"
    masses = np.array(table.column("mass"))
    assert np.abs(masses - m0).max() <= 1e-12 * m0
    for s in snaps:
        assert s.u.values[g.active()].min() >= 0.0


def test_subcritical_uniform_relaxation():
    # lambda = 0.1: far subcritical, u relaxes toward a smooth steady state
    # and the distance to the uniform profile decreases
    g = make_disk_grid(1.0, 48)
    rng = np.random.default_rng(8)
    area = g.active().sum() * g.cell_area
    base = 0.1 / area
    vals = np.where(g.active(), base * rng.uniform(0.6, 1.4, (48, 48)), 0.0)
    u0 = ScalarField(g, vals)
    ctrl = StepControl(horizon=0.05, snapshot_interval=0.01)
    snaps, table, halt = run(u0, ctrl)
    act = g.active()
    devs = [np.abs(s.u.values[act] - base).max() for s in snaps]
    assert devs[-1] < devs[0]
    # free energy is non-increasing along the flow
    fe = table.column("free_energy")
    assert all(b <= a + 1e-10 * (1 + abs(a)) for a, b in zip(fe, fe[1:]))


def test_supercritical_halts_on_threshold():
    # concentrated mass above 8 pi: the sup grows until the threshold trips
    g = make_disk_grid(1.0, 64)
    X, Y = g.cell_centers()
    prof = np.where(g.active(), np.exp(-(X**2 + Y**2) / (2 * 0.15**2)), 0.0)
    u0 = ScalarField(g, prof)
    u0 = u0.with_values(prof * (16 * np.pi / integrate(u0)))
    ctrl = StepControl(horizon=2.0, snapshot_interval=0.5,
                       blowup_sup_threshold=5 * u0.max())
    snaps, table, halt = run(u0, ctrl)
    assert halt == "blowup_threshold"
    assert snaps[-1].u.max() >= ctrl.blowup_sup_threshold


def test_semi_implicit_matches_explicit_short_time():
    g = make_disk_grid(1.0, 32)
    X, Y = g.cell_centers()
    vals = np.where(g.active(), 1.0 + 0.3 * np.cos(3 * X) * np.sin(2 * Y), 0.0)
    u0 = ScalarField(g, vals)
    exp = run(u0, StepControl(horizon=0.01, snapshot_interval=0.01))[0][-1]
    imp = run(u0, StepControl(horizon=0.01, snapshot_interval=0.01,
                              semi_implicit=True, dt_max=1e-4))[0][-1]
    act = g.active()
    assert np.abs(exp.u.values - imp.u.values)[act].max() < 1e-3
    # and the implicit run conserves mass exactly too
    assert integrate(imp.u) == pytest.approx(integrate(u0), rel=1e-12)


def test_dt_underflow_raises():
    g = make_disk_grid(1.0, 32)
    st = _state(g, _uniform(g, 1.0))
    with pytest.raises(SchemeViolation):
        step(st, StepControl(), dt=1e-16)
