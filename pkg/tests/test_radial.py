import numpy as np
import pytest

from collapselab.grids import make_radial_grid
from collapselab.radial import (BlowupFit, RadialMassProfile, RadialRunControl,
                                estimate_blowup_time, extract_collapse_mass,
                                gaussian_profile, reconstruct_density,
                                run_radial, stationary_profile, step_radial)


def _residual(grid, m):
    """Brute-force evaluation of m_rr - m_r/r + m m_r/(2 pi r) at interior
    nodes by nonuniform central differences (independent of the solver)."""
    r = grid.nodes
    hm = r[1:-1] - r[:-2]
    hp = r[2:] - r[1:-1]
    m_r = (hm**2 * m[2:] + (hp**2 - hm**2) * m[1:-1] - hp**2 * m[:-2]) / (
        hm * hp * (hm + hp))
    m_rr = 2 * (hm * m[2:] - (hm + hp) * m[1:-1] + hp * m[:-2]) / (
        hm * hp * (hm + hp))
    rk = r[1:-1]
    return m_rr - m_r / rk + m[1:-1] * m_r / (2 * np.pi * rk)


# ---------------------------------------------------------------- profiles


def test_profile_validation():
    g = make_radial_grid(1.0, 64, 1.0)
    with pytest.raises(ValueError):
        RadialMassProfile(g, np.linspace(0.1, 1.0, 65))  # m(0) != 0
    bad = np.linspace(0.0, 1.0, 65)
    bad[10] = 0.5
    with pytest.raises(ValueError):
        RadialMassProfile(g, bad)
    with pytest.raises(ValueError):
        RadialMassProfile(g, np.zeros(12))
    with pytest.raises(ValueError):
        gaussian_profile(g, -1.0, 0.1)


def test_gaussian_profile_mass_and_interp():
    g = make_radial_grid(1.0, 256, 1.0)
    p = gaussian_profile(g, 4 * np.pi, 0.2)
    assert p.total_mass == pytest.approx(4 * np.pi)
    assert p.mass_at(0.0) == 0.0
    # half of an untruncated Gaussian's mass sits inside r = width sqrt(2 ln 2)
    r_half = 0.2 * np.sqrt(2 * np.log(2))
    assert p.mass_at(r_half) == pytest.approx(2 * np.pi, rel=1e-4)


def test_stationary_profile_is_discrete_near_equilibrium():
    # the exact steady state has residual -> 0 at second order in h
    errs = []
    for n in (256, 512):
        g = make_radial_grid(1.0, n, 1.0)
        p = stationary_profile(g, mu=1.0)
        errs.append(np.abs(_residual(g, p.m)).max())
    assert errs[0] / errs[1] > 3.5  # second-order interior discretization


def test_zero_profile_is_fixed_point():
    g = make_radial_grid(1.0, 64, 1.0)
    p = RadialMassProfile(g, np.zeros(65))
    p2 = step_radial(p, 1e-3)
    assert np.all(p2.m == 0.0)
    with pytest.raises(ValueError):
        step_radial(p, -1e-3)


# ---------------------------------------------------------------- density


def test_reconstruct_density_oracles():
    g = make_radial_grid(1.0, 512, 1.0)
    # uniform: m = lam r^2 / R^2 gives u = lam / (pi R^2)
    lam = 2.0
    p = RadialMassProfile(g, lam * g.nodes**2)
    u = reconstruct_density(p)
    # central differences are exact on quadratics; the boundary node uses a
    # one-sided difference and is only first-order accurate
    assert np.abs(u.values[:-1] - lam / np.pi).max() < 1e-10
    assert u.values[-1] == pytest.approx(lam / np.pi, rel=1e-2)
    # stationary: u = 8 mu / (1 + mu r^2)^2
    p = stationary_profile(g, mu=1.0)
    u = reconstruct_density(p)
    exact = 8.0 / (1.0 + g.nodes**2) ** 2
    assert np.abs(u.values[1:-1] - exact[1:-1]).max() < 1e-3
    assert u.values[0] == pytest.approx(8.0, rel=1e-3)
    # zero profile
    p = RadialMassProfile(g, np.zeros(513))
    assert reconstruct_density(p).max() == 0.0


# ---------------------------------------------------------------- blowup fit


def test_blowup_fit_recovers_synthetic_T():
    T = 0.7312
    t = np.linspace(0.0, 0.72, 500)
    trace = np.column_stack([t, 1.0 / (T - t)])
    fit = estimate_blowup_time(trace)
    assert fit.blowup
    assert fit.T_est == pytest.approx(T, abs=1e-6)
    assert fit.fit_residual < 1e-10


def test_blowup_fit_rejects_wrong_exponent():
    # sup ~ (T - t)^(-1.2): 1/sup is not linear in t, residual flags it
    T = 0.5
    t = np.linspace(0.45, 0.4999, 400)
    trace = np.column_stack([t, (T - t) ** -1.2])
    fit = estimate_blowup_time(trace, residual_tol=1e-4)
    assert not fit.blowup


def test_blowup_fit_bounded_trace_no_blowup():
    t = np.linspace(0.0, 5.0, 300)
    trace = np.column_stack([t, 2.0 + 0.1 * np.sin(t)])
    fit = estimate_blowup_time(trace)
    assert not fit.blowup
    assert fit.T_est == np.inf
    with pytest.raises(ValueError):
        estimate_blowup_time(trace[:4])


def test_extract_collapse_mass_precondition():
    g = make_radial_grid(1.0, 64, 1.0)
    p = stationary_profile(g)
    with pytest.raises(ValueError):
        extract_collapse_mass(p, np.inf)
    with pytest.raises(ValueError):
        extract_collapse_mass(p, p.t - 1.0)


def test_extract_collapse_mass_synthetic_ladder():
    # profile concentrated well inside b=1: the whole ladder reads the same
    # mass, so the flag is set and the extrapolation returns it
    g = make_radial_grid(1.0, 512, 1.0)
    mu = 1e6  # concentration scale 1e-3 << R(t) = 0.1
    m = 8 * np.pi * mu * g.nodes**2 / (1 + mu * g.nodes**2)
    p = RadialMassProfile(g, m, t=0.99)
    est = extract_collapse_mass(p, T_est=1.0)
    assert est.convergence_flag
    assert est.extrapolated_collapse_mass == pytest.approx(8 * np.pi, rel=1e-4)
    assert est.total_mass == pytest.approx(m[-1])


# ---------------------------------------------------------------- runs


def test_subcritical_run_stays_bounded():
    g = make_radial_grid(1.0, 256, 0.97)
    p0 = gaussian_profile(g, 0.9 * 8 * np.pi, 0.3)
    ctrl = RadialRunControl(horizon=10.0, dt_max=1e-3)
    trace, snaps, halt = run_radial(p0, ctrl)
    assert halt == "horizon"
    assert trace[:, 1].max() / trace[0, 1] < 10.0
    fit = estimate_blowup_time(trace)
    assert not fit.blowup


def test_supercritical_run_hits_threshold_and_fits():
    g = make_radial_grid(1.0, 512, 0.95)
    p0 = gaussian_profile(g, 1.5 * 8 * np.pi, 0.2)
    ctrl = RadialRunControl(horizon=10.0, sup_threshold=1e8)
    trace, snaps, halt = run_radial(p0, ctrl)
    assert halt == "blowup_threshold"
    fit = estimate_blowup_time(trace)
    assert fit.blowup
    assert fit.T_est > trace[-1, 0]
    est = extract_collapse_mass(snaps[-1], fit.T_est)
    # coarse grid: only a loose sanity bound here, the acceptance gate
    # checks the quantitative 8 pi statement at n = 2048
    assert abs(est.extrapolated_collapse_mass - 8 * np.pi) < 0.25 * 8 * np.pi
