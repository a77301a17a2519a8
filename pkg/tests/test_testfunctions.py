import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapselab.testfunctions import TestFunction, bump, constant, quadratic


def _fd_grad(phi, p, e=1e-6):
    p = np.asarray(p, dtype=float)
    return np.array([
        (phi(p + [e, 0]) - phi(p - [e, 0])) / (2 * e),
        (phi(p + [0, e]) - phi(p - [0, e])) / (2 * e),
    ])


def _fd_lap(phi, p, e=1e-4):
    p = np.asarray(p, dtype=float)
    return (phi(p + [e, 0]) + phi(p - [e, 0]) + phi(p + [0, e]) + phi(p - [0, e])
            - 4 * phi(p)) / e**2


def test_constant():
    phi = constant(3.0)
    pts = np.array([[0.1, 0.2], [5.0, -1.0]])
    assert np.allclose(phi(pts), 3.0)
    assert np.allclose(phi.grad(pts), 0.0)
    assert np.allclose(phi.laplacian(pts), 0.0)
    assert phi.admissible
    assert phi.grad_c1_norm(2.0) == 0.0


def test_quadratic_derivatives():
    phi = quadratic(center=(0.5, -0.25), amplitude=2.0)
    for p in ([0.0, 0.0], [1.0, 0.3], [-0.2, 0.7]):
        assert phi.grad(np.array(p)) == pytest.approx(_fd_grad(phi, p), abs=1e-7)
        assert phi.laplacian(np.array(p)) == pytest.approx(8.0)
    assert not phi.admissible
    # sup |grad| = 2 a diam, sup |D^2| = 2a
    assert phi.grad_c1_norm(3.0) == pytest.approx(2.0 * (2 * 3.0 + 2.0))


def test_bump_derivatives_and_support():
    phi = bump(center=(0.2, 0.1), radius=0.7, amplitude=1.5)
    assert phi.admissible
    assert phi(np.array([0.2, 0.1])) == pytest.approx(1.5)
    outside = np.array([1.5, 1.5])
    assert phi(outside) == 0.0
    assert np.allclose(phi.grad(outside), 0.0)
    for p in ([0.3, 0.2], [0.5, 0.4], [0.2, 0.1], [0.85, 0.1]):
        assert phi.grad(np.array(p)) == pytest.approx(_fd_grad(phi, p), abs=1e-6)
    for p in ([0.3, 0.2], [0.5, 0.4], [0.85, 0.1]):
        assert phi.laplacian(np.array(p)) == pytest.approx(_fd_lap(phi, p), abs=1e-4)
    # at the center the smoothstep is cubic-flat, so the Laplacian vanishes
    assert phi.laplacian(np.array([0.2, 0.1])) == 0.0


def test_bump_c1_norm_matches_dense_sampling():
    phi = bump(radius=0.9, amplitude=2.0)
    t = np.linspace(1e-6, 0.9, 20001)
    pts = np.column_stack([t, np.zeros_like(t)])
    g = np.linalg.norm(phi.grad(pts), axis=1)
    # Hessian eigenvalues of a radial function: f''(r) and f'(r)/r
    e = 1e-5
    fpp = (phi(np.column_stack([t + e, np.zeros_like(t)]))
           - 2 * phi(pts) + phi(np.column_stack([t - e, np.zeros_like(t)]))) / e**2
    fpr = g / t
    hess = np.maximum(np.abs(fpp), np.abs(fpr))
    sampled = g.max() + hess.max()
    # the FD Hessian samples carry ~1e-5 roundoff, hence the slack
    assert phi.grad_c1_norm(2.0) == pytest.approx(sampled, rel=1e-3)
    assert phi.grad_c1_norm(2.0) >= sampled - 1e-3


def test_invalid_kinds():
    with pytest.raises(ValueError):
        TestFunction("cubic")
    with pytest.raises(ValueError):
        TestFunction("bump", radius=0.0)


@settings(max_examples=40, deadline=None)
@given(rho=st.floats(0.0, 1.2), amp=st.floats(0.1, 5.0))
def test_bump_range_and_monotone(rho, amp):
    phi = bump(radius=1.0, amplitude=amp)
    val = float(phi(np.array([rho, 0.0])))
    assert -1e-12 <= val <= amp + 1e-12
    closer = float(phi(np.array([rho * 0.9, 0.0])))
    assert closer >= val - 1e-12
