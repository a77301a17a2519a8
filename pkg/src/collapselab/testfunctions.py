"""
Test functions for weak-form pairings and moment diagnostics.

Each function carries analytic evaluators for its value, gradient and
Laplacian, plus closed-form derivative bounds so that monotonicity constants
are measured against an exact right-hand side. The admissible class for the
weak form is the zero-normal-derivative one; a compactly supported bump is
admissible on any domain containing its support, while the quadratic moment
function is not (it is used for free-space moment identities only).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

__all__ = ["TestFunction", "constant", "quadratic", "bump"]

# Extrema of the quintic smoothstep Q(s) = 1 - (10 s^3 - 15 s^4 + 6 s^5):
# Q'(s) = -30 s^2 (1-s)^2, max |Q'| = 30/16 at s = 1/2;
# max |Q''| = 10/sqrt(3) at s = (1 -+ 1/sqrt(3))/2; max |Q'/s| = 40/9 at s = 1/3.
_QP_MAX = 30.0 / 16.0
_QPP_MAX = 10.0 / np.sqrt(3.0)
_QP_OVER_S_MAX = 40.0 / 9.0


def _smoothstep(s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C^2 descending step on [0,1]: Q, Q', Q''. Q(0)=1, Q(1)=0."""
    s = np.clip(s, 0.0, 1.0)
    q = 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)
    qp = -30.0 * s * s * (1.0 - s) ** 2
    qpp = -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    return q, qp, qpp


@dataclass(frozen=True)
class TestFunction:
    """Symbolic descriptor with analytic evaluators.

    kind: 'constant' | 'quadratic' | 'bump'
    center: reference point (ignored for 'constant')
    radius: support radius of the bump (unused otherwise)
    amplitude: multiplicative factor
    """

    kind: str
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "quadratic", "bump"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.kind == "bump" and self.radius <= 0:
            raise ValueError("bump radius must be positive")

    @property
    def admissible(self) -> bool:
        """Member of the zero-normal-derivative class on domains containing
        the support (constant: trivially; bump: gradient vanishes outside the
        support; quadratic: not admissible on bounded domains)."""
        return self.kind in ("constant", "bump")

    def _rel(self, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        d = np.asarray(pts, dtype=float) - np.asarray(self.center)
        rho = np.sqrt((d * d).sum(axis=-1))
        return d, rho

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.kind == "constant":
            return np.full(pts.shape[:-1], self.amplitude)
        d, rho = self._rel(pts)
        if self.kind == "quadratic":
            return self.amplitude * rho * rho
        q, _, _ = _smoothstep(rho / self.radius)
        return self.amplitude * q

    def grad(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.kind == "constant":
            return np.zeros(pts.shape)
        d, rho = self._rel(pts)
        if self.kind == "quadratic":
            return 2.0 * self.amplitude * d
        s = rho / self.radius
        _, qp, _ = _smoothstep(s)
        with np.errstate(invalid="ignore", divide="ignore"):
            fac = np.where(rho > 0, qp / (self.radius * np.maximum(rho, 1e-300)), 0.0)
        return self.amplitude * fac[..., None] * d

    def laplacian(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.kind == "constant":
            return np.zeros(pts.shape[:-1])
        if self.kind == "quadratic":
            return np.full(pts.shape[:-1], 4.0 * self.amplitude)
        _, rho = self._rel(pts)
        s = rho / self.radius
        _, qp, qpp = _smoothstep(s)
        # radial Laplacian Q''/r0^2 + Q'/(r0 rho); Q'/rho -> Q''(0) = 0 at rho=0
        with np.errstate(invalid="ignore", divide="ignore"):
            tang = np.where(rho > 0, qp / np.maximum(rho, 1e-300), qpp / self.radius)
        return self.amplitude * (qpp / self.radius**2 + tang / self.radius)

    def grad_c1_norm(self, domain_diameter: float) -> float:
        """Closed-form ||grad phi||_{C^1} = sup|grad phi| + sup|D^2 phi|.

        Computed from the descriptor, never by sampling; for the quadratic
        the sup of the gradient depends on the domain diameter.
        """
        a = abs(self.amplitude)
        if self.kind == "constant":
            return 0.0
        if self.kind == "quadratic":
            return a * (2.0 * domain_diameter + 2.0)
        sup_grad = a * _QP_MAX / self.radius
        sup_hess = a * max(_QPP_MAX, _QP_OVER_S_MAX) / self.radius**2
        return sup_grad + sup_hess


def constant(value: float = 1.0) -> TestFunction:
    return TestFunction("constant", amplitude=value)


def quadratic(center=(0.0, 0.0), amplitude: float = 1.0) -> TestFunction:
    return TestFunction("quadratic", center=tuple(center), amplitude=amplitude)


def bump(center=(0.0, 0.0), radius: float = 1.0, amplitude: float = 1.0) -> TestFunction:
    return TestFunction("bump", center=tuple(center), radius=radius, amplitude=amplitude)
