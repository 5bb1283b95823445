"""Independent references: a matrix pencil for purely discrete scales and
closed forms for a single segment with zero potential.

On isolated points ``x_0 < ... < x_{M-1}`` with gaps ``h_i`` the equation at
``x_i`` (``i = 0..M-3``), multiplied by ``h_i``, reads

    -(y_{i+2} - y_{i+1}) / h_{i+1} + (y_{i+1} - y_i) / h_i + h_i q_i y_{i+1}
        = lam h_i y_{i+1}.

With ``y_{M-1} = 0`` and ``y_0 = 0`` (j=0) or ``y_0 = y_1`` (j=1) this is a
symmetric-definite pencil ``A v = lam B v`` in ``y_1..y_{M-2}`` with
``B = diag(h_0..h_{M-3})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.linalg import eigh

from .errors import DegenerateError
from .potential import Potential
from .time_scale import TimeScale

__all__ = [
    "DiscretePencil",
    "DiscreteSolution",
    "ClassicalReference",
    "discrete_pencil",
    "theta_polynomials",
    "discrete_solve",
    "classical_reference",
]


@dataclass(frozen=True)
class DiscretePencil:
    A: np.ndarray
    B: np.ndarray
    j: int

    @property
    def size(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DiscreteSolution:
    """Spectrum of ``L_j``, the weight numbers and both characteristic polynomials."""

    spectrum: np.ndarray
    weights: np.ndarray
    theta0: Polynomial
    theta1: Polynomial
    j: int

    @property
    def theta_j(self) -> Polynomial:
        return self.theta0 if self.j == 0 else self.theta1


def _discrete_data(ts: TimeScale, p: Potential):
    if ts.n_segments:
        raise DegenerateError("the discrete oracle needs a scale of isolated points only")
    if ts.n_points < 3:
        raise DegenerateError("the discrete oracle needs at least three points")
    x = np.array([a for a, _ in ts.blocks])
    h = np.diff(x)
    q = np.array([p.point_values[l] for l in range(ts.n_points - 2)])
    return h, q


def discrete_pencil(ts: TimeScale, p: Potential, j: int) -> DiscretePencil:
    h, q = _discrete_data(ts, p)
    n = ts.n_points - 2
    A = np.zeros((n, n))
    for i in range(n):
        A[i, i] = 1.0 / h[i + 1] + h[i] * q[i]
        if not (j == 1 and i == 0):
            A[i, i] += 1.0 / h[i]
        if i + 1 < n:
            A[i, i + 1] = A[i + 1, i] = -1.0 / h[i + 1]
    return DiscretePencil(A, np.diag(h[:n]), j)


def theta_polynomials(ts: TimeScale, p: Potential) -> tuple[Polynomial, Polynomial]:
    """``(Theta_0, Theta_1)`` from the exact two-term recurrence in ``(y, y^Delta)``."""
    h, q = _discrete_data(ts, p)
    lam = Polynomial([0.0, 1.0])
    # columns: C and S
    y = [Polynomial([1.0]), Polynomial([0.0])]
    d = [Polynomial([0.0]), Polynomial([1.0])]
    last = len(h) - 1
    for i, g in enumerate(h):
        y = [yy + g * dd for yy, dd in zip(y, d)]
        if i < last:
            d = [dd + g * (q[i] - lam) * yy for yy, dd in zip(y, d)]
    return y[1], y[0]


def discrete_solve(ts: TimeScale, p: Potential, j: int) -> DiscreteSolution:
    """Spectrum of ``L_j`` from the pencil, weights from the polynomials.

    The weights ``-Theta_0 / Theta_1'`` are evaluated at the ``j = 1`` pencil
    eigenvalues regardless of ``j``.
    """
    if j not in (0, 1):
        raise ValueError("j must be 0 or 1")
    t0, t1 = theta_polynomials(ts, p)
    pen = discrete_pencil(ts, p, j)
    spec = eigh(pen.A, pen.B, eigvals_only=True)
    lam1 = spec if j == 1 else eigh(*_ab(discrete_pencil(ts, p, 1)), eigvals_only=True)
    weights = -t0(lam1) / t1.deriv()(lam1)
    return DiscreteSolution(np.sort(spec), weights, t0, t1, j)


def _ab(pen: DiscretePencil):
    return pen.A, pen.B


@dataclass(frozen=True)
class ClassicalReference:
    lambda0: np.ndarray
    lambda1: np.ndarray
    weights: np.ndarray


def classical_reference(d: float, count: int) -> ClassicalReference:
    """Dirichlet and Neumann-Dirichlet data of ``-y'' = lam y`` on a segment of length ``d``."""
    n = np.arange(1, count + 1, dtype=float)
    return ClassicalReference(
        (n * np.pi / d) ** 2,
        ((n - 0.5) * np.pi / d) ** 2,
        np.full(count, 2.0 / d),
    )
