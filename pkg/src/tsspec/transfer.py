"""Jump matrices across gaps between blocks and their ordered products.

Across the gap from ``b_l`` to ``a_{l+1}`` the pair ``(y, y^Delta)`` is mapped
by the matrix

    [[1, g], [g (q(b_l) - lam), 1 + g^2 (q(b_l) - lam)]],   g = a_{l+1} - b_l,

which has unit determinant.  Everything here is evaluated numerically at given
``lam`` (scalar or array, real or complex) together with the ``lam``-derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingPointValueError
from .potential import Potential
from .time_scale import TimeScale

__all__ = [
    "JumpMatrix",
    "BetaProduct",
    "alpha_matrix",
    "gap_product",
    "beta_product",
    "beta_leading_term",
    "segment_block",
]


@dataclass(frozen=True)
class JumpMatrix:
    a11: np.ndarray
    a12: np.ndarray
    a21: np.ndarray
    a22: np.ndarray
    d21: np.ndarray
    d22: np.ndarray
    gap: float
    qb: float

    def matrix(self) -> np.ndarray:
        """Entries stacked as ``(..., 2, 2)``."""
        a11, a12, a21, a22 = np.broadcast_arrays(self.a11, self.a12, self.a21, self.a22)
        return np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], -2)

    def derivative(self) -> np.ndarray:
        z = np.zeros_like(np.asarray(self.d21))
        d21, d22 = np.broadcast_arrays(self.d21, self.d22)
        return np.stack([np.stack([z, z], -1), np.stack([d21, d22], -1)], -2)

    def det(self):
        return self.a11 * self.a22 - self.a12 * self.a21


def jump_entries(gap: float, qb: float, lam):
    """Raw entries ``(a11, a12, a21, a22, d21, d22)``; ``d`` are lam-derivatives."""
    u = qb - np.asarray(lam)
    one = np.ones_like(u)
    return (one, gap * one, gap * u, 1.0 + gap * gap * u, -gap * one, -gap * gap * one)


def alpha_matrix(ts: TimeScale, p: Potential | None, l: int, lam, qb: float | None = None) -> JumpMatrix:
    """Jump matrix for the gap after block ``l`` (0-based, ``0 <= l <= N+M-2``).

    ``q(b_l)`` is read from ``p`` unless given.  When the gap leads to a final
    isolated point the second row is never used by the solver, but it is still
    evaluated here if ``q(b_l)`` is known (``qb=0`` otherwise).
    """
    if not 0 <= l < ts.n_blocks - 1:
        raise IndexError(f"gap index {l} outside 0..{ts.n_blocks - 2}")
    if qb is None:
        if p is None:
            raise ValueError("need a potential or an explicit q(b_l)")
        qb = qb_or_zero(ts, p, l)
    g = ts.gap(l)
    e = jump_entries(g, qb, lam)
    return JumpMatrix(*e, gap=g, qb=float(qb))


@dataclass(frozen=True)
class BetaProduct:
    """Ordered product of jump matrices with its lam-derivative.

    ``value`` and ``deriv`` have shape ``(..., 2, 2)``; for a product ending at
    a final isolated point only row 0 is meaningful (``row_only``).
    """

    value: np.ndarray
    deriv: np.ndarray
    first_gap: int
    last_gap: int
    row_only: bool

    def det(self):
        v = self.value
        return v[..., 0, 0] * v[..., 1, 1] - v[..., 0, 1] * v[..., 1, 0]


def qb_or_zero(ts: TimeScale, p: Potential, l: int) -> float:
    """``q(b_l)``, or 0 on the last gap onto a trailing isolated point.

    That jump only uses its first row, which does not involve ``q``.
    """
    if ts.mu1 and l == ts.n_blocks - 2:
        try:
            return p.at_block_end(l)
        except MissingPointValueError:
            return 0.0
    return p.at_block_end(l)


def gap_product(ts: TimeScale, p: Potential, first: int, last: int, lam) -> BetaProduct:
    """``alpha^{last} ... alpha^{first}`` (0-based gaps, ``first <= last``)."""
    if not 0 <= first <= last < ts.n_blocks - 1:
        raise IndexError(f"gap range {first}..{last} invalid")
    lam = np.asarray(lam)
    val = None
    der = None
    for l in range(first, last + 1):
        jm = alpha_matrix(ts, p, l, lam, qb=qb_or_zero(ts, p, l))
        A = jm.matrix()
        dA = jm.derivative()
        if val is None:
            val, der = A, dA
        else:
            der = A @ der + dA @ val
            val = A @ val
    row_only = bool(ts.mu1 and last == ts.n_blocks - 2)
    return BetaProduct(val, der, first, last, row_only)


def segment_block(ts: TimeScale, k: int) -> int:
    """0-based block index of ``l_k`` for 1-based ``k``, with ``l_0`` the first
    block and ``l_{N+1}`` the last block."""
    if k == 0:
        return 0
    if k == ts.n_segments + 1:
        return ts.n_blocks - 1
    if 1 <= k <= ts.n_segments:
        return ts.segment_blocks[k - 1]
    raise IndexError(f"segment number {k} outside 0..{ts.n_segments + 1}")


def beta_product(ts: TimeScale, p: Potential, k: int, s: int, lam) -> BetaProduct:
    """``beta^{l_k - s} = alpha^{l_k - 1} ... alpha^{l_k - s}`` with 1-based ``k`` and ``s``.

    ``k`` runs over ``1..N+mu_1`` and ``s`` over ``1..l_k - l_{k-1}``; the
    product carries ``(y, y^Delta)`` from ``b_{l_k - s}`` to ``a_{l_k}``.
    """
    if not 1 <= k <= ts.n_segments + ts.mu1:
        raise IndexError(f"k={k} outside 1..{ts.n_segments + ts.mu1}")
    lk = segment_block(ts, k)
    lprev = segment_block(ts, k - 1)
    if not 1 <= s <= lk - lprev:
        raise IndexError(f"s={s} outside 1..{lk - lprev}")
    return gap_product(ts, p, lk - s, lk - 1, lam)


def beta_leading_term(ts: TimeScale, k: int, i: int, j: int) -> tuple[float, int]:
    """Leading coefficient and degree of entry ``(i, j)`` of the full product
    from ``b_{l_{k-1}}`` to ``a_{l_k}`` (1-based ``k, i, j``).

    The coefficient of ``lam^deg`` is
    ``g_first^j g_last^i prod(g_mid^2) (-1)^deg`` with
    ``deg = l_k - l_{k-1} - 2 + i``.  For a single gap the first and last gap
    coincide and the middle product is read as ``1 / g^2``.
    """
    lo = 1 - ts.mu0 + 1
    hi = ts.n_segments + ts.mu1
    if not lo <= k <= hi:
        raise IndexError(f"k={k} outside {lo}..{hi}")
    imax = 1 if k == ts.n_segments + 1 else 2
    if not (1 <= i <= imax and j in (1, 2)):
        raise IndexError(f"entry ({i},{j}) not available for k={k}")
    lk = segment_block(ts, k)
    lprev = segment_block(ts, k - 1)
    ngaps = lk - lprev
    deg = ngaps - 2 + i
    g_first = ts.gap(lprev)
    g_last = ts.gap(lk - 1)
    if ngaps == 1:
        mid = 1.0 / (g_first * g_first)
    else:
        mid = 1.0
        for l in range(lprev + 1, lk - 1):
            mid *= ts.gap(l) ** 2
    coeff = g_first**j * g_last**i * mid * (-1.0) ** deg
    return float(coeff), int(deg)
