"""Fourth-order Magnus propagation of ``y'' = (q - lam) y`` on one segment.

Each step ``h`` uses the two-point Gauss rule.  With ``u = q - lam`` the Magnus
exponent is the traceless matrix

    Omega = [[-c dq, h], [h (ubar), c dq]],   c = sqrt(3) h^2 / 12,

whose exponential is ``cosh(w) I + sinh(w)/w Omega`` with ``w^2 = -det Omega``.
The step matrices therefore have unit determinant, so the Wronskian is
preserved to rounding error.  The lam-derivative of every step is formed in
closed form, giving the variational companions without a second integration.

Everything is vectorised over an array of spectral parameters.  Products over
many steps are reduced pairwise with a running log-scale to avoid overflow at
large negative ``lam``.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["SegmentSteps", "step_matrices", "reduce_product", "cumulative_states"]

_GAUSS = math.sqrt(3.0) / 6.0
_SERIES_CUT = 1e-2


def _cosh_sinhc(omega):
    """``cosh(w)``, ``sinh(w)/w`` and the omega-derivative of the latter, ``w^2 = omega``."""
    if np.iscomplexobj(omega):
        w = np.sqrt(omega)
        safe = np.where(w == 0, 1.0, w)
        c0 = np.cosh(w)
        s0 = np.where(w == 0, 1.0, np.sinh(w) / safe)
    else:
        pos = omega > 0
        w = np.sqrt(np.abs(omega))
        safe = np.where(w == 0, 1.0, w)
        with np.errstate(over="ignore"):
            c0 = np.where(pos, np.cosh(w), np.cos(w))
            s0 = np.where(pos, np.sinh(w), np.sin(w)) / safe
        s0 = np.where(w == 0, 1.0, s0)
    small = np.abs(omega) < _SERIES_CUT
    om_safe = np.where(small, 1.0, omega)
    ds = (c0 - s0) / (2.0 * om_safe)
    o = omega
    series = 1.0 / 6 + o * (1.0 / 60 + o * (1.0 / 1680 + o * (1.0 / 90720 + o / 7983360.0)))
    ds = np.where(small, series, ds)
    return c0, s0, ds


class SegmentSteps:
    """Gauss-point potential data for a uniform step grid on ``[x0, x1]``."""

    def __init__(self, x0: float, x1: float, qfun, n_steps: int):
        self.x0 = float(x0)
        self.x1 = float(x1)
        self.n_steps = int(n_steps)
        self.h = (self.x1 - self.x0) / self.n_steps
        mid = self.x0 + self.h * (np.arange(self.n_steps) + 0.5)
        off = self.h * _GAUSS
        q1 = np.asarray(qfun(mid - off), dtype=float)
        q2 = np.asarray(qfun(mid + off), dtype=float)
        self.qbar = 0.5 * (q1 + q2)
        self.dq = q2 - q1
        self.nodes = self.x0 + self.h * np.arange(self.n_steps + 1)
        self.qfun = qfun

    def matrices(self, lam):
        """Step matrices ``E`` and ``dE/dlam`` as 8 arrays of shape ``(L, n_steps)``."""
        lam = np.atleast_1d(np.asarray(lam))
        return step_matrices(self.h, self.qbar[None, :], self.dq[None, :], lam[:, None])

    def partial(self, lam, start_index, hpart):
        """Matrices for steps of length ``hpart`` beginning at step nodes ``start_index``.

        ``lam`` is ``(L,)``; ``start_index``/``hpart`` are ``(P,)``.  Used for
        evaluation at off-grid points.
        """
        lam = np.atleast_1d(np.asarray(lam))
        x = self.nodes[start_index]
        hp = np.asarray(hpart, dtype=float)
        mid = x + 0.5 * hp
        off = hp * _GAUSS
        q1 = np.asarray(self.qfun(mid - off), dtype=float)
        q2 = np.asarray(self.qfun(mid + off), dtype=float)
        return step_matrices(hp[None, :], 0.5 * (q1 + q2)[None, :], (q2 - q1)[None, :], lam[:, None])


def step_matrices(h, qbar, dq, lam):
    c = math.sqrt(3.0) / 12.0 * h * h
    o11 = -c * dq
    u = qbar - lam
    o21 = h * u
    omega = o11 * o11 + h * o21
    c0, s0, ds = _cosh_sinhc(omega)
    e11 = c0 + s0 * o11
    e12 = s0 * h
    e21 = s0 * o21
    e22 = c0 - s0 * o11
    # d omega / d lam = -h^2, d Omega_21 / d lam = -h
    dom = -h * h
    dc0 = 0.5 * s0 * dom
    dss = ds * dom
    d11 = dc0 + dss * o11
    d12 = dss * h
    d21 = dss * o21 - s0 * h
    d22 = dc0 - dss * o11
    out = np.broadcast_arrays(e11, e12, e21, e22, d11, d12, d21, d22)
    return [np.array(a) for a in out]


def _mul(left, right):
    """(A2, dA2) * (A1, dA1) for entry lists of 8 arrays."""
    a11, a12, a21, a22, da11, da12, da21, da22 = left
    b11, b12, b21, b22, db11, db12, db21, db22 = right
    p11 = a11 * b11 + a12 * b21
    p12 = a11 * b12 + a12 * b22
    p21 = a21 * b11 + a22 * b21
    p22 = a21 * b12 + a22 * b22
    q11 = a11 * db11 + a12 * db21 + da11 * b11 + da12 * b21
    q12 = a11 * db12 + a12 * db22 + da11 * b12 + da12 * b22
    q21 = a21 * db11 + a22 * db21 + da21 * b11 + da22 * b21
    q22 = a21 * db12 + a22 * db22 + da21 * b12 + da22 * b22
    return [p11, p12, p21, p22, q11, q12, q21, q22]


def reduce_product(mats):
    """Ordered product ``E_n ... E_1`` along the last axis with log-scaling.

    Returns ``(entries, log_scale)`` where ``entries`` are 8 arrays of shape
    ``(L,)`` and the true product is ``entries * exp(log_scale)``.
    """
    mats = list(mats)
    L = mats[0].shape[0]
    logs = np.zeros(mats[0].shape, dtype=float)
    while mats[0].shape[-1] > 1:
        n = mats[0].shape[-1]
        if n % 2:
            pad = [np.ones((L, 1), dtype=m.dtype) if i in (0, 3) else np.zeros((L, 1), dtype=m.dtype)
                   for i, m in enumerate(mats)]
            mats = [np.concatenate([m, pd], axis=1) for m, pd in zip(mats, pad)]
            logs = np.concatenate([logs, np.zeros((L, 1))], axis=1)
        right = [m[:, 0::2] for m in mats]
        left = [m[:, 1::2] for m in mats]
        mats = _mul(left, right)
        logs = logs[:, 0::2] + logs[:, 1::2]
        scale = np.max(np.stack([np.abs(m) for m in mats]), axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        # keep entries near unit size in both directions
        big = (scale > 1e8) | (scale < 1e-8)
        if np.any(big):
            scale = np.where(big, scale, 1.0)
            mats = [m / scale for m in mats]
            logs = logs + np.log(scale)
    return [m[:, 0] for m in mats], logs[:, 0]


def cumulative_states(steps: SegmentSteps, lam, y0, dy0, record_every: int = 1):
    """March an initial state through all steps, recording every ``record_every`` nodes.

    ``y0``/``dy0`` are ``(2, L)`` values ``(y, y')`` and their lam-derivatives.
    Returns arrays ``Y, dY`` of shape ``(n_rec, 2, L)``.  No scaling is applied,
    so this is meant for moderate ``lam`` (the inverse stage).
    """
    mats = steps.matrices(lam)
    y = np.array(y0, dtype=mats[0].dtype)
    dy = np.array(dy0, dtype=mats[0].dtype)
    n = steps.n_steps
    n_rec = n // record_every + 1
    Y = np.empty((n_rec, 2, y.shape[1]), dtype=y.dtype)
    dY = np.empty_like(Y)
    Y[0], dY[0] = y, dy
    r = 1
    for i in range(n):
        e11, e12, e21, e22, d11, d12, d21, d22 = (m[:, i] for m in mats)
        ny0 = e11 * y[0] + e12 * y[1]
        ny1 = e21 * y[0] + e22 * y[1]
        ndy0 = e11 * dy[0] + e12 * dy[1] + d11 * y[0] + d12 * y[1]
        ndy1 = e21 * dy[0] + e22 * dy[1] + d21 * y[0] + d22 * y[1]
        y = np.stack([ny0, ny1])
        dy = np.stack([ndy0, ndy1])
        if (i + 1) % record_every == 0:
            Y[r], dY[r] = y, dy
            r += 1
    return Y, dY
