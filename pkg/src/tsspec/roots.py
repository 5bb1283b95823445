"""Bracketing and refinement of real zeros of vectorised entire functions.

``fun(lam) -> (value, derivative)`` must accept a 1-D array.  Values may carry
an arbitrary positive per-point scale (the solver's log-scaling), which leaves
signs and Newton steps unchanged.
"""

from __future__ import annotations

import numpy as np

from .errors import RootCountError, ToleranceError

__all__ = ["scan_brackets", "refine", "find_zeros"]

_SPLIT_ITER = 80


def _split_suspects(fun, lam, val, der, brackets):
    """Look inside cells where the sign is unchanged but the slope flips.

    Such a cell may hide a close pair of zeros around an interior extremum.
    The extremum is located by bisection on the sign of the derivative, and
    the search stops as soon as the value changes sign, which splits the
    cell into two ordinary brackets.
    """
    same = np.sign(val[:-1]) == np.sign(val[1:])
    turn = np.sign(der[:-1]) != np.sign(der[1:])
    # a pair of zeros needs the extremum to point back towards zero
    towards = np.sign(der[:-1]) == -np.sign(val[:-1])
    idx = np.nonzero(same & turn & towards & (val[:-1] != 0))[0]
    if idx.size == 0:
        return brackets
    lo = lam[idx].copy()
    hi = lam[idx + 1].copy()
    dsign = np.sign(der[idx])
    vsign = np.sign(val[idx])
    active = np.ones(idx.size, dtype=bool)
    for _ in range(_SPLIT_ITER):
        act = np.nonzero(active)[0]
        if act.size == 0:
            break
        mid = 0.5 * (lo[act] + hi[act])
        v, d = fun(mid)
        v = np.real(v)
        d = np.real(d)
        flipped = np.sign(v) != vsign[act]
        for m in np.nonzero(flipped)[0]:
            c = act[m]
            i = idx[c]
            brackets.append((lam[i], mid[m], val[i], v[m]))
            brackets.append((mid[m], lam[i + 1], v[m], val[i + 1]))
        left = np.sign(d) == dsign[act]
        lo[act] = np.where(left, mid, lo[act])
        hi[act] = np.where(left, hi[act], mid)
        tiny = hi[act] - lo[act] <= 1e-15 * (1.0 + np.abs(mid))
        active[act] = ~(flipped | tiny)
    return brackets


def scan_brackets(fun, lam):
    """Sign-change brackets of ``fun`` on the sorted grid ``lam``.

    Exact zeros on the grid are returned as degenerate brackets.
    """
    lam = np.asarray(lam, dtype=float)
    val, der = fun(lam)
    val = np.real(val)
    der = np.real(der)
    brackets = []
    for i in np.nonzero(val == 0)[0]:
        brackets.append((lam[i], lam[i], 0.0, 0.0))
    ch = np.nonzero(np.sign(val[:-1]) * np.sign(val[1:]) < 0)[0]
    for i in ch:
        brackets.append((lam[i], lam[i + 1], val[i], val[i + 1]))
    brackets = _split_suspects(fun, lam, val, der, brackets)
    brackets.sort(key=lambda b: b[0])
    return brackets


def refine(fun, brackets, rtol: float = 4e-16, max_iter: int = 200):
    """Safeguarded Newton on all brackets at once; returns roots and derivatives."""
    if not brackets:
        return np.empty(0), np.empty(0)
    lo = np.array([b[0] for b in brackets], dtype=float)
    hi = np.array([b[1] for b in brackets], dtype=float)
    flo = np.array([b[2] for b in brackets], dtype=float)
    x = 0.5 * (lo + hi)
    done = lo == hi
    deriv = np.zeros_like(x)
    for _ in range(max_iter):
        act = np.nonzero(~done)[0]
        if act.size == 0:
            break
        v, d = fun(x[act])
        v = np.real(v)
        d = np.real(d)
        deriv[act] = d
        zero = v == 0
        left = np.sign(v) == np.sign(flo[act])
        lo[act] = np.where(left & ~zero, x[act], lo[act])
        flo[act] = np.where(left & ~zero, v, flo[act])
        hi[act] = np.where(~left & ~zero, x[act], hi[act])
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x[act] - v / d
        inside = np.isfinite(xn) & (xn > lo[act]) & (xn < hi[act])
        xn = np.where(inside, xn, 0.5 * (lo[act] + hi[act]))
        tol = rtol * (1.0 + np.abs(xn)) * 8
        conv = zero | (np.abs(xn - x[act]) <= tol) | (hi[act] - lo[act] <= tol)
        x[act] = np.where(zero, x[act], xn)
        done[act] = conv
    if not np.all(done):
        raise ToleranceError(f"{int((~done).sum())} roots failed to converge")
    v, d = fun(x)
    return x, np.real(d)


def find_zeros(fun, lo: float, count: int | None = None, hi: float | None = None,
               dt: float = 0.25, chunk: int = 512, hi_limit: float = 1e12):
    """First zeros above ``lo``.

    The scan runs on ``lam = lo + t^2`` with uniform ``t`` steps ``dt``, so the
    density follows the ``sqrt(lam)`` spacing of Sturm-Liouville spectra.
    Stops after ``count`` zeros or at ``hi``.
    """
    if count is None and hi is None:
        raise ValueError("need count or hi")
    roots = []
    derivs = []
    t0 = 0.0
    while True:
        t = t0 + dt * np.arange(chunk + 1)
        lam = lo + t * t
        if hi is not None:
            lam = lam[lam <= hi] if lam[0] < hi else lam[:1]
            if lam[-1] < hi:
                lam = np.append(lam, hi)
        brs = scan_brackets(fun, lam)
        # a root sitting on the chunk boundary is reported by both chunks
        brs = [b for b in brs if not (b[0] == b[1] == lam[-1] and (hi is None or lam[-1] < hi))]
        r, d = refine(fun, brs)
        roots.extend(r.tolist())
        derivs.extend(d.tolist())
        if count is not None and len(roots) >= count:
            break
        if hi is not None and lam[-1] >= hi:
            break
        if lam[-1] > hi_limit:
            raise RootCountError(f"only {len(roots)} zeros found below {hi_limit:g}")
        t0 = t[-1]
    roots = np.array(roots)
    derivs = np.array(derivs)
    order = np.argsort(roots)
    roots, derivs = roots[order], derivs[order]
    if roots.size > 1 and np.any(np.diff(roots) <= 0):
        raise RootCountError("coincident zeros detected")
    if count is not None:
        roots, derivs = roots[:count], derivs[:count]
    return roots, derivs
