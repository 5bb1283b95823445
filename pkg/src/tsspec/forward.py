"""Forward problem: solutions C and S, characteristic functions, spectra, weights.

The solutions are carried as the fundamental matrix

    F = [[C, S], [C^Delta, S^Delta]]

starting from the identity at ``a_1``.  Segments are crossed with the Magnus
integrator of :mod:`tsspec.segment`, gaps with the jump matrices of
:mod:`tsspec.transfer`; every stage also carries ``dF/dlam``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .asymptotics import asymptotic_constants
from .errors import NonPositiveWeightError, RootCountError
from .potential import Potential
from .roots import find_zeros, refine, scan_brackets
from .segment import SegmentSteps, cumulative_states, reduce_product
from .time_scale import TimeScale
from .transfer import jump_entries, qb_or_zero

__all__ = [
    "Solver",
    "SolutionState",
    "SpectralData",
    "solver",
    "propagate",
    "theta",
    "eigenvalues",
    "weight_numbers",
    "spectral_data",
    "plain_gaps",
    "interlacing_gaps",
]

log = logging.getLogger(__name__)

# Magnus steps per sample interval and the largest allowed sqrt|lam - q| * h
MIN_SUBSTEPS = 4
MAX_PHASE_STEP = 0.4
WRONSKIAN_TOL = 1e-10
# relative distance below which a lambda_0 / lambda_1 pair is resolved by Newton offsets
NEAR_PAIR = 1e-8
MAX_SCAN_REFINE = 4


@dataclass
class SolutionState:
    """(y, y^Delta) of C and S and their lam-derivatives at every block end.

    ``left[l]``/``right[l]`` have shape ``(2, 2, L)`` indexed as
    ``[component (y, y^Delta), solution (C, S), lam]``; the ``d*`` arrays hold
    lam-derivatives.  True values are ``scaled * exp(log_*)``.  At a final
    isolated point ``y^Delta`` is undefined and stored as NaN.
    """

    lam: np.ndarray
    left: np.ndarray
    right: np.ndarray
    dleft: np.ndarray
    dright: np.ndarray
    log_left: np.ndarray
    log_right: np.ndarray
    wronskian_drift: float

    def _unscale(self, arr, logs):
        with np.errstate(over="ignore", invalid="ignore"):
            return arr * np.exp(logs)[:, None, None, :]

    @property
    def at_a(self) -> np.ndarray:
        return self._unscale(self.left, self.log_left)

    @property
    def at_b(self) -> np.ndarray:
        return self._unscale(self.right, self.log_right)

    @property
    def d_at_a(self) -> np.ndarray:
        return self._unscale(self.dleft, self.log_left)

    @property
    def d_at_b(self) -> np.ndarray:
        return self._unscale(self.dright, self.log_right)

    def wronskian(self, normalised: bool = False) -> np.ndarray:
        """``S C^Delta - S^Delta C`` at every ``a_l`` and ``b_l`` (shape ``(2, n_blocks, L)``).

        With ``normalised=True`` returns ``(W + 1) / max(1, |S C^Delta| + |S^Delta C|)``,
        the drift relative to the size of the cancelling products; floating
        point cannot do better once the solutions grow large.
        """
        out = []
        for arr, logs in ((self.left, self.log_left), (self.right, self.log_right)):
            C, S = arr[:, :, 0], arr[:, :, 1]
            a = S[:, 0] * C[:, 1]
            b = S[:, 1] * C[:, 0]
            with np.errstate(over="ignore", invalid="ignore"):
                f = np.exp(2 * logs)
                if normalised:
                    w = (a - b + np.exp(-2 * logs)) / np.maximum(np.exp(-2 * logs), np.abs(a) + np.abs(b))
                else:
                    w = (a - b) * f
            out.append(w)
        return np.stack(out)


@dataclass
class SpectralData:
    lambda0: np.ndarray
    lambda1: np.ndarray
    weights: np.ndarray
    branch_labels0: list = field(default_factory=list)
    branch_labels1: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    # lambda_{n0} - lambda_{n1} and lambda_{n+1,1} - lambda_{n0}, accurate even
    # where the difference is below the float spacing of the eigenvalues
    lower_gaps: np.ndarray | None = None
    upper_gaps: np.ndarray | None = None

    def interlaced(self) -> bool:
        """Strict interlacing judged on the gaps (falls back to plain differences)."""
        lo, up = self.lower_gaps, self.upper_gaps
        if lo is None or up is None:
            lo, up = plain_gaps(self.lambda0, self.lambda1)
        return bool(np.all(lo > 0) and np.all(up > 0))

    def to_json(self) -> dict:
        return {
            "lambda0": self.lambda0.tolist(),
            "lambda1": self.lambda1.tolist(),
            "weights": self.weights.tolist(),
            "branches": {"lambda0": list(self.branch_labels0), "lambda1": list(self.branch_labels1)},
        }


class Solver:
    """Propagation engine bound to one ``(TimeScale, Potential)`` pair."""

    def __init__(self, ts: TimeScale, p: Potential, min_substeps: int = MIN_SUBSTEPS,
                 max_phase_step: float = MAX_PHASE_STEP):
        if p.ts.blocks != ts.blocks:
            raise ValueError("potential belongs to a different time scale")
        self.ts = ts
        self.p = p
        self.min_substeps = min_substeps
        self.max_phase_step = max_phase_step
        self._steps = {}
        self._jumps = []
        for l in range(ts.n_blocks - 1):
            qb = qb_or_zero(ts, p, l)
            self._jumps.append((ts.gap(l), qb))

    # -- segment machinery -------------------------------------------------
    def n_steps(self, k: int, lam) -> int:
        G = self.p.segment_samples[k].size - 1
        d = self.ts.segment_length(k)
        lam = np.asarray(lam)
        if lam.size:
            qmin = float(self.p.segment_samples[k].min())
            qmax = float(self.p.segment_samples[k].max())
            lr = np.real(lam)
            span = max(float(np.max(np.abs(lr - qmin))), float(np.max(np.abs(lr - qmax))))
            span = max(span, float(np.max(np.abs(np.imag(lam)))) if np.iscomplexobj(lam) else span)
        else:
            span = 0.0
        need = d * math.sqrt(span) / self.max_phase_step
        sub = max(self.min_substeps, int(math.ceil(need / G)))
        # round up to a power of two to keep the step cache small
        sub = 1 << (sub - 1).bit_length()
        return G * sub

    def steps(self, k: int, n: int) -> SegmentSteps:
        key = (k, n)
        if key not in self._steps:
            a, b = self.ts.blocks[self.ts.segment_blocks[k]]
            self._steps[key] = SegmentSteps(a, b, self.p.spline(k), n)
        return self._steps[key]

    def segment_product(self, k: int, lam):
        lam = np.atleast_1d(np.asarray(lam))
        st = self.steps(k, self.n_steps(k, lam))
        return reduce_product(st.matrices(lam))

    # -- whole-scale propagation ---------------------------------------------
    def run(self, lam) -> SolutionState:
        lam = np.atleast_1d(np.asarray(lam))
        if not np.iscomplexobj(lam):
            lam = lam.astype(float)
        L = lam.size
        ts = self.ts
        nb = ts.n_blocks
        dtype = lam.dtype
        F = np.zeros((2, 2, L), dtype=dtype)
        F[0, 0] = 1.0
        F[1, 1] = 1.0
        dF = np.zeros_like(F)
        logs = np.zeros(L)
        left = np.empty((nb, 2, 2, L), dtype=dtype)
        right = np.empty_like(left)
        dleft = np.empty_like(left)
        dright = np.empty_like(left)
        log_left = np.empty((nb, L))
        log_right = np.empty((nb, L))
        seg_index = {l: k for k, l in enumerate(ts.segment_blocks)}
        for l in range(nb):
            left[l], dleft[l], log_left[l] = F, dF, logs
            if l in seg_index:
                (e11, e12, e21, e22, d11, d12, d21, d22), elog = self.segment_product(seg_index[l], lam)
                E = np.array([[e11, e12], [e21, e22]])
                dE = np.array([[d11, d12], [d21, d22]])
                dF = np.einsum("ijl,jkl->ikl", E, dF) + np.einsum("ijl,jkl->ikl", dE, F)
                F = np.einsum("ijl,jkl->ikl", E, F)
                logs = logs + elog
                F, dF, logs = _renormalise(F, dF, logs)
            right[l], dright[l], log_right[l] = F, dF, logs
            if l < nb - 1:
                g, qb = self._jumps[l]
                a11, a12, a21, a22, e21, e22 = jump_entries(g, qb, lam)
                A = np.array([[a11, a12], [a21, a22]])
                dA = np.array([[np.zeros_like(e21), np.zeros_like(e21)], [e21, e22]])
                dF = np.einsum("ijl,jkl->ikl", A, dF) + np.einsum("ijl,jkl->ikl", dA, F)
                F = np.einsum("ijl,jkl->ikl", A, F)
                F, dF, logs = _renormalise(F, dF, logs)
        if ts.mu1:
            left[-1, 1] = np.nan
            right[-1, 1] = np.nan
            dleft[-1, 1] = np.nan
            dright[-1, 1] = np.nan
        state = SolutionState(lam, left, right, dleft, dright, log_left, log_right, 0.0)
        W = state.wronskian(normalised=True)
        finite = np.isfinite(W)
        drift = float(np.max(np.abs(W[finite]))) if np.any(finite) else 0.0
        state.wronskian_drift = drift
        return state

    def theta(self, lam, scaled: bool = False):
        """``(Theta_0, Theta_1, Theta_0', Theta_1')`` at ``lam``.

        With ``scaled=True`` all four share a positive per-lam factor, which is
        harmless for ratios and signs and avoids overflow far left on the axis.
        """
        st = self.run(lam)
        v = st.right[-1, 0]
        d = st.dright[-1, 0]
        t0, t1, dt0, dt1 = v[1], v[0], d[1], d[0]
        if scaled:
            return t0, t1, dt0, dt1
        with np.errstate(over="ignore", invalid="ignore"):
            s = np.exp(st.log_right[-1])
        return t0 * s, t1 * s, dt0 * s, dt1 * s

    def theta_j(self, j: int):
        def fun(lam):
            t0, t1, dt0, dt1 = self.theta(lam, scaled=True)
            return (t0, dt0) if j == 0 else (t1, dt1)
        return fun

    def weyl(self, lam):
        t0, t1, _, _ = self.theta(lam, scaled=True)
        return -t0 / t1

    def lower_bound(self) -> float:
        return self.p.values_min() - 1.0

    def scan_step(self) -> float:
        ts = self.ts
        if ts.n_segments:
            return min(math.pi / d for d in ts.segment_lengths) / 8.0
        return 0.05

    def eigenvalues(self, j: int, count: int | None = None, hi: float | None = None,
                    dt_scale: float = 1.0):
        """First eigenvalues of ``L_j(T)`` and the matching ``Theta_j'`` (scaled)."""
        ts = self.ts
        fun = self.theta_j(j)
        lo = self.lower_bound()
        if ts.n_segments == 0:
            return self._discrete_eigenvalues(fun, lo)
        if count is None and hi is None:
            raise ValueError("need count or upper limit for an infinite spectrum")
        return find_zeros(fun, lo, count=count, hi=hi, dt=self.scan_step() * dt_scale)

    def _discrete_eigenvalues(self, fun, lo):
        ts = self.ts
        want = ts.n_points - 2
        gaps = [ts.gap(l) for l in range(ts.n_blocks - 1)]
        span = max(abs(self.p.values_max()), abs(lo)) + 8.0 / min(gaps) ** 2 + 1.0
        for refine_level in range(6):
            n = 64 * max(want, 1) * (2 ** refine_level)
            grid = np.linspace(lo, lo + span * (2 ** refine_level), n + 1)
            brs = scan_brackets(fun, grid)
            roots, d = refine(fun, brs)
            if roots.size == want:
                return roots, d
        raise RootCountError(f"found {roots.size} eigenvalues, expected {want}")

    def _end_values(self, lam):
        """``Theta_0, Theta_1``, their derivatives, ``C^Delta, S^Delta`` at ``b*`` and
        the Wronskian unit, all on the log-scale of the last block.

        ``b*`` is the right end of the last block carrying a ``Delta``-derivative,
        so ``Theta_0 C^Delta(b*) - Theta_1 S^Delta(b*) = -unit``.
        """
        st = self.run(lam)
        idx = -2 if self.ts.mu1 else -1
        rel = np.exp(st.log_right[idx] - st.log_right[-1])
        cd = st.right[idx, 1, 0] * rel
        sd = st.right[idx, 1, 1] * rel
        t0, t1 = st.right[-1, 0, 1], st.right[-1, 0, 0]
        dt0, dt1 = st.dright[-1, 0, 1], st.dright[-1, 0, 0]
        with np.errstate(over="ignore", under="ignore"):
            unit = np.exp(-2 * st.log_right[-1])
        return t0, t1, dt0, dt1, cd, sd, unit

    def partner_offsets(self, roots, j: int):
        """Newton data linking zeros of ``Theta_j`` to the nearest zeros of ``Theta_{1-j}``.

        Returns ``(shift, gap)``: ``roots + shift`` is the exact zero of
        ``Theta_j`` and ``gap`` the signed distance from there to the partner
        zero, from one Newton step on the Wronskian form of ``Theta_{1-j}``.
        The partner value is tiny exactly when the two zeros nearly coincide,
        and the Wronskian keeps its relative accuracy there, so gaps far below
        the float spacing near ``roots`` keep their sign.
        """
        roots = np.asarray(roots, dtype=float)
        if roots.size == 0:
            return roots.copy(), roots.copy()
        t0, t1, dt0, dt1, cd, sd, unit = self._end_values(roots)
        if j == 1:
            shift = -t1 / dt1
            other = (-unit + sd * t1) / cd + dt0 * shift
            return shift, -other / dt0
        shift = -t0 / dt0
        other = (unit + cd * t0) / sd + dt1 * shift
        return shift, -other / dt1

    def weight_numbers(self, lambda1) -> np.ndarray:
        """``alpha_n = -Theta_0 / Theta_1'`` at the zeros of ``Theta_1``.

        ``Theta_0`` is taken from the Wronskian at ``b*`` (see
        :meth:`_end_values`), then moved to the exact zero by one Newton step.
        Propagating ``S`` directly loses ``Theta_0`` to cancellation on weakly
        coupled branches, where the weights are tiny.
        """
        lambda1 = np.asarray(lambda1, dtype=float)
        if lambda1.size == 0:
            return lambda1.copy()
        t0, t1, dt0, dt1, cd, sd, unit = self._end_values(lambda1)
        t0 = (-unit + sd * t1) / cd
        t0 = t0 - dt0 * t1 / dt1
        w = -t0 / dt1
        bad = ~(w > 0)
        if np.any(bad):
            raise NonPositiveWeightError(f"non-positive weight numbers at {lambda1[bad]}")
        return np.real(w)

    def segment_solutions(self, k: int, lam, x, start_state=None):
        """``(C, C', dC/dlam, dC'/dlam)`` and the same for ``S`` at points ``x`` of segment ``k``.

        Returns arrays of shape ``(4, 2, L, P)`` ordered ``[y, y', dy, dy']``
        by ``[C, S]``.  ``start_state`` defaults to the propagated state at
        ``a_{l_k}``; it is a pair ``(F, dF)`` of ``(2, 2, L)`` arrays.
        """
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        l = self.ts.segment_blocks[k]
        if start_state is None:
            st = self.run(lam)
            F, dF = st.at_a[l], st.d_at_a[l]
        else:
            F, dF = start_state
        steps = self.steps(k, self.n_steps(k, lam))
        Lm = lam.size
        lam2 = np.concatenate([lam, lam])
        y0 = np.concatenate([F[:, 0, :], F[:, 1, :]], axis=1)
        dy0 = np.concatenate([dF[:, 0, :], dF[:, 1, :]], axis=1)
        Y, dY = cumulative_states(steps, lam2, y0, dy0)
        idx = np.clip(np.floor((x - steps.x0) / steps.h).astype(int), 0, steps.n_steps)
        hpart = x - steps.nodes[idx]
        e11, e12, e21, e22, d11, d12, d21, d22 = steps.partial(lam2, np.minimum(idx, steps.n_steps), hpart)
        ya = Y[idx, 0, :].T
        yb = Y[idx, 1, :].T
        dya = dY[idx, 0, :].T
        dyb = dY[idx, 1, :].T
        v0 = e11 * ya + e12 * yb
        v1 = e21 * ya + e22 * yb
        w0 = e11 * dya + e12 * dyb + d11 * ya + d12 * yb
        w1 = e21 * dya + e22 * dyb + d21 * ya + d22 * yb
        out = np.stack([v0, v1, w0, w1])  # (4, 2L, P)
        return out.reshape(4, 2, Lm, x.size)


def _renormalise(F, dF, logs):
    m = np.maximum(np.max(np.abs(F), axis=(0, 1)), np.max(np.abs(dF), axis=(0, 1)))
    big = (m > 1e100) | ((m < 1e-100) & (m > 0))
    if np.any(big):
        s = np.where(big, m, 1.0)
        F = F / s
        dF = dF / s
        logs = logs + np.log(s)
    return F, dF, logs


@lru_cache(maxsize=64)
def solver(ts: TimeScale, p: Potential) -> Solver:
    return Solver(ts, p)


def propagate(ts: TimeScale, p: Potential, lam) -> SolutionState:
    st = solver(ts, p).run(lam)
    if st.wronskian_drift > WRONSKIAN_TOL:
        log.warning("Wronskian drift %.3g exceeds %.1g", st.wronskian_drift, WRONSKIAN_TOL)
    return st


def theta(ts: TimeScale, p: Potential, lam, j: int):
    """``(Theta_j(lam), Theta_j'(lam))``; scalars for scalar ``lam``."""
    t0, t1, dt0, dt1 = solver(ts, p).theta(lam)
    v, d = (t0, dt0) if j == 0 else (t1, dt1)
    if np.ndim(lam) == 0:
        return v[0], d[0]
    return v, d


def eigenvalues(ts: TimeScale, p: Potential, j: int, count: int | None = None,
                ring: int | None = None) -> np.ndarray:
    """First ``count`` eigenvalues of ``L_j(T)`` (or all below ring ``R_B``).

    For a purely discrete scale the whole spectrum of ``M - 2`` values is
    returned regardless of ``count``.
    """
    s = solver(ts, p)
    hi = None
    if ring is not None:
        hi = asymptotic_constants(ts, p).ring(ring)
    roots, _ = s.eigenvalues(j, count=count, hi=hi)
    if ts.n_segments == 0 and roots.size != ts.n_points - 2:
        raise RootCountError(f"expected {ts.n_points - 2} eigenvalues, got {roots.size}")
    return roots


def weight_numbers(ts: TimeScale, p: Potential, lambda1) -> np.ndarray:
    return solver(ts, p).weight_numbers(lambda1)


def plain_gaps(lambda0, lambda1):
    """``lambda_{n0} - lambda_{n1}`` and ``lambda_{n+1,1} - lambda_{n0}`` by subtraction."""
    l0 = np.asarray(lambda0, dtype=float)
    l1 = np.asarray(lambda1, dtype=float)
    n = min(l0.size, l1.size)
    m = min(l0.size, l1.size - 1)
    return l0[:n] - l1[:n], l1[1:m + 1] - l0[:m]


def _roughly_interlaced(l0, l1) -> bool:
    lo, up = plain_gaps(l0, l1)
    tol = NEAR_PAIR * (1.0 + np.abs(l1[:lo.size]))
    return bool(np.all(lo > -tol) and np.all(up > -tol[:up.size]))


def interlacing_gaps(s: Solver, lambda0, lambda1):
    """Gaps of :func:`plain_gaps`, with nearly coincident pairs redone by
    :meth:`Solver.partner_offsets`; also returns the float positions for the
    ``lambda_0`` members of those pairs."""
    l0 = np.asarray(lambda0, dtype=float).copy()
    l1 = np.asarray(lambda1, dtype=float)
    lo, up = plain_gaps(l0, l1)
    near = np.abs(lo) <= NEAR_PAIR * (1.0 + np.abs(l1[:lo.size]))
    if np.any(near):
        shift, gap = s.partner_offsets(l1[:lo.size][near], 1)
        lo[near] = gap
        l0[:lo.size][near] = l1[:lo.size][near] + (shift + gap)
    near = np.abs(up) <= NEAR_PAIR * (1.0 + np.abs(l0[:up.size]))
    if np.any(near):
        _, gap = s.partner_offsets(l0[:up.size][near], 0)
        up[near] = gap
    return lo, up, l0


def spectral_data(ts: TimeScale, p: Potential, count: int | None = None) -> SpectralData:
    """Both spectra and the weight numbers (``count`` values each when infinite).

    The theory forces strict interlacing, so a gross violation means the scan
    stepped over a close group of zeros; the scan is then repeated on a finer
    grid.  Members of nearly coincident pairs are placed at the float nearest
    their partner plus the Newton offset.
    """
    s = solver(ts, p)
    for level in range(MAX_SCAN_REFINE + 1):
        scale = 0.5**level
        lam0, _ = s.eigenvalues(0, count=count, dt_scale=scale)
        lam1, _ = s.eigenvalues(1, count=count, dt_scale=scale)
        if _roughly_interlaced(lam0, lam1):
            break
        log.info("interlacing violated at scan level %d; refining", level)
    else:
        raise RootCountError("spectra stay non-interlaced after scan refinement")
    if ts.n_segments == 0:
        for lam in (lam0, lam1):
            if lam.size != ts.n_points - 2:
                raise RootCountError(f"expected {ts.n_points - 2} eigenvalues, got {lam.size}")
    lower, upper, lam0 = interlacing_gaps(s, lam0, lam1)
    w = weight_numbers(ts, p, lam1)
    return SpectralData(lam0, lam1, w, counts={"lambda0": int(lam0.size), "lambda1": int(lam1.size)},
                        lower_gaps=lower, upper_gaps=upper)
