"""Asymptotic reference quantities: branch constants, rings, branch checks and
the reconstruction of characteristic functions from their zeros.

Large eigenvalues split into one branch per segment,

    rho^k_n ~ pi (n - s_k) / d_k + z_k / (n - s_k),

where ``s_k`` is 0 or 1/2 depending on the boundary condition and on whether
segment ``k`` ends the scale.  Every characteristic function is of order 1/2,
so it is its zero product up to a constant, and the constant follows from the
known leading behaviour far left on the real axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np
from numpy.polynomial import Polynomial

from .errors import (
    AssignmentError,
    CommensurabilityError,
    ExtrapolationDivergenceError,
)
from .potential import Potential
from .time_scale import TimeScale
from .transfer import beta_leading_term

__all__ = [
    "AsymptoticConstants",
    "BranchReport",
    "HadamardTheta",
    "asymptotic_constants",
    "geometry_constants",
    "assign_branches",
    "branch_check",
    "log_leading_theta",
    "hadamard_theta",
    "spectra_to_weights",
]

COMMENSURABLE_RTOL = 1e-9
MAX_DENOMINATOR = 1000
# explicit predicted zeros appended per branch before the integral remainder
TAIL_TERMS = 4000


@dataclass(frozen=True)
class AsymptoticConstants:
    """Per-segment constants (0-based ``k``) and the commensurability data.

    ``last[k]`` is true when segment ``k`` is the final block and ``first[k]``
    when it is the first block.  ``r``, ``x`` and ``D`` are ``None`` unless the
    segment lengths are commensurable.
    """

    d: tuple[float, ...]
    last: tuple[bool, ...]
    first: tuple[bool, ...]
    c: tuple[float, ...]
    z: tuple[float, ...]
    gamma1: float
    lambda_count: tuple[int, int]
    commensurable: bool
    r: float | None
    x: tuple[int, ...] | None
    D: float | None
    z_restriction: bool
    condition_on_z: bool

    @property
    def n_branches(self) -> int:
        return len(self.d)

    def shift(self, k: int, j: int) -> float:
        jj = j if self.first[k] else 0
        return 0.5 if int(self.last[k]) == jj else 0.0

    def rho(self, k: int, n, j: int, z: float | None = None):
        """Main term plus the ``z_k`` correction of the k-th branch."""
        m = np.asarray(n, dtype=float) - self.shift(k, j)
        zk = self.z[k] if z is None else z
        return math.pi * m / self.d[k] + zk / m

    def ring(self, B: int) -> float:
        """``R_B``; rings ``[R_{B-1}, R_B)`` hold at most one zero per branch eventually."""
        if not self.commensurable:
            raise CommensurabilityError("segment lengths are not commensurable; rings undefined")
        if B < 0:
            raise ValueError("ring index must be non-negative")
        if B == 0:
            return 0.0
        D = self.D
        return math.pi**2 * (B / (2 * D) + 1 / (4 * D)) ** 2


def _commensurability(d):
    if not d:
        return True, None, None, None
    fr = []
    for dk in d:
        ratio = dk / d[0]
        f = Fraction(ratio).limit_denominator(MAX_DENOMINATOR)
        if abs(float(f) - ratio) > COMMENSURABLE_RTOL * ratio:
            return False, None, None, None
        fr.append(f)
    den = reduce(math.lcm, (f.denominator for f in fr), 1)
    ints = [f.numerator * (den // f.denominator) for f in fr]
    g = reduce(math.gcd, ints)
    x = tuple(i // g for i in ints)
    r = d[0] * g / den
    return True, r, x, r * math.prod(x)


def _distinct(vals, rtol=1e-12):
    vals = list(vals)
    scale = max([1.0] + [abs(v) for v in vals])
    return all(abs(a - b) > rtol * scale for i, a in enumerate(vals) for b in vals[i + 1:])


def geometry_constants(ts: TimeScale, integrals=None) -> AsymptoticConstants:
    """Constants from the scale and the segment integrals of ``q`` (zero if omitted)."""
    N = ts.n_segments
    integrals = [0.0] * N if integrals is None else list(integrals)
    d, last, first, c, z = [], [], [], [], []
    for k, l in enumerate(ts.segment_blocks):
        d.append(ts.segment_length(k))
        last.append(l == ts.n_blocks - 1)
        first.append(l == 0)
        ck = 0.5 * integrals[k]
        if l < ts.n_blocks - 1:
            ck += 1.0 / ts.gap(l)
        zk = ck + (1.0 / ts.gap(l - 1) if l >= 1 else 0.0)
        c.append(ck)
        z.append(zk / math.pi)
    M, mu0, mu1 = ts.n_points, ts.mu0, ts.mu1
    sgn = int(np.sign(N - 1 + mu1))
    counts = tuple(N + M - 1 + j * (1 - mu0) * sgn - mu1 for j in (0, 1))
    comm, r, x, D = _commensurability(d)
    zd = [zk / dk for zk, dk in zip(z, d)]
    zr = _distinct(zd)
    cond = True
    for k in range(N - 1):
        later = zd[k + 1:]
        ref = c[k] / (math.pi * d[k])
        scale = max([1.0] + [abs(v) for v in later])
        if any(abs(ref - v) <= 1e-12 * scale for v in later) or not _distinct(later):
            cond = False
    return AsymptoticConstants(
        tuple(d), tuple(last), tuple(first), tuple(c), tuple(z), float(sum(d)),
        counts, comm, r, x, D, zr, cond,
    )


def asymptotic_constants(ts: TimeScale, p: Potential) -> AsymptoticConstants:
    return geometry_constants(ts, [p.segment_integral(k) for k in range(ts.n_segments)])


# -- branch assignment ----------------------------------------------------------

def assign_branches(consts: AsymptoticConstants, lam, j: int, z=None):
    """Greedy nearest-prediction labels ``(k, n)`` per eigenvalue, ``None`` for the finite part.

    Candidates are scored by ``|sqrt(lam) - rho^k_n|``; each eigenvalue and
    each slot is used once, ties going to the smaller ``k``.
    """
    lam = np.asarray(lam, dtype=float)
    z = consts.z if z is None else z
    cands = []
    for i, v in enumerate(lam):
        if v <= 0:
            continue
        rho = math.sqrt(v)
        for k in range(consts.n_branches):
            s = consts.shift(k, j)
            n0 = int(round(consts.d[k] * rho / math.pi + s))
            for n in (n0 - 1, n0, n0 + 1):
                if n < 1:
                    continue
                dist = abs(rho - float(consts.rho(k, n, j, z[k])))
                cands.append((dist, k, i, n))
    cands.sort()
    labels = [None] * lam.size
    taken = set()
    for dist, k, i, n in cands:
        if labels[i] is None and (k, n) not in taken:
            # farther than half a branch spacing is not a match
            if dist <= 0.5 * math.pi / consts.d[k]:
                labels[i] = (k, n)
                taken.add((k, n))
    return labels


def ring_occupancy(consts: AsymptoticConstants, lam, j: int) -> dict:
    lam = np.sort(np.asarray(lam, dtype=float))
    occ = {}
    B = 1
    top = lam[-1] if lam.size else 0.0
    while consts.ring(B - 1) <= top:
        lo, hi = consts.ring(B - 1), consts.ring(B)
        cnt = int(np.count_nonzero((lam >= lo) & (lam < hi)))
        if cnt:
            occ[B] = cnt
        B += 1
    return occ


@dataclass
class BranchReport:
    """Residuals ``n (rho_n - main - z/(n - s))`` per spectrum and branch."""

    window: tuple[int, int]
    residuals: dict = field(default_factory=dict)
    sup: dict = field(default_factory=dict)
    growth: dict = field(default_factory=dict)
    weight_residuals: np.ndarray | None = None
    weight_n: np.ndarray | None = None
    labels: dict = field(default_factory=dict)
    enabled: bool = True
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "window": list(self.window),
            "enabled": self.enabled,
            "sup": {f"{j}:{k}": v for (j, k), v in self.sup.items()},
            "growth": {f"{j}:{k}": v for (j, k), v in self.growth.items()},
            "weight_residuals": None if self.weight_residuals is None else self.weight_residuals.tolist(),
            "notes": list(self.notes),
        }


def _growth(values) -> bool:
    """True when ``|values|`` increases monotonically over the window."""
    a = np.abs(np.asarray(values))
    return bool(a.size > 2 and np.all(np.diff(a) > 0))


def branch_check(ts: TimeScale, p: Potential, spectral, window=(20, 60)) -> BranchReport:
    """Residuals of the branch asymptotics for both spectra (and first-branch weights)."""
    consts = asymptotic_constants(ts, p)
    rep = BranchReport(tuple(window))
    if ts.n_segments == 0:
        rep.enabled = False
        rep.notes.append("no segments: spectrum is finite")
        return rep
    if not consts.commensurable:
        rep.enabled = False
        rep.notes.append("segment lengths not commensurable; branch check disabled")
        return rep
    lo, hi = window
    for j, lam in ((0, spectral.lambda0), (1, spectral.lambda1)):
        lam = np.asarray(lam)
        occ = ring_occupancy(consts, lam, j)
        cap = consts.n_branches + consts.lambda_count[j]
        over = {B: c for B, c in occ.items() if c > cap}
        if over:
            raise AssignmentError(f"rings {sorted(over)} exceed capacity {cap} for j={j}")
        labels = assign_branches(consts, lam, j)
        rep.labels[j] = labels
        for k in range(consts.n_branches):
            pairs = sorted((lab[1], lam[i]) for i, lab in enumerate(labels) if lab and lab[0] == k)
            if not pairs:
                continue
            n = np.array([a for a, _ in pairs], dtype=float)
            rho = np.sqrt(np.array([b for _, b in pairs]))
            res = n * (rho - consts.rho(k, n, j))
            rep.residuals[(j, k)] = (n, res)
            sel = (n >= lo) & (n <= hi)
            if np.any(sel):
                rep.sup[(j, k)] = float(np.max(np.abs(res[sel])))
                rep.growth[(j, k)] = _growth(res[sel])
            if j == 1 and k == 0 and consts.first[0]:
                idx = [i for i, lab in enumerate(labels) if lab and lab[0] == 0]
                nn = np.array([labels[i][1] for i in idx], dtype=float)
                w = np.asarray(spectral.weights)[idx]
                rep.weight_n = nn
                rep.weight_residuals = nn * (w * consts.d[0] / 2 - 1)
        n_fin = sum(1 for lab in labels if lab is None)
        if n_fin != consts.lambda_count[j]:
            rep.notes.append(
                f"j={j}: {n_fin} unassigned eigenvalues, finite part predicts {consts.lambda_count[j]}"
            )
    return rep


# -- Hadamard reconstruction ------------------------------------------------------

def _log_f(d, dense_sin, t):
    """Complex log of ``sin(d rho)`` or ``cos(d rho)`` at ``rho = i sqrt(t)``."""
    x = d * np.sqrt(t)
    # log(sinh x) and log(cosh x) without overflow
    e = np.exp(-2 * x)
    if dense_sin:
        return 1j * math.pi / 2 + x + np.log1p(-e) - math.log(2.0)
    return x + np.log1p(e) - math.log(2.0)


def log_leading_theta(ts: TimeScale, consts: AsymptoticConstants, j: int, t):
    """Complex log of the leading behaviour of ``Theta_j(-t)`` (``t > 0``).

    Built from the leading coefficients of the large-jump polynomials and the
    trigonometric factor of every segment.
    """
    t = np.asarray(t, dtype=float)
    N, mu0, mu1 = ts.n_segments, ts.mu0, ts.mu1
    if N == 0:
        raise ValueError("purely discrete scales use the exact polynomial leading term")
    log_rho = 0.5 * np.log(t) + 1j * math.pi / 2
    log_lam = np.log(t) + 1j * math.pi
    delta1 = int(consts.last[0])
    out = 1j * math.pi * (j * (1 - delta1) * (1 - mu0))
    out = out + (mu1 + j * (1 - mu0) - 1) * log_rho
    for k in range(1 - mu0, N):
        col = 2 - j * (1 if k == 0 else 0)
        coeff, deg = beta_leading_term(ts, k + 1, 2, col)
        out = out + np.log(complex(coeff)) + deg * log_lam
    if mu1:
        coeff, deg = beta_leading_term(ts, N + 1, 1, 2)
        out = out + np.log(complex(coeff)) + deg * log_lam

    def f(k, i):
        sin = (i == 0) == bool(consts.last[k])
        return _log_f(consts.d[k], sin, t)

    for k in range(1, N):
        out = out + f(k, 0)
    out = out + f(0, (1 - mu0) * j)
    return out


def _discrete_leading(ts: TimeScale, j: int) -> float:
    """Leading coefficient of ``Theta_j`` on a purely discrete scale (independent of q)."""
    lam = Polynomial([0.0, 1.0])
    y = [Polynomial([1.0]), Polynomial([0.0])]
    dd = [Polynomial([0.0]), Polynomial([1.0])]
    gaps = [ts.gap(l) for l in range(ts.n_blocks - 1)]
    for i, g in enumerate(gaps):
        y = [a + g * b for a, b in zip(y, dd)]
        if i < len(gaps) - 1:
            dd = [b - g * lam * a for a, b in zip(y, dd)]
    poly = y[1] if j == 0 else y[0]
    return float(poly.coef[-1])


def _integral_remainder(lam, d, U):
    """``int_U^inf log|1 - lam d^2 / (pi u)^2| du`` (midpoint continuation of a branch)."""
    lam = np.asarray(lam, dtype=float)
    out = np.empty_like(lam)
    neg = lam < 0
    a = d * np.sqrt(np.abs(lam)) / math.pi
    an = a[neg]
    out[neg] = -U * np.log1p((an / U) ** 2) + 2 * an * np.arctan(an / U)
    ap = a[~neg]
    with np.errstate(divide="ignore"):
        out[~neg] = -U * np.log1p(-(ap / U) ** 2) + ap * np.log((U - ap) / (U + ap))
    return out


@dataclass
class HadamardTheta:
    """``Theta_j`` rebuilt from zeros: ``C_j lam^s prod (1 - lam / lam_n)``.

    The supplied zeros are completed by predicted branch zeros and an integral
    remainder, so the product is usable well beyond the last supplied zero.
    """

    zeros: np.ndarray
    tail: np.ndarray
    remainders: list
    zero_power: int
    log_c: float
    sign_c: float
    c_error: float
    j: int

    def log_abs(self, lam):
        """``(log|Theta_j|, sign)`` at real ``lam``."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        zs = np.concatenate([self.zeros[self.zeros != 0], self.tail])
        ratio = 1.0 - lam[:, None] / zs[None, :]
        with np.errstate(divide="ignore"):
            la = np.sum(np.log(np.abs(ratio)), axis=1)
        sg = np.prod(np.sign(ratio), axis=1)
        for d, U in self.remainders:
            la = la + _integral_remainder(lam, d, U)
        if self.zero_power:
            with np.errstate(divide="ignore"):
                la = la + self.zero_power * np.log(np.abs(lam))
            sg = sg * np.sign(lam) ** self.zero_power
        return la + self.log_c, sg * self.sign_c

    def __call__(self, lam):
        la, sg = self.log_abs(lam)
        with np.errstate(over="ignore"):
            v = sg * np.exp(la)
        return v[0] if np.ndim(lam) == 0 else v

    def derivative(self, lam):
        """Central difference with step ``1e-6 (1 + |lam|)``."""
        lam = np.asarray(lam, dtype=float)
        h = 1e-6 * (1 + np.abs(lam))
        return (self(lam + h) - self(lam - h)) / (2 * h)


def _fit_z(consts, zeros, labels, k, j):
    """Fit ``z_k`` from the largest assigned zeros of branch ``k``."""
    pairs = sorted((lab[1], zeros[i]) for i, lab in enumerate(labels) if lab and lab[0] == k)
    if len(pairs) < 4:
        return consts.z[k], (pairs[-1][0] if pairs else 0)
    use = pairs[-min(10, len(pairs) // 2):]
    n = np.array([a for a, _ in use], dtype=float)
    m = n - consts.shift(k, j)
    rho = np.sqrt(np.array([b for _, b in use]))
    z = float(np.mean((rho - math.pi * m / consts.d[k]) * m))
    return z, pairs[-1][0]


def hadamard_theta(spectrum, j: int, ts: TimeScale, consts: AsymptoticConstants,
                   t0: float | None = None) -> HadamardTheta:
    """Rebuild ``Theta_j`` from its zeros.

    For scales with segments the product is completed with predicted zeros
    (``z_k`` refitted from the top of the supplied data) and ``C_j`` comes from
    comparing ``log|Theta_j|`` with its leading behaviour at ``lam = -t`` for
    ``t = t0, 4 t0, 16 t0``, extrapolated twice in ``1 / sqrt(t)``.  On a
    purely discrete scale the product is a polynomial and ``C_j`` is exact.
    """
    zeros = np.sort(np.asarray(spectrum, dtype=float))
    if zeros.size == 0:
        raise ValueError("need at least one zero")
    s = int(np.count_nonzero(zeros == 0))
    nz = zeros[zeros != 0]
    if ts.n_segments == 0:
        lead = _discrete_leading(ts, j)
        lc_p = np.prod(-1.0 / nz) if nz.size else 1.0
        c = lead / lc_p
        return HadamardTheta(zeros, np.empty(0), [], s, math.log(abs(c)), math.copysign(1.0, c), 0.0, j)
    labels = assign_branches(consts, zeros, j)
    tail = []
    rems = []
    for k in range(consts.n_branches):
        z, n_top = _fit_z(consts, zeros, labels, k, j)
        n_top = max(n_top, 0)
        n = np.arange(n_top + 1, n_top + 1 + TAIL_TERMS, dtype=float)
        tail.append(consts.rho(k, n, j, z) ** 2)
        rems.append((consts.d[k], n_top + TAIL_TERMS + 0.5 - consts.shift(k, j)))
    h = HadamardTheta(zeros, np.concatenate(tail), rems, s, 0.0, 1.0, 0.0, j)
    if t0 is None:
        t0 = max(100.0, 64.0 / min(consts.d) ** 2, 4.0 * abs(zeros[0]))
    ts_grid = t0 * 4.0 ** np.arange(3)
    lp, sp = h.log_abs(-ts_grid)
    lf = log_leading_theta(ts, consts, j, ts_grid)
    v = np.real(lf) - lp
    sign = np.sign(np.cos(np.imag(lf[-1]))) * sp[-1]
    r1 = 2 * v[1:] - v[:-1]
    r2 = (4 * r1[1] - r1[0]) / 3
    err = abs(r2 - r1[1])
    if not np.isfinite(r2) or err > 1e-2:
        raise ExtrapolationDivergenceError(f"log C_{j} extrapolation unstable (change {err:.3g})")
    h.log_c = float(r2)
    h.sign_c = float(sign)
    h.c_error = float(err)
    return h


def spectra_to_weights(ts: TimeScale, lambda0, lambda1, consts: AsymptoticConstants) -> np.ndarray:
    """``alpha_n = -Theta_0 / Theta_1'`` at ``lambda1`` from the two zero sets."""
    th0 = hadamard_theta(lambda0, 0, ts, consts)
    th1 = hadamard_theta(lambda1, 1, ts, consts)
    lam1 = np.asarray(lambda1, dtype=float)
    return -th0(lam1) / th1.derivative(lam1)
