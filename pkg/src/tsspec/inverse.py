"""Recovery of ``q`` from Weyl data by the method of spectral mappings.

The head block of the scale is recovered first: a segment through the main
equation ``psi~(x) = (I + H~(x)) psi(x)`` built against a model problem, an
isolated point from the large-``|lam|`` behaviour of ``M``.  The Weyl function
of the remaining scale then follows algebraically and the procedure repeats.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllNearZeroError,
    BranchError,
    CancellationError,
    DataLengthError,
    FitResidualError,
    GridError,
    IterationLimitError,
    ModelMismatchError,
    PoleExtractionError,
    RootCountError,
    SingularSystemError,
    ToleranceError,
)
from .asymptotics import geometry_constants
from .forward import solver, spectral_data
from .potential import DEFAULT_GRID, Potential, eval_segment, zero_potential
from .roots import find_zeros
from .segment import SegmentSteps, cumulative_states
from .time_scale import TimeScale, tail, validate
from .weyl import WeylData, weyl_from_spectra

__all__ = [
    "InverseOptions",
    "SpectralInput",
    "ModelTable",
    "MainEquationSystem",
    "MainEquationSolution",
    "d_kernel",
    "build_main_equation",
    "solve_main_equation",
    "reconstruct_C",
    "recover_segment_q",
    "SegmentRecovery",
    "recover_point_q",
    "PointFit",
    "peel",
    "InverseResult",
    "run_inverse",
    "mean_model",
]

log = logging.getLogger(__name__)

# smallest common gap, in local pole spacings, at which data and model lists may be cut
CUT_MARGIN = 0.5

# Gauss-Legendre rule on [0, 1] for the near-diagonal kernel quadrature
_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


@dataclass
class InverseOptions:
    """Tunable parameters of the inverse stage."""

    n_max: int = 100
    grid: int = DEFAULT_GRID
    working_set: int = 5
    admissible: float = 0.1
    eps_d: float = 1e-6
    fd_refine: int = 1
    fd_model_correction: bool = True
    residual_tol: float = 1e-10
    max_condition: float = 1e12
    fit_lambda0: float = 100.0
    fit_levels: int = 8
    fit_tol: float = 1e-6
    branch_tol: float = 1e-2
    max_iterations: int = 64
    chunk: int = 32
    threads: int | None = None
    # "mean": replace the default zero model on a lone segment by a fitted constant
    model_shift: str = "mean"

    @classmethod
    def from_dict(cls, obj) -> "InverseOptions":
        names = set(cls.__dataclass_fields__)
        bad = set(obj) - names
        if bad:
            raise ValueError(f"unknown inverse options: {sorted(bad)}")
        return cls(**obj)


@dataclass
class SpectralInput:
    """Poles and residues of ``M`` (optionally the Dirichlet spectrum too)."""

    lambda1: np.ndarray
    weights: np.ndarray
    lambda0: np.ndarray | None = None
    n_max: int | None = None
    weyl: object | None = None

    def __post_init__(self):
        self.lambda1 = np.asarray(self.lambda1, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.lambda1.shape != self.weights.shape or self.lambda1.ndim != 1:
            raise DataLengthError("lambda1 and weights must be 1-D of equal length")
        if np.any(np.diff(self.lambda1) <= 0):
            raise DataLengthError("lambda1 must be strictly increasing")
        if np.any(~(self.weights > 0)):
            raise DataLengthError("weights must be positive")
        if self.lambda0 is not None:
            self.lambda0 = np.asarray(self.lambda0, dtype=float)
            l0, l1 = self.lambda0, self.lambda1
            m = min(l0.size, l1.size)
            # ties are allowed: true gaps can sit below the float spacing
            ok = np.all(l1[:m] <= l0[:m]) and np.all(l0[:m - 1] <= l1[1:m]) if m else True
            if not ok:
                raise DataLengthError("lambda0 and lambda1 do not interlace")
        if self.n_max is None:
            self.n_max = self.lambda1.size
        if self.n_max > self.lambda1.size:
            raise DataLengthError(f"n_max={self.n_max} exceeds the {self.lambda1.size} data pairs")

    @classmethod
    def from_weyl(cls, weyl, n_max: int | None = None) -> "SpectralInput":
        return cls(weyl.poles, weyl.residues, n_max=n_max, weyl=weyl)


# -- model solutions on the head segment -------------------------------------------

class ModelTable:
    """``C~(x, lam)`` on the head segment for a fixed set of ``lam``.

    States are stored at every step node of a uniform grid; values elsewhere
    come from one partial step.  Integrals of products ``C~ C~`` use a
    6-point Gauss rule inside every step.
    """

    def __init__(self, ts: TimeScale, model: Potential, lam, substeps: int | None = None,
                 grid: int = DEFAULT_GRID):
        if not ts.is_segment(0):
            raise GridError("the head block is not a segment")
        self.a, self.b = ts.blocks[0]
        self.lam = np.asarray(lam, dtype=float)
        G = grid - 1
        if substeps is None:
            s = solver(ts, model)
            span = float(np.max(np.abs(self.lam - model.values_min()))) if self.lam.size else 0.0
            need = (self.b - self.a) * math.sqrt(span) / s.max_phase_step
            substeps = max(s.min_substeps, int(math.ceil(need / G)))
            substeps = 1 << (substeps - 1).bit_length()
        self.steps = SegmentSteps(self.a, self.b, model.spline(0), G * substeps)
        y0 = np.zeros((2, self.lam.size))
        y0[0] = 1.0
        self.Y, _ = cumulative_states(self.steps, self.lam, y0, np.zeros_like(y0))
        self._cum = {}

    def _locate(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        span = self.b - self.a
        if np.any(x < self.a - 1e-12 * span) or np.any(x > self.b + 1e-12 * span):
            raise GridError("evaluation point outside the head segment")
        st = self.steps
        idx = np.clip(np.floor((x - st.x0) / st.h + 1e-9).astype(int), 0, st.n_steps - 1)
        return idx, x - st.nodes[idx]

    def _values(self, lam_idx, idx, hpart):
        """``(C~, C~')`` of shape ``(len(lam_idx), P)`` after a partial step."""
        e11, e12, e21, e22, *_ = self.steps.partial(self.lam[lam_idx], idx, hpart)
        y0 = self.Y[idx][:, 0, lam_idx].T
        y1 = self.Y[idx][:, 1, lam_idx].T
        return e11 * y0 + e12 * y1, e21 * y0 + e22 * y1

    def solutions(self, x, lam_idx=None):
        lam_idx = np.arange(self.lam.size) if lam_idx is None else np.asarray(lam_idx)
        idx, hp = self._locate(x)
        return self._values(lam_idx, idx, hp)

    def _gauss_products(self, ia, ib, idx, width):
        tot = 0.0
        for u, w in zip(_GL_X, _GL_W):
            ca, _ = self._values(ia, idx, u * width)
            cb, _ = self._values(ib, idx, u * width)
            tot = tot + w * ca * cb
        return tot * width

    def cross_integral(self, x, ia, ib):
        """``int_{a_1}^x C~(t, lam_ia) C~(t, lam_ib) dt`` for index pairs, shape ``(pairs, P)``."""
        ia = np.asarray(ia, dtype=int)
        ib = np.asarray(ib, dtype=int)
        key = (ia.tobytes(), ib.tobytes())
        if key not in self._cum:
            st = self.steps
            nodes = np.arange(st.n_steps)
            per = self._gauss_products(ia, ib, nodes, np.full(st.n_steps, st.h))
            self._cum[key] = np.concatenate([np.zeros((ia.size, 1)), np.cumsum(per, axis=1)], axis=1)
        cum = self._cum[key]
        idx, hp = self._locate(x)
        return cum[:, idx] + self._gauss_products(ia, ib, idx, hp)


def _near(la, lb, eps):
    return np.abs(la - lb) <= eps * (1.0 + np.abs(la) + np.abs(lb))


def d_kernel(table: ModelTable, x, i: int, j: int, eps: float = 1e-6) -> float:
    """``D~(x, lam_i, lam_j) = int_{a_1}^x C~(t, lam_i) C~(t, lam_j) dt``.

    Far from the diagonal the Wronskian quotient
    ``(C~_i C~_j' - C~_i' C~_j) / (lam_i - lam_j)`` is used; closer than
    ``eps`` (relative) the integral is evaluated by quadrature.
    """
    li, lj = table.lam[i], table.lam[j]
    if _near(li, lj, eps):
        return float(table.cross_integral(x, [i], [j])[0, 0])
    c, dc = table.solutions(x, [i, j])
    return float((c[0, 0] * dc[1, 0] - dc[0, 0] * c[1, 0]) / (li - lj))


def _kernel_matrix(table: ModelTable, x, rows, cols, near_pairs, near_vals, eps):
    """``D~`` for ``rows x cols`` at every ``x``; shape ``(P, R, K)``."""
    c, dc = table.solutions(x)
    lr = table.lam[rows]
    lc = table.lam[cols]
    num = c[rows].T[:, :, None] * dc[cols].T[:, None, :] - dc[rows].T[:, :, None] * c[cols].T[:, None, :]
    diff = lr[:, None] - lc[None, :]
    near = _near(lr[:, None], lc[None, :], eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        D = num / np.where(near, 1.0, diff)[None]
    if near_pairs is not None:
        r, k = near_pairs
        D[:, r, k] = near_vals.T
    return D


# -- main equation --------------------------------------------------------------

@dataclass
class MainEquationSystem:
    """Everything needed to assemble ``I + H~(x)`` at any ``x`` of the head segment.

    Arrays indexed ``(n, i)`` are stored flat as ``2 n + i`` with 0-based ``n``.
    """

    ts: TimeScale
    model: Potential
    theta: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    chi: np.ndarray
    grid: np.ndarray
    table: ModelTable
    eps_d: float
    lambda_star: float
    model_lambda1: np.ndarray
    model_weights: np.ndarray

    @property
    def n_max(self) -> int:
        return self.xi.size

    @property
    def size(self) -> int:
        return 2 * self.xi.size

    def _near_pairs(self):
        th = self.theta
        near = _near(th[:, None], th[None, :], self.eps_d)
        return np.nonzero(near)

    def kernel(self, x):
        """``D~(x, theta_a, theta_b)`` for all index pairs, shape ``(P, 2n, 2n)``."""
        idx = np.arange(self.size)
        pairs = self._near_pairs()
        vals = self.table.cross_integral(x, pairs[0], pairs[1])
        return _kernel_matrix(self.table, x, idx, idx, pairs, vals, self.eps_d)

    def assemble(self, x):
        """``(I + H~(x), psi~(x), C~(x, theta))`` for an array of ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = self.n_max
        D = self.kernel(x)
        R = D * self.alpha[None, None, :]
        R4 = R.reshape(x.size, n, 2, n, 2)
        r0 = R4[:, :, 0, :, :]
        r1 = R4[:, :, 1, :, :]
        chi = self.chi[None, :, None]
        xi = self.xi[None, None, :]
        H = np.empty_like(R4)
        diff = r0 - r1
        H[:, :, 0, :, 0] = chi * diff[..., 0] * xi
        H[:, :, 0, :, 1] = chi * (diff[..., 0] - diff[..., 1])
        H[:, :, 1, :, 0] = r1[..., 0] * xi
        H[:, :, 1, :, 1] = r1[..., 0] - r1[..., 1]
        A = H.reshape(x.size, 2 * n, 2 * n) + np.eye(2 * n)[None]
        c, _ = self.table.solutions(x, np.arange(self.size))
        c = c.T.reshape(x.size, n, 2)
        rhs = np.empty_like(c)
        rhs[..., 0] = self.chi[None, :] * (c[..., 0] - c[..., 1])
        rhs[..., 1] = c[..., 1]
        return A, rhs.reshape(x.size, 2 * n), c.reshape(x.size, 2 * n)


def _common_cut(lam, lam_m, n: int, single_branch: bool) -> int:
    """Largest ``k <= n`` where both pole lists share a wide gap after their ``k``-th pole.

    Pairing by index is only safe when the truncated lists cover the same part
    of the axis.  With several branches, poles of different branches cluster
    (exactly so for commensurable lengths) and a cut through a cluster leaves
    a top term without its partner, which ruins the truncated sum.  The
    common gap must be at least ``CUT_MARGIN`` of the local pole spacing.  A
    lone segment has one branch, so its lists can be cut anywhere.
    """
    if single_branch:
        return n
    for k in range(min(n, lam.size - 1, lam_m.size - 1), 0, -1):
        gap = min(lam[k], lam_m[k]) - max(lam[k - 1], lam_m[k - 1])
        j = max(k - 4, 0)
        spacing = (lam[k] - lam[j]) / (k - j)
        if gap > CUT_MARGIN * spacing:
            return k
    raise DataLengthError("data and model poles never share a cut; supply more data")


def build_main_equation(ts: TimeScale, model: Potential, data: SpectralInput,
                        options: InverseOptions | None = None) -> MainEquationSystem:
    """Pair the data with the model problem's spectral data and tabulate ``C~``."""
    opt = options or InverseOptions()
    if model.ts.blocks != ts.blocks:
        raise ModelMismatchError("the model potential lives on a different time scale")
    if not ts.is_segment(0):
        raise GridError("main-equation recovery needs a leading segment")
    n = min(opt.n_max, data.n_max)
    if n < 1 or data.lambda1.size < n:
        raise DataLengthError(f"need {n} data pairs, got {data.lambda1.size}")
    msd = spectral_data(ts, model, count=n + 1)
    n = _common_cut(data.lambda1, msd.lambda1, n, ts.n_blocks == 1)
    lam_m, alpha_m = msd.lambda1[:n], msd.weights[:n]
    lam = data.lambda1[:n]
    alp = data.weights[:n]
    xi = np.abs(np.sqrt(lam.astype(complex)) - np.sqrt(lam_m.astype(complex))) + np.abs(alp - alpha_m)
    with np.errstate(divide="ignore"):
        chi = np.where(xi > 0, 1.0 / xi, 0.0)
    theta = np.column_stack([lam, lam_m]).ravel()
    alpha = np.column_stack([alp, alpha_m]).ravel()
    lam_star = float(theta.min()) - 1.0
    table = ModelTable(ts, model, np.append(theta, lam_star), grid=opt.grid)
    a, b = ts.blocks[0]
    return MainEquationSystem(
        ts, model, theta, alpha, xi, chi, np.linspace(a, b, opt.grid), table,
        opt.eps_d, lam_star, lam_m, alpha_m,
    )


@dataclass
class MainEquationSolution:
    """``psi`` and ``C_{ni}`` at the points ``x``, with solve diagnostics."""

    x: np.ndarray
    psi: np.ndarray
    C: np.ndarray
    residual: np.ndarray
    condition: np.ndarray

    def C0(self, n: int) -> np.ndarray:
        """``C(x, lam_{n1})`` for 0-based ``n``."""
        return self.C[:, 2 * n]


def _solve_chunk(sys: MainEquationSystem, xs, condition: bool):
    A, rhs, _ = sys.assemble(xs)
    try:
        sol = np.linalg.solve(A, rhs[..., None])[..., 0]
        r = rhs - np.einsum("pij,pj->pi", A, sol)
        sol = sol + np.linalg.solve(A, r[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"main equation singular near x={xs[0]:.6g}") from exc
    r = rhs - np.einsum("pij,pj->pi", A, sol)
    top = np.max(np.abs(rhs), axis=1)
    rel = np.max(np.abs(r), axis=1) / np.where(top > 0, top, 1.0)
    cond = np.linalg.cond(A, 1) if condition else np.full(xs.size, np.nan)
    p4 = sol.reshape(xs.size, -1, 2)
    c = np.empty_like(p4)
    c[..., 1] = p4[..., 1]
    c[..., 0] = sys.xi[None, :] * p4[..., 0] + p4[..., 1]
    return sol, c.reshape(xs.size, -1), rel, cond


def solve_main_equation(sys: MainEquationSystem, x=None, options: InverseOptions | None = None,
                        condition: bool = True) -> MainEquationSolution:
    """Dense LU solve per point with one step of iterative refinement.

    Chunks of points are independent and are spread over ``options.threads``
    worker threads (LAPACK releases the GIL).
    """
    opt = options or InverseOptions()
    x = sys.grid if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    chunks = [x[lo:lo + opt.chunk] for lo in range(0, x.size, opt.chunk)]
    # fill the shared quadrature cache before going parallel
    sys.kernel(x[:1])
    workers = max(1, int(opt.threads or 1))
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda xs: _solve_chunk(sys, xs, condition), chunks))
    else:
        parts = [_solve_chunk(sys, xs, condition) for xs in chunks]
    psi = np.concatenate([p[0] for p in parts])
    C = np.concatenate([p[1] for p in parts])
    res = np.concatenate([p[2] for p in parts])
    cond = np.concatenate([p[3] for p in parts])
    if not np.all(np.isfinite(psi)):
        raise SingularSystemError("non-finite main-equation solution")
    if condition and np.any(~(cond <= opt.max_condition)):
        raise SingularSystemError(f"condition estimate {np.nanmax(cond):.3g} exceeds {opt.max_condition:.1g}")
    if np.any(res > opt.residual_tol):
        raise SingularSystemError(f"relative residual {res.max():.3g} exceeds {opt.residual_tol:.1g}")
    return MainEquationSolution(x, psi, C, res, cond)


def reconstruct_C(sys: MainEquationSystem, sol: MainEquationSolution, lam_index=None) -> np.ndarray:
    """``C(x, lam)`` from the truncated series, for table entries ``lam_index``.

    Defaults to the auxiliary ``lambda_star`` below both spectra.  Returns
    shape ``(len(lam_index), P)``.
    """
    tab = sys.table
    if lam_index is None:
        lam_index = [tab.lam.size - 1]
    rows = np.asarray(lam_index)
    cols = np.arange(sys.size)
    lr = tab.lam[rows]
    near = np.nonzero(_near(lr[:, None], sys.theta[None, :], sys.eps_d))
    vals = tab.cross_integral(sol.x, rows[near[0]], cols[near[1]]) if near[0].size else None
    D = _kernel_matrix(tab, sol.x, rows, cols, near if near[0].size else None, vals, sys.eps_d)
    sign = np.tile([1.0, -1.0], sys.n_max)
    corr = np.einsum("prk,k,pk->rp", D, sys.alpha * sign, sol.C)
    c, _ = tab.solutions(sol.x, rows)
    return c - corr


def _fd_weights(offsets, order: int = 2) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at 0 (unit spacing)."""
    offsets = np.asarray(offsets, dtype=float)
    m = offsets.size
    V = np.vander(offsets, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


_CENTRAL = np.arange(-2, 3)
_ONE_SIDED = np.arange(0, 6)


def _stencils(grid: np.ndarray, refine: int):
    """Per grid point, the stencil points and weights for the second derivative."""
    h = (grid[-1] - grid[0]) / (grid.size - 1) / refine
    out = []
    for g, x in enumerate(grid):
        left = g * refine
        right = (grid.size - 1 - g) * refine
        if left >= 2 and right >= 2:
            off = _CENTRAL
        elif left < 2:
            off = _ONE_SIDED - min(left, 2)
        else:
            off = -_ONE_SIDED[::-1] + min(right, 2)
        off = off[(off >= -left) & (off <= right)]
        out.append((x + off * h, _fd_weights(off) / h**2))
    return out


@dataclass
class SegmentRecovery:
    x: np.ndarray
    q: np.ndarray
    estimates: np.ndarray
    admissible: np.ndarray
    working_lambda: np.ndarray
    residual: float
    condition: float
    xi_max: float


def recover_segment_q(sys: MainEquationSystem, options: InverseOptions | None = None) -> SegmentRecovery:
    """``q = lam + C''(x, lam) / C(x, lam)`` per working ``lam``, median-aggregated.

    ``C''`` comes from finite differences on the recovery grid.  With
    ``fd_model_correction`` the stencil's truncation error is measured on the
    model solution at the same ``lam`` (whose exact answer is ``q~``) and
    subtracted, so data generated by the model is reproduced exactly.

    The working set is the smallest ``working_set`` values of ``lambda1``
    plus ``lambda_star`` (whose ``C`` has no zeros for a potential bounded
    below by it).  At each ``x`` only estimates with
    ``|C| >= admissible * max |C|`` over the working set enter the median.
    """
    opt = options or InverseOptions()
    grid = sys.grid
    sten = _stencils(grid, max(1, int(opt.fd_refine)))
    pts = np.unique(np.concatenate([p for p, _ in sten]))
    sol = solve_main_equation(sys, pts, opt, condition=False)
    # condition numbers only on the output grid
    cond_sol = solve_main_equation(sys, grid, opt, condition=True)
    nw = min(opt.working_set, sys.n_max)
    work = np.column_stack([sol.C[:, 2 * k] for k in range(nw)] + [reconstruct_C(sys, sol)[0]])
    lam = np.append(sys.theta[0:2 * nw:2], sys.lambda_star)
    model_c, _ = sys.table.solutions(pts, list(range(0, 2 * nw, 2)) + [sys.table.lam.size - 1])
    model_c = model_c.T
    q_model = eval_segment(sys.model, 0, grid)
    pos = {v: i for i, v in enumerate(pts)}
    est = np.empty((grid.size, lam.size))
    ok = np.empty_like(est, dtype=bool)
    for g, (xp, w) in enumerate(sten):
        rows = [pos[v] for v in xp]
        cg = work[pos[grid[g]]]
        with np.errstate(divide="ignore", invalid="ignore"):
            est[g] = lam + (w @ work[rows]) / cg
        top = np.max(np.abs(cg))
        if not top > 1e-8:
            raise AllNearZeroError(f"every working C vanishes near x={grid[g]:.6g}")
        ok[g] = np.abs(cg) >= opt.admissible * top
        if opt.fd_model_correction:
            # the same stencil applied to the model solutions measures its own truncation error
            mg = model_c[pos[grid[g]]]
            with np.errstate(divide="ignore", invalid="ignore"):
                est[g] += q_model[g] - (lam + (w @ model_c[rows]) / mg)
            ok[g] &= np.abs(mg) >= opt.admissible * np.max(np.abs(mg))
    q = np.array([np.median(est[g][ok[g]]) for g in range(grid.size)])
    return SegmentRecovery(grid, q, est, ok, lam, float(max(sol.residual.max(), cond_sol.residual.max())),
                           float(np.nanmax(cond_sol.condition)), float(sys.xi.max()))


# -- leading isolated point -----------------------------------------------------

@dataclass
class PointFit:
    """Least-squares fit of ``Theta_0 / (Theta_0 - g Theta_1)`` far left on the axis."""

    q: float
    constant: float
    coefficients: np.ndarray
    basis: tuple[str, ...]
    lam: np.ndarray
    residual: float


def _point_basis(ts: TimeScale):
    """Decaying correction terms for the fit after the known divergent part is removed."""
    rest_has_segment = any(ts.is_segment(l) for l in range(1, ts.n_blocks))
    if rest_has_segment:
        return ("|lam|^-1/2", "|lam|^-1", "|lam|^-3/2", "|lam|^-2"), (0.5, 1.0, 1.5, 2.0)
    return ("lam^-1", "lam^-2", "lam^-3", "lam^-4", "lam^-5"), (1.0, 2.0, 3.0, 4.0, 5.0)


def _lstsq(cols, y, w=None):
    A = np.column_stack(cols)
    w = np.ones_like(y) if w is None else w
    Aw = A * w[:, None]
    s = np.max(np.abs(Aw), axis=0)
    coef, *_ = np.linalg.lstsq(Aw / s, y * w, rcond=None)
    coef = coef / s
    return coef, y - A @ coef


def _rational_fit(lam, f, g, m, free_lead: bool = False):
    """Exact fit when the rest of the scale is discrete.

    Then ``f = Theta_0 / D`` with polynomials of degrees ``m + 1`` and ``m``.
    In ``s = 1 / lam`` this is
    ``f (1 + e_1 s + .. + e_m s^m) = -g^2 / s + b_0 + b_1 s + .. + b_m s^m``,
    linear in ``e`` and ``b``; the constant of the expansion is
    ``b_0 + g^2 e_1``.  Returns ``[constant, e.., b_1..]`` and the residual.
    """
    s = 1.0 / lam
    rhs = f + g * g * lam
    cols = [f * s**k for k in range(1, m + 1)] + [-(s**k) for k in range(0, m + 1)]
    if free_lead:
        cols.append(-lam)
        rhs = f
    # rounding in f grows at least like lam^2 (cancellation in Theta_0 - g Theta_1)
    coef, res = _lstsq(cols, -rhs, lam**-2)
    if free_lead:
        return coef[-1], res
    e = coef[:m]
    b = coef[m:]
    const = b[0] + (g * g * e[0] if m else 0.0)
    return np.concatenate([[const], e, b[1:]]), res


def recover_point_q(ts: TimeScale, weyl, options: InverseOptions | None = None) -> PointFit:
    """``q(a_1)`` at a leading isolated point from the Weyl data of ``ts``.

    With ``g = a_2 - b_1`` the combination
    ``f = Theta_0 / (Theta_0 - g Theta_1) = M / (M + g)`` behaves like
    ``g^2 (q(a_1) - lam) + g sqrt(|lam|) + 1`` when a segment follows, and like
    ``g^2 (q(a_1) - lam) + g / (a_3 - a_2) + 1`` when another point follows,
    up to terms vanishing as ``lam -> -inf``.  The divergent part is removed,
    the rest is fitted on ``lam_m = -Lambda_0 2^m`` and ``q`` read off the
    constant.  A second fit with free divergent coefficients guards the model.
    """
    opt = options or InverseOptions()
    if ts.is_segment(0):
        raise GridError("the head block is a segment")
    if ts.n_blocks - ts.mu1 <= 1:
        raise GridError("no isolated point with a recoverable value")
    g = ts.gap(0)
    rest_discrete = not any(ts.is_segment(l) for l in range(1, ts.n_blocks))
    # the rational fit is exact, so it only needs two samples beyond its unknowns;
    # larger |lam| only adds rounding
    if rest_discrete:
        # cancellation grows with every peeled level, so stay just below the poles
        poles = np.asarray(getattr(weyl, "poles", np.empty(0)))
        top = min(float(poles.min()) if poles.size else 0.0, 0.0) - 1.0
        lam = top - 2.0 ** np.arange(2 * ts.n_blocks - 2)
    else:
        lam = -opt.fit_lambda0 * 2.0 ** np.arange(opt.fit_levels + 1)
    t0, t1, _, _ = weyl.pair(lam)
    f = t0 / (t0 - g * t1)
    mag = np.abs(lam)
    seg_next = ts.is_segment(1)
    names, powers = _point_basis(ts)
    decay = [mag ** -p for p in powers]
    if seg_next:
        known = -g * g * lam + g * np.sqrt(mag)
        offset = 1.0
    else:
        known = -g * g * lam
        offset = 1.0 + g / ts.gap(1)
    if rest_discrete:
        coef, res = _rational_fit(lam, f, g, ts.n_blocks - 3)
        names = tuple(f"den s^{k}" for k in range(1, ts.n_blocks - 2)) + tuple(
            f"num s^{k}" for k in range(1, ts.n_blocks - 2))
    else:
        coef, res = _lstsq([np.ones_like(lam)] + decay, f - known)
    resid = float(np.max(np.abs(res)) / max(1.0, float(np.max(np.abs(f)))))
    if resid > opt.fit_tol:
        raise FitResidualError(f"point fit residual {resid:.3g} exceeds {opt.fit_tol:.1g}")
    if rest_discrete:
        lead, _ = _rational_fit(lam, f, g, ts.n_blocks - 3, free_lead=True)
        free = np.array([lead, 0.0])
    else:
        free_cols = [lam, np.sqrt(mag), np.ones_like(lam)] + decay[:2]
        free, _ = _lstsq(free_cols, f)
    want_sqrt = g if seg_next else 0.0
    if (abs(free[0] + g * g) > opt.branch_tol * g * g
            or abs(free[1] - want_sqrt) > opt.branch_tol * max(g, 1.0)):
        raise BranchError(
            f"divergent part of the point fit is off: lam coefficient {free[0]:.6g} "
            f"(expected {-g * g:.6g}), sqrt coefficient {free[1]:.6g} (expected {want_sqrt:.6g})"
        )
    q = (coef[0] - offset) / (g * g)
    return PointFit(float(q), float(coef[0]), coef, ("1",) + names, lam, resid)


# -- peeling ---------------------------------------------------------------------

def _head_state(ts: TimeScale, head_q, lam, grid: int):
    """``(F, dF)`` at ``a_2``: columns ``(C, S)``, rows ``(y, y^Delta)``; shapes ``(2, 2, L)``.

    Both carry a common positive per-``lam`` factor when the head is a segment.
    """
    g = ts.gap(0)
    L = lam.size
    if ts.is_segment(0):
        samples = np.asarray(head_q, dtype=float)
        head = validate([ts.blocks[0]])
        p = Potential(head, (samples,), {})
        st = solver(head, p).run(lam)
        F = st.right[0]
        dF = st.dright[0]
        qb = float(samples[-1])
    else:
        F = np.zeros((2, 2, L))
        F[0, 0] = F[1, 1] = 1.0
        dF = np.zeros_like(F)
        qb = float(head_q)
    u = qb - lam
    J = np.array([[np.ones(L), np.full(L, g)], [g * u, 1.0 + g * g * u]])
    dJ = np.array([[np.zeros(L), np.zeros(L)], [np.full(L, -g), np.full(L, -g * g)]])
    Fa = np.einsum("ijl,jkl->ikl", J, F)
    dFa = np.einsum("ijl,jkl->ikl", dJ, F) + np.einsum("ijl,jkl->ikl", J, dF)
    return Fa, dFa


def _tail_pair(ts, head_q, weyl, grid):
    """``(Theta_0, Theta_1)`` of the tail and their derivatives, up to a positive factor.

    With ``Phi = S + M C`` the tail's Weyl function is ``Phi(a_2) / Phi^Delta(a_2)``;
    clearing ``Theta_1`` gives the entire pair
    ``num_0 = Theta_1 S - Theta_0 C`` and ``num_1 = Theta_1 S^Delta - Theta_0 C^Delta``,
    and by the Wronskian these equal ``-Theta_0`` and ``Theta_1`` of the tail.
    """

    def parts(lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if hasattr(weyl.pair, "parts"):
            (t0, t1, dt0, dt1), (a0, a1) = weyl.pair.parts(lam)
        else:
            t0, t1, dt0, dt1 = weyl.pair(lam)
            a0, a1 = np.abs(t0), np.abs(t1)
        F, dF = _head_state(ts, head_q, lam, grid)
        C, Cd, S, Sd = F[0, 0], F[1, 0], F[0, 1], F[1, 1]
        dC, dCd, dS, dSd = dF[0, 0], dF[1, 0], dF[0, 1], dF[1, 1]
        n0 = t1 * S - t0 * C
        n1 = t1 * Sd - t0 * Cd
        dn0 = dt1 * S + t1 * dS - dt0 * C - t0 * dC
        dn1 = dt1 * Sd + t1 * dSd - dt0 * Cd - t0 * dCd
        # magnitudes the results were cancelled from, carried through every peel
        size1 = a1 * np.abs(Sd) + a0 * np.abs(Cd)
        size0 = a1 * np.abs(S) + a0 * np.abs(C)
        return (-n0, n1, -dn0, dn1), (size0, size1)

    def pair(lam):
        return parts(lam)[0]

    pair.parts = parts
    return pair


def _pole_floor(pair, start: float, reach: float = 1e6, trust: float = 1e-8) -> float:
    """A point below every trustworthy real zero of the tail's ``Theta_1``.

    Far left, ``Theta_1`` of the tail is an exponentially small difference of
    large products, so the downward scan stops once it cancels below ``trust``.
    """
    lam = start - np.concatenate([[0.0], np.geomspace(1.0, reach, 160)])
    (_, v, _, _), (_, size) = pair.parts(lam)
    good = np.abs(v) > trust * size
    if not good[0]:
        return float(start)
    stop = np.argmin(good) if not np.all(good) else lam.size
    v = v[:stop]
    ch = np.nonzero(np.sign(v[:-1]) != np.sign(v[1:]))[0]
    if ch.size == 0:
        return float(start)
    return float(lam[ch.max() + 1] - 1.0)


def peel(ts: TimeScale, head_q, weyl, options: InverseOptions | None = None):
    """Weyl data of ``tail(ts, 2)`` once ``q`` on the head block is known.

    ``head_q`` is the sample array for a head segment or the scalar value at
    a head point.  Poles are zeros of the tail's ``Theta_1``; residues are
    ``-Theta_0 / Theta_1'`` there.
    """
    opt = options or InverseOptions()
    core = ts.core_blocks(2)
    if len(core) <= 1:
        raise PoleExtractionError("nothing left to peel: the head block is all of T^{0^2}")
    tail_ts = tail(ts, 2)
    pair = _tail_pair(ts, head_q, weyl, opt.grid)

    def fun(lam):
        _, n1, _, dn1 = pair(lam)
        return n1, dn1

    start = float(min(weyl.poles.min() if weyl.poles.size else 0.0, 0.0)) - 1.0
    lo = _pole_floor(pair, start)
    if tail_ts.n_segments:
        count = opt.n_max
        step = min(math.pi / d for d in tail_ts.segment_lengths) / 8.0
    else:
        count = tail_ts.n_points - 2
        step = 0.05
    try:
        if count > 0:
            poles, _ = find_zeros(fun, lo, count=count, dt=step)
        else:
            poles = np.empty(0)
    except (RootCountError, ToleranceError) as exc:
        raise PoleExtractionError(f"pole scan failed: {exc}") from exc
    if poles.size != count:
        raise PoleExtractionError(f"found {poles.size} poles, expected {count}")
    (m0, _, _, dm1), (size0, _) = pair.parts(poles)
    with np.errstate(divide="ignore", invalid="ignore"):
        res = -m0 / dm1
    shared = np.abs(m0) <= 1e-13 * np.maximum(size0, np.finfo(float).tiny)
    if np.any(shared) or np.any(~(res > 0)):
        raise CancellationError(f"numerator and denominator vanish together near {poles[shared | ~(res > 0)]}")
    return WeylData(tail_ts, pair, poles, res, "peeled")


# -- full recursion -----------------------------------------------------------------

@dataclass
class InverseResult:
    potential: Potential
    diagnostics: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"potential": self.potential.to_json(), "diagnostics": self.diagnostics}


def _restrict(p: Potential, sub: TimeScale, offset: int) -> Potential:
    """The part of ``p`` living on ``sub = tail(p.ts, offset + 1)``."""
    ts = p.ts
    samples = tuple(p.segment_samples[k] for k, l in enumerate(ts.segment_blocks) if l >= offset)
    keep = set(sub.core_points())
    pts = {l - offset: v for l, v in p.point_values.items() if l >= offset and l - offset in keep}
    return Potential(sub, samples, pts)


def mean_model(cur: TimeScale, inp: SpectralInput, grid: int = DEFAULT_GRID) -> Potential:
    """Zero model except for a constant on the head segment, fitted to the pole shift.

    A zero model facing data whose head mean is nonzero leaves ``xi_n`` of
    order ``1/n`` and the truncation error collects at the head's right end.
    On a lone segment the poles behave like ``(pi (n - 1/2) / d)^2 + mean(q)``,
    so the median shift over the upper half of the data estimates the mean.
    Otherwise a zero-model pole whose eigenfunction lives on the head (share
    ``f = alpha~ int_head C~^2``) moves by about ``c f`` when the head carries
    the constant ``c``.  Each such pole in the upper half is matched to the
    data pole nearest in ``(sqrt(lam), alpha)``, which also separates poles of
    different branches that sit close together.
    """
    base = zero_potential(cur, grid)
    lam = inp.lambda1[: inp.n_max]
    if lam.size < 8:
        return base
    if cur.n_blocks == 1:
        n = np.arange(1, lam.size + 1)
        c = float(np.median((lam - (np.pi * (n - 0.5) / cur.segment_length(0)) ** 2)[lam.size // 2:]))
    else:
        msd = spectral_data(cur, base, count=lam.size)
        lam_m, alpha_m = msd.lambda1, msd.weights
        idx = np.arange(lam.size // 2, lam.size)
        table = ModelTable(cur, base, lam_m[idx], grid=grid)
        share = alpha_m[idx] * table.cross_integral(table.b, np.arange(idx.size), np.arange(idx.size))[:, 0]
        head = idx[share > 0.9]
        if head.size < 4:
            return base
        rho, rho_m = np.sqrt(np.abs(lam)), np.sqrt(np.abs(lam_m))
        alp = inp.weights[: inp.n_max]
        c = 0.0
        for _ in range(3):
            # shifting lam by c moves rho by about c / (2 rho)
            cost = (np.abs(rho[None, :] - rho_m[head, None] - c / (2 * rho_m[head, None]))
                    + np.abs(alp[None, :] - alpha_m[head, None]))
            match = np.argmin(cost, axis=1)
            c = float(np.median(lam[match] - lam_m[head]))
    samples = list(base.segment_samples)
    samples[0] = np.full(samples[0].size, c)
    return Potential(cur, tuple(samples), dict(base.point_values))


def run_inverse(ts: TimeScale, data, model: Potential | None = None,
                options: InverseOptions | None = None) -> InverseResult:
    """Recover ``q`` on ``T^{0^2}`` block by block.

    ``data`` is a :class:`~tsspec.weyl.WeylData` or a :class:`SpectralInput`
    (which needs its ``weyl`` handle, or ``lambda0``, once peeling is needed).
    """
    opt = options or InverseOptions()
    if opt.model_shift not in ("mean", "none"):
        raise ValueError(f"model_shift must be 'mean' or 'none', got {opt.model_shift!r}")
    fit_model = model is None and opt.model_shift == "mean"
    model = zero_potential(ts, opt.grid) if model is None else model
    if model.ts.blocks != ts.blocks:
        raise ModelMismatchError("the model potential lives on a different time scale")
    head_input = None
    if isinstance(data, SpectralInput):
        head_input = data
        weyl = data.weyl
        if weyl is None and len(ts.core_blocks(2)) > 1:
            if data.lambda0 is None:
                raise DataLengthError("peeling needs lambda0 or a Weyl evaluator")
            weyl = weyl_from_spectra(ts, data.lambda0, data.lambda1, geometry_constants(ts), data.weights)
    elif isinstance(data, WeylData):
        weyl = data
    else:
        raise TypeError("data must be SpectralInput or WeylData")

    segments = {}
    points = {}
    diags = []
    cur = ts
    offset = 0
    for it in range(opt.max_iterations):
        if cur.is_segment(0):
            inp = head_input if (it == 0 and head_input is not None) else SpectralInput.from_weyl(weyl)
            sub_model = _restrict(model, cur, offset)
            if fit_model:
                sub_model = mean_model(cur, inp, opt.grid)
            sys = build_main_equation(cur, sub_model, inp, opt)
            rec = recover_segment_q(sys, opt)
            head = rec.q
            segments[offset] = head
            diags.append({"block": offset, "kind": "segment", "n_max": sys.n_max,
                          "residual": rec.residual, "condition": rec.condition, "xi_max": rec.xi_max})
        else:
            fit = recover_point_q(cur, weyl, opt)
            head = fit.q
            points[offset] = head
            diags.append({"block": offset, "kind": "point", "q": head, "fit_residual": fit.residual})
        log.info("recovered block %d (%s)", offset, diags[-1]["kind"])
        if len(cur.core_blocks(2)) <= 1:
            break
        try:
            weyl = peel(cur, head, weyl, opt)
        except (CancellationError, PoleExtractionError) as exc:
            if not cur.is_segment(0):
                raise
            raise type(exc)(
                f"{exc}; peeling past a recovered segment magnifies the head error roughly like "
                f"lam^3, beyond what the main equation delivers at n_max={diags[-1]['n_max']}"
            ) from exc
        diags[-1]["tail_poles"] = int(weyl.poles.size)
        cur = tail(cur, 2)
        offset += 1
    else:
        raise IterationLimitError(f"no termination after {opt.max_iterations} blocks")
    samples = tuple(np.asarray(segments[l]) for l in ts.segment_blocks)
    return InverseResult(Potential(ts, samples, points), diags)
