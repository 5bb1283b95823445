"""Weyl functions ``M = -Theta_0 / Theta_1`` with their poles and residues.

A :class:`WeylData` carries a *pair* evaluator returning
``(Theta_0, Theta_1, Theta_0', Theta_1')`` up to a common positive factor per
``lam``.  Ratios, signs and zeros are all the inverse stage needs, and keeping
the pair (rather than ``M`` alone) lets zero searches run on entire functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .asymptotics import AsymptoticConstants, hadamard_theta
from .forward import solver, spectral_data
from .potential import Potential
from .time_scale import TimeScale

__all__ = ["WeylData", "weyl_direct", "weyl_from_spectra", "PROVENANCE"]

PROVENANCE = ("direct-theta", "hadamard", "peeled")


@dataclass
class WeylData:
    ts: TimeScale
    pair: Callable
    poles: np.ndarray
    residues: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.poles = np.asarray(self.poles, dtype=float)
        self.residues = np.asarray(self.residues, dtype=float)

    def __call__(self, lam):
        """``M(lam)`` off the poles."""
        t0, t1, _, _ = self.pair(np.atleast_1d(np.asarray(lam, dtype=float)))
        m = -t0 / t1
        return m[0] if np.ndim(lam) == 0 else m

    def inverse(self, lam):
        """``1 / M(lam)``, finite at the poles."""
        t0, t1, _, _ = self.pair(np.atleast_1d(np.asarray(lam, dtype=float)))
        m = -t1 / t0
        return m[0] if np.ndim(lam) == 0 else m


def weyl_direct(ts: TimeScale, p: Potential, count: int | None = None) -> WeylData:
    """Weyl data from forward propagation; ``count`` poles (all of them if ``N = 0``)."""
    s = solver(ts, p)
    if ts.n_segments and count is None:
        raise ValueError("need a pole count for an infinite spectrum")
    # the full spectral data run cross-checks the poles against interlacing
    sd = spectral_data(ts, p, count=count)
    poles, res = sd.lambda1, sd.weights

    def pair(lam):
        return s.theta(np.atleast_1d(np.asarray(lam, dtype=float)), scaled=True)

    return WeylData(ts, pair, poles, res, "direct-theta")


def weyl_from_spectra(ts: TimeScale, lambda0, lambda1, consts: AsymptoticConstants,
                      weights=None) -> WeylData:
    """Weyl data rebuilt from both spectra through zero products.

    Residues are taken from ``weights`` when given, otherwise from the
    reconstructed characteristic functions.
    """
    th0 = hadamard_theta(lambda0, 0, ts, consts)
    th1 = hadamard_theta(lambda1, 1, ts, consts)

    def pair(lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        l0, s0 = th0.log_abs(lam)
        l1, s1 = th1.log_abs(lam)
        top = np.maximum(l0, l1)
        # both vanish where the two zero sets share a float
        top = np.where(np.isfinite(top), top, 0.0)
        h = 1e-6 * (1 + np.abs(lam))
        out = [s0 * np.exp(l0 - top), s1 * np.exp(l1 - top)]
        for th in (th0, th1):
            lp, sp = th.log_abs(lam + h)
            lm, sm = th.log_abs(lam - h)
            out.append((sp * np.exp(lp - top) - sm * np.exp(lm - top)) / (2 * h))
        return tuple(out)

    poles = np.asarray(lambda1, dtype=float)
    if weights is None:
        t0, _, _, dt1 = pair(poles)
        weights = -t0 / dt1
    return WeylData(ts, pair, poles, weights, "hadamard")
