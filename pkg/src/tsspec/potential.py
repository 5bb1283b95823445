"""Real potentials on ``T^{0^2}``: uniform samples on segments, scalars at points."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    MissingPointValueError,
    NonFiniteError,
    OutOfRangeError,
    ShapeMismatchError,
)
from .time_scale import TimeScale

__all__ = [
    "Potential",
    "Distance",
    "DEFAULT_GRID",
    "from_functions",
    "zero_potential",
    "eval_segment",
    "distance",
    "relative_l2_error",
]

DEFAULT_GRID = 129
MIN_GRID = 9


@dataclass(frozen=True, eq=False)
class Potential:
    """Potential bound to a time scale.

    ``segment_samples[k]`` holds ``G_k >= 9`` uniform samples on the k-th
    segment, endpoints included.  ``point_values`` maps block index to the value
    at an isolated point of ``T^{0^2}``; no other points may carry a value.
    Objects hash by identity so they can key solver caches.
    """

    ts: TimeScale
    segment_samples: tuple[np.ndarray, ...]
    point_values: Mapping[int, float]
    _splines: tuple = field(init=False, repr=False)

    def __post_init__(self):
        ts = self.ts
        if len(self.segment_samples) != ts.n_segments:
            raise ShapeMismatchError(
                f"{len(self.segment_samples)} sample sets for {ts.n_segments} segments"
            )
        samples = []
        for k, s in enumerate(self.segment_samples):
            arr = np.asarray(s, dtype=float).copy()
            if arr.ndim != 1 or arr.size < MIN_GRID:
                raise ShapeMismatchError(f"segment {k} needs at least {MIN_GRID} samples")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"segment {k} has non-finite samples")
            arr.setflags(write=False)
            samples.append(arr)
        required = set(ts.core_points())
        vals = {}
        for key, v in dict(self.point_values).items():
            l = int(key)
            if l not in required:
                raise ShapeMismatchError(f"block {l} is not an isolated point of T^{{0^2}}")
            v = float(v)
            if not np.isfinite(v):
                raise NonFiniteError(f"non-finite value at block {l}")
            vals[l] = v
        missing = required - set(vals)
        if missing:
            raise MissingPointValueError(f"no potential value at blocks {sorted(missing)}")
        object.__setattr__(self, "segment_samples", tuple(samples))
        object.__setattr__(self, "point_values", dict(sorted(vals.items())))
        splines = []
        for k, arr in enumerate(samples):
            a, b = ts.blocks[ts.segment_blocks[k]]
            splines.append(CubicSpline(np.linspace(a, b, arr.size), arr))
        object.__setattr__(self, "_splines", tuple(splines))

    def grid(self, k: int) -> np.ndarray:
        a, b = self.ts.blocks[self.ts.segment_blocks[k]]
        return np.linspace(a, b, self.segment_samples[k].size)

    def spacing(self, k: int) -> float:
        return self.ts.segment_length(k) / (self.segment_samples[k].size - 1)

    def spline(self, k: int) -> CubicSpline:
        return self._splines[k]

    def segment_integral(self, k: int) -> float:
        a, b = self.ts.blocks[self.ts.segment_blocks[k]]
        return float(self._splines[k].integrate(a, b))

    def at_block_end(self, l: int) -> float:
        """``q(b_l)``, used by the jump matrix leaving block ``l``."""
        ts = self.ts
        if ts.is_segment(l):
            return float(self.segment_samples[ts.segment_blocks.index(l)][-1])
        try:
            return self.point_values[l]
        except KeyError:
            raise MissingPointValueError(f"q(b_{l}) is not available") from None

    def values_min(self) -> float:
        vals = [float(s.min()) for s in self.segment_samples]
        vals += list(self.point_values.values())
        return min(vals) if vals else 0.0

    def values_max(self) -> float:
        vals = [float(s.max()) for s in self.segment_samples]
        vals += list(self.point_values.values())
        return max(vals) if vals else 0.0

    def to_json(self) -> dict:
        return {
            "segments": [{"samples": s.tolist()} for s in self.segment_samples],
            "points": {str(l): v for l, v in self.point_values.items()},
        }

    @classmethod
    def from_json(cls, ts: TimeScale, obj: Mapping) -> "Potential":
        segs = [np.asarray(s["samples"], dtype=float) for s in obj.get("segments", [])]
        pts = {int(k): float(v) for k, v in obj.get("points", {}).items()}
        return cls(ts, tuple(segs), pts)


def from_functions(
    ts: TimeScale,
    segment_fn: Callable[[np.ndarray], np.ndarray] | Sequence[Callable] | None = None,
    point_fn: Callable[[float], float] | Mapping[int, float] | None = None,
    grid: int = DEFAULT_GRID,
) -> Potential:
    """Sample callables onto a :class:`Potential`.

    ``segment_fn`` is one callable for every segment or a sequence with one per
    segment; ``point_fn`` is a callable of the point coordinate or a mapping
    from block index to value.  Missing pieces default to zero.
    """
    samples = []
    for k in range(ts.n_segments):
        a, b = ts.blocks[ts.segment_blocks[k]]
        x = np.linspace(a, b, grid)
        if segment_fn is None:
            fn = None
        elif callable(segment_fn):
            fn = segment_fn
        else:
            fn = segment_fn[k]
        samples.append(np.zeros(grid) if fn is None else np.broadcast_to(fn(x), x.shape).astype(float))
    pts = {}
    for l in ts.core_points():
        if point_fn is None:
            pts[l] = 0.0
        elif callable(point_fn):
            pts[l] = float(point_fn(ts.blocks[l][0]))
        else:
            pts[l] = float(point_fn.get(l, 0.0))
    return Potential(ts, tuple(samples), pts)


def zero_potential(ts: TimeScale, grid: int = DEFAULT_GRID) -> Potential:
    return from_functions(ts, grid=grid)


def eval_segment(p: Potential, k: int, x):
    """Cubic (not-a-knot) interpolant of the k-th segment's samples."""
    a, b = p.ts.blocks[p.ts.segment_blocks[k]]
    xa = np.asarray(x, dtype=float)
    span = b - a
    if np.any(xa < a - 1e-12 * span) or np.any(xa > b + 1e-12 * span):
        raise OutOfRangeError(f"x outside segment [{a}, {b}]")
    out = p.spline(k)(np.clip(xa, a, b))
    return float(out) if np.ndim(out) == 0 else out


class Distance(NamedTuple):
    l2: float
    points: float


def _union_grids(p: Potential, p2: Potential, k: int) -> np.ndarray:
    return np.union1d(p.grid(k), p2.grid(k))


def distance(p: Potential, p2: Potential) -> Distance:
    """Root-mean-square L2 distance over segments plus max gap over point values.

    The L2 part is ``sqrt(sum_k int |q - q2|^2) / sqrt(sum_k d_k)``, a trapezoid
    rule on the union of both sample grids.  Normalising by total segment
    length (not by either potential) keeps the pair a pseudo-metric.
    """
    if p.ts.blocks != p2.ts.blocks:
        raise ShapeMismatchError("potentials live on different time scales")
    total = 0.0
    length = 0.0
    for k in range(p.ts.n_segments):
        x = _union_grids(p, p2, k)
        diff = p.spline(k)(x) - p2.spline(k)(x)
        total += float(np.trapezoid(diff * diff, x))
        length += p.ts.segment_length(k)
    l2 = float(np.sqrt(total / length)) if length > 0 else 0.0
    pts = max((abs(p.point_values[l] - p2.point_values[l]) for l in p.point_values), default=0.0)
    return Distance(l2, float(pts))


def relative_l2_error(p: Potential, reference: Potential) -> float:
    """``||q - q_ref|| / ||q_ref||`` over all segments (absolute if ``q_ref`` is 0)."""
    if p.ts.blocks != reference.ts.blocks:
        raise ShapeMismatchError("potentials live on different time scales")
    num = 0.0
    den = 0.0
    for k in range(p.ts.n_segments):
        x = _union_grids(p, reference, k)
        r = reference.spline(k)(x)
        num += float(np.trapezoid((p.spline(k)(x) - r) ** 2, x))
        den += float(np.trapezoid(r * r, x))
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))
