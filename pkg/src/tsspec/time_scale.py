"""Time scales made of finitely many segments and isolated points.

A time scale is stored as an ordered tuple of blocks ``(a_l, b_l)``; a block
with ``a_l < b_l`` is a segment and a block with ``a_l == b_l`` is an isolated
point.  Block indices are 0-based everywhere in this package.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import (
    DegenerateError,
    EmptyCoreError,
    NonFiniteError,
    NotInScaleError,
    OverlapError,
)

__all__ = [
    "PointClass",
    "TimeScale",
    "validate",
    "sigma",
    "sigma_minus",
    "classify",
    "truncated_core",
    "tail",
]


class PointClass(enum.Enum):
    ISOLATED = "isolated"
    LEFT_ISOLATED_RIGHT_DENSE = "left-isolated+right-dense"
    RIGHT_ISOLATED_LEFT_DENSE = "right-isolated+left-dense"
    DENSE = "dense-interior"


@dataclass(frozen=True)
class TimeScale:
    blocks: tuple[tuple[float, float], ...]
    # True for tails that are only valid as a terminus of the peeling recursion
    terminal: bool = False
    segment_blocks: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        segs = tuple(i for i, (a, b) in enumerate(self.blocks) if a < b)
        object.__setattr__(self, "segment_blocks", segs)

    @property
    def n_segments(self) -> int:
        return len(self.segment_blocks)

    @property
    def n_points(self) -> int:
        return len(self.blocks) - len(self.segment_blocks)

    N = n_segments
    M = n_points

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def mu0(self) -> int:
        a, b = self.blocks[0]
        return int(a == b)

    @property
    def mu1(self) -> int:
        a, b = self.blocks[-1]
        return int(a == b)

    def is_segment(self, l: int) -> bool:
        a, b = self.blocks[l]
        return a < b

    def gap(self, l: int) -> float:
        """Distance from ``b_l`` to ``a_{l+1}``."""
        return self.blocks[l + 1][0] - self.blocks[l][1]

    def segment_length(self, k: int) -> float:
        a, b = self.blocks[self.segment_blocks[k]]
        return b - a

    @property
    def segment_lengths(self) -> tuple[float, ...]:
        return tuple(self.segment_length(k) for k in range(self.n_segments))

    @property
    def start(self) -> float:
        return self.blocks[0][0]

    @property
    def end(self) -> float:
        return self.blocks[-1][1]

    def block_of(self, x: float) -> int:
        for l, (a, b) in enumerate(self.blocks):
            if a <= x <= b:
                return l
        raise NotInScaleError(f"{x!r} is not a point of the time scale")

    def core_blocks(self, order: int = 2) -> tuple[tuple[float, float], ...]:
        return truncated_core(self, order)

    def core_points(self) -> tuple[int, ...]:
        """Block indices of the isolated points where the potential must be given."""
        n_core = len(_strip_points(self.blocks, 2))
        return tuple(l for l in range(n_core) if not self.is_segment(l))

    def to_json(self) -> list[list[float]]:
        return [[a, b] for a, b in self.blocks]


def _strip_points(blocks, order):
    out = list(blocks)
    for _ in range(order):
        if out and out[-1][0] == out[-1][1]:
            out.pop()
    return tuple(out)


def validate(blocks: Iterable[Sequence[float]], allow_degenerate: bool = False) -> TimeScale:
    """Build a :class:`TimeScale` from ``[(a_1, b_1), ...]``.

    ``allow_degenerate`` admits tails with no segments and fewer than three
    points; those only appear as the last stage of the peeling recursion.
    """
    pairs = []
    for item in blocks:
        if len(item) != 2:
            raise OverlapError(f"block {item!r} is not a pair")
        a, b = float(item[0]), float(item[1])
        if not (math.isfinite(a) and math.isfinite(b)):
            raise NonFiniteError(f"non-finite block {item!r}")
        if a > b:
            raise OverlapError(f"block ({a}, {b}) has a > b")
        pairs.append((a, b))
    if not pairs:
        raise DegenerateError("empty time scale")
    for l in range(1, len(pairs)):
        if not pairs[l - 1][1] < pairs[l][0]:
            raise OverlapError(
                f"blocks {l - 1} and {l} overlap or touch: b={pairs[l - 1][1]} >= a={pairs[l][0]}"
            )
    ts = TimeScale(tuple(pairs), terminal=False)
    if ts.n_segments == 0 and ts.n_points < 3:
        if not allow_degenerate:
            raise DegenerateError("need at least one segment or at least three isolated points")
        ts = TimeScale(tuple(pairs), terminal=True)
    return ts


def sigma(ts: TimeScale, x: float) -> float:
    """Forward jump: the next point of ``ts`` after ``x`` (``x`` itself if right-dense)."""
    l = ts.block_of(x)
    a, b = ts.blocks[l]
    if x < b or l == ts.n_blocks - 1:
        return x
    return ts.blocks[l + 1][0]


def sigma_minus(ts: TimeScale, x: float) -> float:
    l = ts.block_of(x)
    a, b = ts.blocks[l]
    if x > a or l == 0:
        return x
    return ts.blocks[l - 1][1]


def classify(ts: TimeScale, x: float) -> PointClass:
    left = sigma_minus(ts, x) < x
    right = sigma(ts, x) > x
    if left and right:
        return PointClass.ISOLATED
    if left:
        return PointClass.LEFT_ISOLATED_RIGHT_DENSE
    if right:
        return PointClass.RIGHT_ISOLATED_LEFT_DENSE
    return PointClass.DENSE


def truncated_core(ts: TimeScale, order: int = 2) -> tuple[tuple[float, float], ...]:
    """Blocks of ``T^0`` (``order=1``) or ``T^{0^2}`` (``order=2``).

    Each step removes the maximum when it is a trailing isolated point.  A pair
    of isolated points has an empty ``T^{0^2}``, matching the recursion terminus.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    core = _strip_points(ts.blocks, order)
    if not core:
        raise EmptyCoreError("T^{0^%d} is empty" % order)
    return core


def tail(ts: TimeScale, m: int) -> TimeScale:
    """The scale ``T_m`` made of blocks ``m..N+M`` (1-based ``m``)."""
    limit = ts.n_blocks - ts.mu1
    if not 1 <= m <= max(limit, 1):
        raise IndexError(f"tail index {m} outside 1..{limit}")
    if m == 1:
        return ts
    return validate(ts.blocks[m - 1:], allow_degenerate=True)
