import math

import pytest
from hypothesis import given, strategies as st

from tsspec.errors import DegenerateError, EmptyCoreError, NonFiniteError, NotInScaleError, OverlapError
from tsspec.time_scale import PointClass, classify, sigma, sigma_minus, tail, truncated_core, validate

TOL = 1e-15


@st.composite
def scales(draw, min_blocks=1, max_blocks=6):
    """Random valid block lists with positive gaps; some blocks are points."""
    n = draw(st.integers(min_blocks, max_blocks))
    x = draw(st.floats(-5, 5))
    blocks = []
    for _ in range(n):
        length = draw(st.sampled_from([0.0, 0.0, 0.5, 1.0, 2.5]))
        blocks.append((x, x + length))
        x += length + draw(st.floats(0.25, 3.0))
    if all(a == b for a, b in blocks) and n < 3:
        blocks[0] = (blocks[0][0], blocks[0][0] + 1.0)
        x = blocks[0][1]
        for i in range(1, n):
            x += 1.0
            blocks[i] = (x, x)
    return validate(blocks)


class TestValidate:
    def test_single_segment(self):
        ts = validate([(0, math.pi)])
        assert (ts.N, ts.M, ts.mu0, ts.mu1) == (1, 0, 0, 0)

    def test_three_points(self):
        ts = validate([(0, 0), (1, 1), (2, 2)])
        assert (ts.N, ts.M, ts.mu0, ts.mu1) == (0, 3, 1, 1)

    def test_mixed(self):
        ts = validate([(0, 0), (1, 2), (3, 3)])
        assert (ts.N, ts.M, ts.mu0, ts.mu1) == (1, 2, 1, 1)
        # 0-based block index of the only segment
        assert ts.segment_blocks == (1,)

    def test_overlap(self):
        with pytest.raises(OverlapError):
            validate([(0, 1), (0.5, 2)])

    def test_touching_blocks_rejected(self):
        with pytest.raises(OverlapError):
            validate([(0, 1), (1, 2)])

    def test_reversed_block(self):
        with pytest.raises(OverlapError):
            validate([(1, 0)])

    def test_too_few_points(self):
        with pytest.raises(DegenerateError):
            validate([(0, 0), (1, 1)])

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            validate([(0, math.inf)])

    def test_degenerate_allowed_as_terminus(self):
        ts = validate([(0, 0), (1, 1)], allow_degenerate=True)
        assert ts.terminal


class TestSigma:
    ts = validate([(0, 0), (1, 2)])

    def test_gap_jump(self):
        assert sigma(self.ts, 0) == 1

    def test_dense_point(self):
        assert sigma(self.ts, 1.5) == 1.5

    def test_max_convention(self):
        assert sigma(self.ts, 2) == 2

    def test_sigma_minus(self):
        assert sigma_minus(self.ts, 1) == 0
        assert sigma_minus(self.ts, 0) == 0

    def test_not_in_scale(self):
        with pytest.raises(NotInScaleError):
            sigma(self.ts, 0.5)

    def test_classify(self):
        ts = validate([(0, 0), (1, 2), (3, 3), (4, 4)])
        assert classify(ts, 3) is PointClass.ISOLATED
        assert classify(ts, 1) is PointClass.LEFT_ISOLATED_RIGHT_DENSE
        assert classify(ts, 2) is PointClass.RIGHT_ISOLATED_LEFT_DENSE
        assert classify(ts, 1.5) is PointClass.DENSE


class TestCore:
    def test_three_points(self):
        assert truncated_core(validate([(0, 0), (1, 1), (2, 2)]), 2) == ((0.0, 0.0),)

    def test_segment_untouched(self):
        assert truncated_core(validate([(0, math.pi)]), 2) == ((0.0, math.pi),)

    def test_segment_then_point(self):
        assert truncated_core(validate([(0, 1), (2, 2)]), 2) == ((0.0, 1.0),)

    def test_order_one(self):
        ts = validate([(0, 0), (1, 1), (2, 2)])
        assert truncated_core(ts, 1) == ((0.0, 0.0), (1.0, 1.0))

    def test_empty_core(self):
        ts = validate([(0, 0), (1, 1)], allow_degenerate=True)
        with pytest.raises(EmptyCoreError):
            truncated_core(ts, 2)

    def test_core_points(self):
        ts = validate([(0, 0), (1, 2), (3, 3), (4, 4)])
        assert ts.core_points() == (0,)


class TestTail:
    def test_mixed(self):
        ts = validate([(0, 0), (1, 2), (3, 3)])
        assert tail(ts, 2).blocks == ((1.0, 2.0), (3.0, 3.0))

    def test_identity(self):
        ts = validate([(0, 0), (1, 2), (3, 3)])
        assert tail(ts, 1) is ts

    def test_discrete_terminus(self):
        t = tail(validate([(0, 1), (2, 2), (3, 3)]), 2)
        assert (t.N, t.M) == (0, 2)
        assert t.terminal

    def test_out_of_range(self):
        ts = validate([(0, 0), (1, 2), (3, 3)])
        with pytest.raises(IndexError):
            tail(ts, 3)
        with pytest.raises(IndexError):
            tail(ts, 0)


class TestProperties:
    @given(scales())
    def test_sigma_inverts_at_isolated_points(self, ts):
        for l in range(1, ts.n_blocks - 1):
            a, b = ts.blocks[l]
            if a == b:
                assert sigma_minus(ts, sigma(ts, a)) == a
                assert sigma(ts, sigma_minus(ts, a)) == a

    @given(scales(), st.data())
    def test_tail_idempotent(self, ts, data):
        m = data.draw(st.integers(1, max(ts.n_blocks - ts.mu1, 1)))
        t = tail(ts, m)
        assert tail(t, 1).blocks == t.blocks

    @given(scales())
    def test_blocks_and_gaps(self, ts):
        for l, (a, b) in enumerate(ts.blocks):
            for x in (a, b, 0.5 * (a + b)):
                assert ts.block_of(x) == l
            if l + 1 < ts.n_blocks:
                mid = 0.5 * (b + ts.blocks[l + 1][0])
                with pytest.raises(NotInScaleError):
                    ts.block_of(mid)

    @given(scales())
    def test_core_point_count(self, ts):
        trailing = 0
        for a, b in reversed(ts.blocks):
            if a != b or trailing == 2:
                break
            trailing += 1
        assert len(ts.core_points()) == ts.M - trailing

    @given(scales())
    def test_gap_positive(self, ts):
        for l in range(ts.n_blocks - 1):
            assert ts.gap(l) > TOL
