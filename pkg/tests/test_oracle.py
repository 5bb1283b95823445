import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsspec.errors import DegenerateError
from tsspec.forward import spectral_data, theta
from tsspec.oracle import classical_reference, discrete_pencil, discrete_solve, theta_polynomials
from tsspec.potential import from_functions, zero_potential
from tsspec.time_scale import validate

TOL = 1e-10


@st.composite
def discrete_problems(draw, min_points=3, max_points=8):
    m = draw(st.integers(min_points, max_points))
    gaps = draw(st.lists(st.floats(0.3, 3.0), min_size=m - 1, max_size=m - 1))
    xs = np.concatenate([[0.0], np.cumsum(gaps)])
    ts = validate([(x, x) for x in xs])
    qs = draw(st.lists(st.floats(-2, 2), min_size=m - 2, max_size=m - 2))
    return ts, from_functions(ts, None, dict(enumerate(qs)))


class TestDiscreteSolve:
    def test_three_points(self):
        ts = validate([(0, 0), (1, 1), (2, 2)])
        p = from_functions(ts, None, {0: 0.0})
        t0, t1 = theta_polynomials(ts, p)
        np.testing.assert_allclose(t0.coef, [2, -1], atol=TOL)
        np.testing.assert_allclose(t1.coef, [1, -1], atol=TOL)
        s0 = discrete_solve(ts, p, 0)
        s1 = discrete_solve(ts, p, 1)
        np.testing.assert_allclose(s0.spectrum, [2.0], atol=TOL)
        np.testing.assert_allclose(s1.spectrum, [1.0], atol=TOL)
        np.testing.assert_allclose(s1.weights, [1.0], atol=TOL)

    def test_four_points(self):
        ts = validate([(0, 0), (1, 1), (2, 2), (3, 3)])
        p = from_functions(ts, None, {0: 0.0, 1: 0.0})
        t0, t1 = theta_polynomials(ts, p)
        assert t0.degree() == t1.degree() == 2
        l0 = discrete_solve(ts, p, 0).spectrum
        l1 = discrete_solve(ts, p, 1).spectrum
        # frozen from the closed-form roots of the quadratics
        np.testing.assert_allclose(l0, [1.0, 3.0], atol=TOL)
        np.testing.assert_allclose(l1, [(3 - math.sqrt(5)) / 2, (3 + math.sqrt(5)) / 2], atol=TOL)
        assert l1[0] < l0[0] < l1[1] < l0[1]

    def test_rejects_segments(self):
        ts = validate([(0, 1)])
        with pytest.raises(DegenerateError):
            discrete_solve(ts, from_functions(ts), 0)

    def test_pencil_size(self):
        ts = validate([(0, 0), (1, 1), (1.5, 1.5), (3, 3), (4, 4)])
        p = from_functions(ts, None, {0: 1.0, 1: 0.0, 2: -1.0})
        pen = discrete_pencil(ts, p, 1)
        assert pen.size == 3
        np.testing.assert_allclose(pen.A, pen.A.T, atol=0)

    @given(discrete_problems(), st.floats(-3, 3))
    def test_constant_shift(self, prob, c):
        ts, p = prob
        shifted = from_functions(ts, None, {l: v + c for l, v in p.point_values.items()})
        for j in (0, 1):
            a = discrete_solve(ts, p, j).spectrum
            b = discrete_solve(ts, shifted, j).spectrum
            np.testing.assert_allclose(b, a + c, atol=1e-9)

    @given(discrete_problems())
    def test_polynomial_roots_match_pencil(self, prob):
        ts, p = prob
        for j in (0, 1):
            sol = discrete_solve(ts, p, j)
            assert sol.theta_j.degree() == ts.M - 2
            np.testing.assert_allclose(np.sort(sol.theta_j.roots().real), sol.spectrum, atol=1e-8)


class TestAgainstForward:
    @settings(max_examples=20)
    @given(discrete_problems())
    def test_spectra_and_weights(self, prob):
        ts, p = prob
        sd = spectral_data(ts, p)
        ref = discrete_solve(ts, p, 1)
        np.testing.assert_allclose(sd.lambda1, ref.spectrum, atol=TOL)
        np.testing.assert_allclose(sd.lambda0, discrete_solve(ts, p, 0).spectrum, atol=TOL)
        np.testing.assert_allclose(sd.weights, ref.weights, rtol=1e-9, atol=1e-12)

    @settings(max_examples=20)
    @given(discrete_problems(), st.lists(st.floats(-10, 10), min_size=20, max_size=20))
    def test_theta_polynomials(self, prob, lam):
        ts, p = prob
        lam = np.array(lam)
        t0, t1 = theta_polynomials(ts, p)
        for j, poly in ((0, t0), (1, t1)):
            ref = poly(lam)
            got = theta(ts, p, lam, j)[0]
            np.testing.assert_allclose(got, ref, atol=TOL * max(1.0, np.abs(ref).max()))

    @given(discrete_problems(), st.floats(-5, 5))
    def test_wronskian_positivity(self, prob, lam):
        # Theta_1 Theta_0' - Theta_1' Theta_0 is a positive sum of squares
        t0, t1 = theta_polynomials(*prob)
        assert t1(lam) * t0.deriv()(lam) - t1.deriv()(lam) * t0(lam) > 0


class TestClassical:
    def test_pi(self):
        ref = classical_reference(math.pi, 5)
        np.testing.assert_allclose(ref.lambda0, [1, 4, 9, 16, 25], atol=TOL)
        np.testing.assert_allclose(ref.lambda1, [0.25, 2.25, 6.25, 12.25, 20.25], atol=TOL)
        np.testing.assert_allclose(ref.weights, 2 / math.pi, atol=TOL)

    def test_unit(self):
        ref = classical_reference(1.0, 3)
        np.testing.assert_allclose(ref.lambda0, (np.pi * np.arange(1, 4)) ** 2, atol=TOL)
        np.testing.assert_allclose(ref.lambda1, (np.pi * (np.arange(1, 4) - 0.5)) ** 2, atol=TOL)
        np.testing.assert_allclose(ref.weights, 2.0, atol=TOL)

    def test_matches_forward(self):
        ts = validate([(0, 1.7)])
        sd = spectral_data(ts, zero_potential(ts), count=15)
        ref = classical_reference(1.7, 15)
        np.testing.assert_allclose(sd.lambda0, ref.lambda0, atol=1e-9)
        np.testing.assert_allclose(sd.lambda1, ref.lambda1, atol=1e-9)
        np.testing.assert_allclose(sd.weights, ref.weights, atol=1e-9)
