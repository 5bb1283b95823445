import math

import numpy as np
import pytest
from scipy.integrate import quad

from tsspec.errors import (
    ComputeError,
    BranchError,
    DataLengthError,
    FitResidualError,
    GridError,
    ModelMismatchError,
    PoleExtractionError,
)
from tsspec.forward import solver, spectral_data
from tsspec.inverse import (
    InverseOptions,
    ModelTable,
    SpectralInput,
    build_main_equation,
    d_kernel,
    mean_model,
    peel,
    reconstruct_C,
    recover_point_q,
    recover_segment_q,
    run_inverse,
    solve_main_equation,
)
from tsspec.oracle import theta_polynomials
from tsspec.potential import distance, from_functions, relative_l2_error, zero_potential
from tsspec.time_scale import tail, validate
from tsspec.weyl import WeylData, weyl_direct

TOL = 1e-9

PI_SEG = validate([(0, math.pi)])


def _data(ts, p, n):
    sd = spectral_data(ts, p, count=n)
    return SpectralInput(sd.lambda1, sd.weights, sd.lambda0)


def _cos_system(n_max, grid=129):
    p = from_functions(PI_SEG, np.cos, grid=grid)
    opt = InverseOptions(n_max=n_max, grid=grid)
    return build_main_equation(PI_SEG, zero_potential(PI_SEG, grid), _data(PI_SEG, p, n_max), opt), opt


def _exact_weyl(ts, p):
    """Weyl data of a purely discrete problem straight from the oracle polynomials."""
    t0, t1 = theta_polynomials(ts, p)
    d0, d1 = t0.deriv(), t1.deriv()
    poles = np.sort(t1.roots().real)

    def pair(lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        return t0(lam), t1(lam), d0(lam), d1(lam)

    return WeylData(ts, pair, poles, -t0(poles) / d1(poles), "direct-theta")


class TestSpectralInput:
    def test_rejects_length_mismatch(self):
        with pytest.raises(DataLengthError):
            SpectralInput([1.0, 2.0], [1.0])

    def test_rejects_unsorted(self):
        with pytest.raises(DataLengthError):
            SpectralInput([2.0, 1.0], [1.0, 1.0])

    def test_rejects_non_positive_weight(self):
        with pytest.raises(DataLengthError):
            SpectralInput([1.0, 2.0], [1.0, 0.0])

    def test_rejects_broken_interlacing(self):
        with pytest.raises(DataLengthError):
            SpectralInput([1.0, 2.0], [1.0, 1.0], lambda0=[2.5, 3.0])

    def test_n_max_bound(self):
        with pytest.raises(DataLengthError):
            SpectralInput([1.0, 2.0], [1.0, 1.0], n_max=3)

    def test_options_reject_unknown(self):
        with pytest.raises(ValueError):
            InverseOptions.from_dict({"n_max": 10, "colour": 1})


class TestDKernel:
    table = ModelTable(PI_SEG, zero_potential(PI_SEG), [1.0, 4.0, 2.25])

    def test_left_end(self):
        for i in range(3):
            for j in range(3):
                assert d_kernel(self.table, 0.0, i, j) == 0.0

    def test_diagonal_positive(self):
        for x in (0.3, 1.7, math.pi):
            for i in range(3):
                assert d_kernel(self.table, x, i, i) > 0

    def test_both_routes_match_closed_form(self):
        # int_0^pi cos t cos 2t dt = 0
        quotient = d_kernel(self.table, math.pi, 0, 1, eps=1e-12)
        quadrature = d_kernel(self.table, math.pi, 0, 1, eps=10.0)
        assert quotient == pytest.approx(0.0, abs=TOL)
        assert quadrature == pytest.approx(0.0, abs=TOL)

    def test_against_numerical_integral(self):
        x = 2.1
        ref, _ = quad(lambda t: math.cos(t) * math.cos(1.5 * t), 0, x, epsabs=1e-13)
        assert d_kernel(self.table, x, 0, 2, eps=1e-12) == pytest.approx(ref, abs=TOL)
        assert d_kernel(self.table, x, 0, 2, eps=10.0) == pytest.approx(ref, abs=TOL)

    def test_outside_segment(self):
        with pytest.raises(GridError):
            d_kernel(self.table, 4.0, 0, 1)


class TestMainEquation:
    def test_fixed_point(self):
        ts = PI_SEG
        model = from_functions(ts, lambda x: 0.5 * np.sin(2 * x))
        opt = InverseOptions(n_max=20)
        sys = build_main_equation(ts, model, _data(ts, model, 20), opt)
        assert np.all(sys.xi == 0)
        sol = solve_main_equation(sys, options=opt)
        A, rhs, c = sys.assemble(sys.grid[::16])
        np.testing.assert_allclose(sol.psi[::16], rhs, atol=1e-12)
        np.testing.assert_allclose(sol.C[::16], c, atol=1e-12)
        rec = recover_segment_q(sys, opt)
        assert np.max(np.abs(rec.q - model.segment_samples[0])) <= 1e-6

    def test_toy_sandwich(self):
        # one data pair against the zero model: H by hand from closed-form kernels
        lam, alpha = 0.4, 0.7
        ts = PI_SEG
        sys = build_main_equation(ts, zero_potential(ts), SpectralInput([lam], [alpha]), InverseOptions(n_max=1))
        lam_m, alpha_m = 0.25, 2 / math.pi
        x = 1.3

        def D(a, b):
            return quad(lambda t: math.cos(math.sqrt(a) * t) * math.cos(math.sqrt(b) * t), 0, x, epsabs=1e-14)[0]

        th = [lam, lam_m]
        al = [alpha, alpha_m]
        R = np.array([[al[b] * D(th[a], th[b]) for b in range(2)] for a in range(2)])
        xi = abs(math.sqrt(lam) - math.sqrt(lam_m)) + abs(alpha - alpha_m)
        chi = 1 / xi
        H = np.array([
            [chi * (R[0, 0] - R[1, 0]) * xi, chi * ((R[0, 0] - R[1, 0]) - (R[0, 1] - R[1, 1]))],
            [R[1, 0] * xi, R[1, 0] - R[1, 1]],
        ])
        c = [math.cos(math.sqrt(t) * x) for t in th]
        A, rhs, _ = sys.assemble(x)
        assert sys.xi[0] == pytest.approx(xi, abs=1e-9)
        np.testing.assert_allclose(A[0], np.eye(2) + H, atol=1e-9)
        np.testing.assert_allclose(rhs[0], [chi * (c[0] - c[1]), c[1]], atol=1e-9)

    def test_kernel_envelope_bounded(self):
        # |H_{ni,kj}| (|rho_n - rho_k| + 1) / xi_k stays bounded as n_max grows
        ratios = []
        for n in (20, 40):
            sys, _ = _cos_system(n)
            A, _, _ = sys.assemble(sys.grid[40:41])
            H = np.abs(A[0] - np.eye(2 * n)).reshape(n, 2, n, 2)
            rho = np.sqrt(sys.model_lambda1)
            env = sys.xi[None, :] / (np.abs(rho[:, None] - rho[None, :]) + 1)
            ratios.append(float(np.max(H / env[:, None, :, None])))
        assert np.isfinite(ratios).all()
        assert ratios[1] <= 2 * ratios[0]

    def test_residual_and_condition(self):
        sys, opt = _cos_system(50)
        sol = solve_main_equation(sys, options=opt)
        assert sol.residual.max() <= 1e-10
        assert np.all(np.isfinite(sol.condition))

    def test_threads_agree(self):
        sys, opt = _cos_system(30)
        a = solve_main_equation(sys, options=opt)
        b = solve_main_equation(sys, options=InverseOptions(n_max=30, threads=3, chunk=16))
        np.testing.assert_allclose(a.C, b.C, atol=1e-13)

    def test_model_mismatch(self):
        other = validate([(0, 2)])
        with pytest.raises(ModelMismatchError):
            build_main_equation(PI_SEG, zero_potential(other), SpectralInput([1.0], [1.0]))

    def test_head_must_be_segment(self):
        ts = validate([(0, 0), (1, 2)])
        with pytest.raises(GridError):
            build_main_equation(ts, zero_potential(ts), SpectralInput([1.0], [1.0]))

    def test_truncates_to_data(self):
        sys = build_main_equation(PI_SEG, zero_potential(PI_SEG), SpectralInput([1.0], [1.0]),
                                  InverseOptions(n_max=5))
        assert sys.n_max == 1


class TestReconstruction:
    def test_initial_conditions(self):
        sys, opt = _cos_system(50)
        h = math.pi / 128
        x = h * np.arange(6)
        sol = solve_main_equation(sys, x, opt)
        c = reconstruct_C(sys, sol)[0]
        assert c[0] == pytest.approx(1.0, abs=1e-6)
        # C is only resolved to the truncation error, so compare slopes over the stencil
        slope = np.polyfit(x, c, 2)[1]
        assert abs(slope) <= 1e-2

    def test_matches_forward_solution(self):
        ts = PI_SEG
        p = from_functions(ts, lambda x: 0.3 * np.exp(-4 * (x - 1.5) ** 2))
        opt = InverseOptions(n_max=100)
        sys = build_main_equation(ts, zero_potential(ts), _data(ts, p, 100), opt)
        x = sys.grid[::8]
        sol = solve_main_equation(sys, x, opt)
        lam = sys.theta[0]
        ref = solver(ts, p).segment_solutions(0, lam, x)[0, 0, 0]
        assert np.max(np.abs(sol.C0(0) - ref)) <= 5e-3

    def test_median_consistent(self):
        sys, opt = _cos_system(100)
        rec = recover_segment_q(sys, opt)
        dev = np.abs(rec.estimates - rec.q[:, None])
        assert np.max(dev[rec.admissible]) <= 0.2

    def test_zero_potential(self):
        sys = build_main_equation(PI_SEG, zero_potential(PI_SEG), _data(PI_SEG, zero_potential(PI_SEG), 30),
                                  InverseOptions(n_max=30))
        rec = recover_segment_q(sys, InverseOptions(n_max=30))
        assert np.max(np.abs(rec.q)) <= 1e-6


class TestSeveralBlocks:
    # head [0, pi] and tail of length pi/2: poles of the two branches cluster in pairs
    ts = validate([(0, math.pi), (math.pi + 1, math.pi + 1 + math.pi / 2)])

    def _head_rms(self, f, n, model=None):
        p = from_functions(self.ts, [f, np.sin])
        inp = SpectralInput.from_weyl(weyl_direct(self.ts, p, n))
        model = mean_model(self.ts, inp) if model is None else model
        opt = InverseOptions(n_max=n)
        sys = build_main_equation(self.ts, model, inp, opt)
        e = recover_segment_q(sys, opt).q - p.segment_samples[0]
        return float(np.sqrt(np.mean(e**2))), sys.n_max

    @pytest.mark.parametrize("n", [50, 100])
    def test_cut_avoids_clusters(self, n):
        rms, used = self._head_rms(np.cos, n, zero_potential(self.ts))
        assert used < n
        assert rms <= 0.2

    def test_mean_model_constant(self):
        p = from_functions(self.ts, [lambda x: np.cos(x) + 0.5, np.sin])
        m = mean_model(self.ts, SpectralInput.from_weyl(weyl_direct(self.ts, p, 100)))
        assert m.segment_samples[0] == pytest.approx(0.5, abs=1e-3)
        assert np.all(m.segment_samples[1] == 0)

    def test_mean_model_rescues_head(self):
        f = lambda x: np.cos(x) + 0.5
        fitted, _ = self._head_rms(f, 100)
        plain, _ = self._head_rms(f, 100, zero_potential(self.ts))
        assert fitted <= 0.1 < plain

    def test_peel_after_recovered_segment_reports(self):
        # the tail's pole error grows like lam^3 times the head error; 1e-3 is far too much
        p = from_functions(self.ts, [np.cos, np.sin])
        with pytest.raises(ComputeError, match="lam\\^3"):
            run_inverse(self.ts, weyl_direct(self.ts, p, 100))


class TestPointRecovery:
    @pytest.mark.parametrize("c", [-1.5, 0.0, 0.8])
    def test_three_points_exact(self, c):
        ts = validate([(0, 0), (1, 1), (2, 2)])
        p = from_functions(ts, None, {0: c})
        fit = recover_point_q(ts, _exact_weyl(ts, p))
        assert fit.q == pytest.approx(c, abs=1e-8)

    def test_four_points_exact(self):
        ts = validate([(0, 0), (1, 1), (2, 2), (3, 3)])
        p = from_functions(ts, None, {0: 0.7, 1: -0.4})
        fit = recover_point_q(ts, _exact_weyl(ts, p))
        assert fit.q == pytest.approx(0.7, abs=1e-8)

    def test_point_then_point_constant(self):
        # a point followed by a point and a segment: constant tends to g/(a_3 - a_2) + 1
        ts = validate([(0, 0), (1, 1), (3, 5)])
        p = from_functions(ts, np.cos, {0: 0.0, 1: 0.2})
        fit = recover_point_q(ts, weyl_direct(ts, p, 20))
        assert fit.constant == pytest.approx(1.0 / 2.0 + 1.0, abs=1e-2)
        assert abs(fit.q) <= 1e-2

    def test_point_then_segment(self):
        ts = validate([(0, 0), (1, 1 + math.pi)])
        p = from_functions(ts, np.cos, {0: -0.6})
        fit = recover_point_q(ts, weyl_direct(ts, p, 20))
        assert fit.q == pytest.approx(-0.6, abs=1e-2)

    def test_wrong_gap_is_caught(self):
        # data from a scale with a different first gap breaks the divergent part
        ts = validate([(0, 0), (1, 1 + math.pi)])
        other = validate([(0, 0), (1.5, 1.5 + math.pi)])
        w = weyl_direct(other, from_functions(other, np.cos, {0: 0.3}), 20)
        with pytest.raises((BranchError, FitResidualError)):
            recover_point_q(ts, WeylData(ts, w.pair, w.poles, w.residues, "direct-theta"))

    def test_segment_head_rejected(self):
        with pytest.raises(GridError):
            recover_point_q(PI_SEG, weyl_direct(PI_SEG, zero_potential(PI_SEG), 5))


class TestPeel:
    ts = validate([(0, math.pi), (math.pi + 1, math.pi + 1 + math.pi / 2)])

    def test_tail_poles_match_forward(self):
        p = from_functions(self.ts, [np.cos, lambda x: np.sin(x)])
        w = weyl_direct(self.ts, p, 40)
        tw = peel(self.ts, p.segment_samples[0], w, InverseOptions(n_max=15))
        t2 = tail(self.ts, 2)
        ref = spectral_data(t2, from_functions(t2, np.sin), count=15)
        np.testing.assert_allclose(tw.poles, ref.lambda1, atol=1e-6)
        assert np.all(tw.residues > 0)
        assert tw.provenance == "peeled"

    def test_single_block_refuses(self):
        w = weyl_direct(PI_SEG, zero_potential(PI_SEG), 5)
        with pytest.raises(PoleExtractionError):
            peel(PI_SEG, np.zeros(129), w)

    def test_discrete_peel(self):
        ts = validate([(0, 0), (1, 1), (2.5, 2.5), (3, 3)])
        p = from_functions(ts, None, {0: 0.4, 1: -0.9})
        tw = peel(ts, 0.4, _exact_weyl(ts, p))
        t2 = tail(ts, 2)
        ref = spectral_data(t2, from_functions(t2, None, {0: -0.9}))
        np.testing.assert_allclose(tw.poles, ref.lambda1, atol=1e-8)
        np.testing.assert_allclose(tw.residues, ref.weights, rtol=1e-6)


class TestRunInverse:
    def test_zero_everywhere(self):
        ts = validate([(0, 0), (1, 1 + math.pi)])
        p = zero_potential(ts)
        res = run_inverse(ts, weyl_direct(ts, p, 100))
        d = distance(res.potential, p)
        assert d.points <= 1e-6 and d.l2 <= 1e-6

    def test_discrete_four_points(self):
        ts = validate([(0, 0), (1, 1), (2, 2), (3.5, 3.5)])
        p = from_functions(ts, None, {0: 1.2, 1: -0.3})
        res = run_inverse(ts, _exact_weyl(ts, p))
        assert res.potential.point_values[0] == pytest.approx(1.2, abs=1e-8)
        assert res.potential.point_values[1] == pytest.approx(-0.3, abs=1e-8)
        assert [d["kind"] for d in res.diagnostics] == ["point", "point"]

    def test_single_segment_from_spectra(self):
        p = from_functions(PI_SEG, np.cos)
        res = run_inverse(PI_SEG, _data(PI_SEG, p, 100))
        assert relative_l2_error(res.potential, p) <= 5e-2

    def test_mean_model_on_shifted_segment(self):
        # cos has a nonzero mean on [1, 1+pi]; the fitted constant model keeps the right end accurate
        ts = validate([(1, 1 + math.pi)])
        p = from_functions(ts, np.cos)
        data = _data(ts, p, 100)
        fitted = run_inverse(ts, data)
        plain = run_inverse(ts, data, options=InverseOptions(model_shift="none"))
        assert relative_l2_error(fitted.potential, p) <= 5e-3
        assert relative_l2_error(fitted.potential, p) < relative_l2_error(plain.potential, p)

    def test_explicit_model_is_kept(self):
        # data from the model itself: an explicit model must reproduce it exactly
        model = from_functions(PI_SEG, lambda x: 0.4 + 0.1 * x)
        res = run_inverse(PI_SEG, _data(PI_SEG, model, 30), model, InverseOptions(n_max=30))
        assert np.max(np.abs(res.potential.segment_samples[0] - model.segment_samples[0])) <= 1e-6

    def test_bad_model_shift(self):
        with pytest.raises(ValueError):
            run_inverse(PI_SEG, SpectralInput([1.0], [1.0]), options=InverseOptions(model_shift="odd"))

    def test_peeling_needs_lambda0(self):
        ts = validate([(0, 0), (1, 1 + math.pi)])
        with pytest.raises(DataLengthError):
            run_inverse(ts, SpectralInput([1.0, 2.0], [1.0, 1.0]))

    def test_json(self):
        ts = validate([(0, 0), (1, 1), (2, 2)])
        res = run_inverse(ts, _exact_weyl(ts, from_functions(ts, None, {0: 0.5})))
        out = res.to_json()
        assert out["potential"]["points"]["0"] == pytest.approx(0.5, abs=1e-8)
