import numpy as np
import pytest
from scipy import special as sp
from scipy.integrate import quad

from riesz_modlab import kernels as K
from riesz_modlab.errors import InvalidSpecError, SingularEvaluationError
from riesz_modlab.rng import generator, STREAM_TRIAL


def spec_for(d, s, a, zeta=None):
    return K.PotentialSpec(d=d, s=s, a=a, zeta=zeta or K.ZetaWeight.exact())


class TestRieszPotential:
    def test_unit_values(self):
        assert K.riesz_potential([1.0, 0.0], spec_for(2, 1.0, 3.0)) == pytest.approx(1.0)
        assert K.riesz_potential([1.0, 0.0], spec_for(2, 0.0, 3.0)) == pytest.approx(0.0)
        assert K.riesz_potential([2.0, 0.0, 0.0], spec_for(3, 1.0, 4.0)) == pytest.approx(0.5)

    def test_singular_origin(self):
        with pytest.raises(SingularEvaluationError):
            K.riesz_potential([0.0, 0.0], spec_for(2, 1.0, 3.0))

    def test_invalid_exponent(self):
        with pytest.raises(InvalidSpecError):
            spec_for(2, 2.5, 3.0)
        with pytest.raises(InvalidSpecError):
            spec_for(2, -0.5, 3.0)


class TestBesselPotential:
    def test_value_at_zero(self):
        # G_a(0) = Gamma((a-d)/2) / ((2 sqrt(pi))^d Gamma(a/2)); (a,d)=(3,1) gives 1/pi
        assert K.bessel_potential(0.0, 3.0, 1) == pytest.approx(1 / np.pi, rel=1e-12)

    def test_two_routes_agree(self):
        for (r, a, d) in [(5.0, 2.5, 2), (0.3, 1.8, 1), (1.0, 4.0, 3), (2.0, 3.0, 1)]:
            closed = K.bessel_potential(r, a, d, method="bessel")
            heat = K.bessel_potential(r, a, d, method="heat")
            assert heat == pytest.approx(closed, rel=1e-8)

    def test_unit_mass(self):
        # radial quadrature of G_a over R^d
        for (a, d) in [(2.0, 1), (3.0, 2), (4.0, 3)]:
            shape = K.BesselShape(a, d)
            area = 2 * np.pi ** (d / 2) / sp.gamma(d / 2)
            f = lambda u: np.exp(d * u) * shape.profile(np.exp(u))[()]
            mass = area * sum(
                quad(f, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=300)[0]
                for lo, hi in [(-40, 0), (0, 8)]
            )
            assert mass == pytest.approx(1.0, abs=1e-8)

    def test_unsupported_order(self):
        with pytest.raises(InvalidSpecError):
            K.bessel_potential(1.0, 1.0, 2)


class TestNormalization:
    def test_s0_reciprocal_value(self):
        consts = K.normalization_constant(spec_for(1, 0.0, 3.0))
        assert consts.c_norm == pytest.approx(np.pi, rel=1e-10)

    def test_quadrature_matches_closed(self):
        for (d, s, a) in [(1, 0.5, 2.0), (1, 0.5, 1.8), (2, 1.0, 3.0), (3, 1.0, 4.0)]:
            spec = spec_for(d, s, a)
            cq = K.normalization_constant(spec).c_norm
            cc = K.normalization_constant(spec, method="closed").c_norm
            assert cq == pytest.approx(cc, rel=1e-9)

    def test_s0_renormalization_slope(self):
        spec = spec_for(1, 0.0, 2.0)
        shape = spec.bump()
        consts = K.normalization_constant(spec, shape)
        assert consts.C_phi_T_slope == pytest.approx(shape.value_at_zero, rel=1e-12)
        # C_{phi,T} is affine in log T with slope phi(0)
        dT = consts.C_phi_T(1e8) - consts.C_phi_T(1e4)
        assert dT == pytest.approx(shape.value_at_zero * np.log(1e4), rel=1e-12)

    def test_gaussian_log_moment(self):
        # int log(r) phi'(r) dr = (euler_gamma + log pi)/2 for the Gaussian bump
        shape = K.GaussianShape()
        target = 0.5 * (np.euler_gamma + np.log(np.pi))
        num = quad(lambda r: np.log(r) * shape.profile_deriv(r)[()], 0, 20, limit=200)[0]
        assert shape.log_deriv_moment() == pytest.approx(target, rel=1e-12)
        assert num == pytest.approx(target, rel=1e-8)


class TestReconstruction:
    # acceptance criterion 1 exercises this on the full grid; spot-check here
    def test_reconstructs_riesz(self):
        for (d, s, a) in [(1, 0.5, 1.8), (2, 1.0, 3.0)]:
            spec = spec_for(d, s, a)
            x = np.zeros(d)
            x[0] = 0.7
            rec = K.reconstruct_g(x, spec)
            assert rec == pytest.approx(spec.g_radial(0.7), rel=1e-9)

    def test_reconstructs_log(self):
        spec = spec_for(1, 0.0, 2.0)
        for r in (0.25, 0.6):
            rec = K.reconstruct_g([r], spec)
            assert rec == pytest.approx(-np.log(r), abs=1e-9)


class TestTruncation:
    def test_f_zero_at_eta_zero(self):
        spec = spec_for(1, 0.5, 2.0)
        assert K.f_eta([0.4], 0.0, spec) == 0.0

    def test_splitting_identity(self):
        # g = g_eta + f_eta pointwise, both bump choices
        for (d, s, a) in [(1, 0.5, 2.0), (2, 1.0, 3.0), (1, 0.0, 2.0)]:
            spec = spec_for(d, s, a)
            for shape in (K.GaussianShape(), spec.bump()):
                for r in (0.05, 0.3, 1.2):
                    x = np.zeros(d)
                    x[0] = r
                    total = K.g_eta(x, 0.25, spec, shape) + K.f_eta(x, 0.25, spec, shape)
                    assert total == pytest.approx(spec.g_radial(r), abs=1e-10)

    def test_f_monotone_in_eta_and_nonnegative(self):
        spec = spec_for(1, 0.5, 1.8)
        r = np.array([0.05, 0.2, 0.7, 2.0])
        prev = np.zeros_like(r)
        for eta in (0.05, 0.1, 0.2, 0.4):
            cur = K.f_eta_radial(r, eta, spec)
            assert np.all(cur >= 0)
            assert np.all(cur >= prev - 1e-13)
            prev = cur

    def test_g_eta_zero_closed_formula(self):
        # s > 0: s g_eta(0) eta^s / (c phi(0)) = 1
        for (d, s, a) in [(1, 0.5, 2.0), (2, 1.0, 3.0)]:
            spec = spec_for(d, s, a)
            shape = spec.bump()
            consts = K.normalization_constant(spec, shape, method="closed")
            for eta in (0.1, 0.02):
                v = K.g_eta_zero(eta, spec, shape)
                ratio = s * v * eta**s / (consts.c_norm * shape.value_at_zero)
                assert ratio == pytest.approx(1.0, rel=1e-12)

    def test_g_eta_zero_log_shift(self):
        # s = 0: g_eta(0) + log eta independent of eta
        spec = spec_for(1, 0.0, 2.0)
        v1 = K.g_eta_zero(0.1, spec) + np.log(0.1)
        v2 = K.g_eta_zero(0.01, spec) + np.log(0.01)
        assert v1 == pytest.approx(v2, abs=1e-10)

    def test_g_eta_converges_to_g(self):
        spec = spec_for(1, 0.5, 2.0)
        x = np.array([1.0])
        assert abs(K.g_eta(x, 1e-3, spec) - spec.g_radial(1.0)) <= 1e-6

    def test_g_eta_monotone_radial(self):
        spec = spec_for(2, 1.0, 3.0)
        r = np.linspace(1e-3, 3.0, 200)
        vals = K.g_eta_radial(r, 0.2, spec)
        assert np.all(np.diff(vals) <= 1e-12)

    def test_far_field_envelope(self):
        # f_eta(x) <= C_gamma eta^{gamma-s} / |x|^gamma at gamma = 3, x = 10 eta;
        # C_gamma calibrated once on an eta sweep then asserted with margin
        spec = spec_for(1, 0.5, 2.0)
        gamma = 3.0
        etas = np.array([0.02, 0.05, 0.1, 0.2])
        ratios = []
        for eta in etas:
            x = 10.0 * eta
            ratios.append(K.f_eta_radial(x, eta, spec) * x**gamma / eta ** (gamma - spec.s))
        C_gamma = 1.05 * max(ratios)
        for eta in (0.03, 0.15):
            x = 10.0 * eta
            val = K.f_eta_radial(x, eta, spec)
            assert val <= C_gamma * eta ** (gamma - spec.s) / x**gamma


class TestGradients:
    def test_matches_finite_differences(self):
        spec = spec_for(1, 0.5, 2.0)
        eta = 0.2
        h = 1e-6
        for r in (0.5, 1.0, 2.0):
            num = (K.g_eta([r + h], eta, spec) - K.g_eta([r - h], eta, spec)) / (2 * h)
            ana = K.grad_g_eta([r], eta, spec)[0]
            assert ana == pytest.approx(num, rel=1e-6)

    def test_finite_differences_bessel_shape(self):
        spec = spec_for(2, 1.0, 3.0)
        shape = spec.bump()
        eta = 0.15
        h = 1e-6
        x = np.array([0.4, 0.3])
        num0 = (K.f_eta(x + [h, 0], eta, spec, shape) - K.f_eta(x - [h, 0], eta, spec, shape)) / (2 * h)
        ana = K.grad_f_eta(x, eta, spec, shape)
        assert ana[0] == pytest.approx(num0, rel=1e-6)

    def test_euler_homogeneity(self):
        # x . grad g = -s g (s > 0), = -1 (s = 0)
        s_spec = spec_for(2, 1.0, 3.0)
        for r in (0.5, 1.3):
            x = np.array([r, 0.0])
            val = x @ (s_spec.g_radial_deriv(r) * x / r)
            assert val == pytest.approx(-s_spec.s * s_spec.g_radial(r), rel=1e-12)
        log_spec = spec_for(1, 0.0, 2.0)
        for r in (0.5, 1.3):
            assert r * log_spec.g_radial_deriv(r) == pytest.approx(-1.0, rel=1e-12)

    def test_gradient_envelope(self):
        # |x| |grad f_eta(x)| <= C f_{eta/c}(x) with c = 1/2; C calibrated once
        spec = spec_for(1, 0.5, 2.0)
        shape = spec.bump()
        c = 0.5
        eta = 0.1
        rs = np.array([0.02, 0.05, 0.1, 0.3, 0.8])
        lhs = rs * np.abs(K.f_eta_radial_deriv(rs, eta, spec, shape))
        rhs = K.f_eta_radial(rs, eta / c, spec, shape)
        C = 1.05 * np.max(lhs / rhs)
        rs2 = np.array([0.04, 0.6])
        lhs2 = rs2 * np.abs(K.f_eta_radial_deriv(rs2, 0.07, spec, shape))
        rhs2 = K.f_eta_radial(rs2, 0.07 / c, spec, shape)
        assert np.all(lhs2 <= C * rhs2)


class TestFourier:
    def test_nonnegative_random(self):
        rng = generator(20240811, STREAM_TRIAL)
        spec = spec_for(1, 0.5, 1.8)
        xi = rng.uniform(0.01, 50.0, size=1000)
        eta = rng.uniform(0.0, 1.0, size=1000)
        vals = np.array([K.fourier_g_eta(x, e, spec) for x, e in zip(xi, eta)])
        assert np.all(vals >= 0)

    def test_exact_riesz_limit(self):
        # eta = 0, s = 1, d = 3, |xi| = 1: classical gamma-formula value 1/pi
        spec = spec_for(3, 1.0, 4.0)
        closed = K.fourier_g_eta(1.0, 0.0, spec)
        target = K.riesz_fourier_constant(3, 1.0) * (2 * np.pi) ** (1.0 - 3)
        assert closed == pytest.approx(target, rel=1e-10)
        assert closed == pytest.approx(1 / np.pi, rel=1e-10)
        byquad = K.fourier_g_eta(1.0, 0.0, spec, method="quadrature")
        assert byquad == pytest.approx(closed, rel=1e-6)

    def test_closed_matches_quadrature(self):
        spec = spec_for(2, 1.0, 3.0)
        for (xi, eta) in [(0.5, 0.3), (3.0, 0.05), (10.0, 1.0)]:
            closed = K.fourier_g_eta(xi, eta, spec)
            byquad = K.fourier_g_eta(xi, eta, spec, method="quadrature")
            assert byquad == pytest.approx(closed, rel=1e-8)

    def test_large_frequency_slope(self):
        # log-log slope over |xi| in [10, 100] at eta = 1 approaches -a
        spec = spec_for(1, 0.5, 1.8)
        xi = np.logspace(1, 2, 12)
        vals = np.array([K.fourier_g_eta(x, 1.0, spec) for x in xi])
        slope = np.polyfit(np.log(xi), np.log(vals), 1)[0]
        assert slope == pytest.approx(-spec.a, abs=0.05)

    def test_positive_definite_quadratic_form(self):
        rng = generator(7, STREAM_TRIAL)
        spec = spec_for(2, 1.0, 3.0)
        pts = rng.uniform(size=(12, 2))
        w = rng.standard_normal(12)
        w -= w.mean()
        q = K.quadratic_form(pts, w, 0.1, spec)
        assert q >= -1e-10

    def test_positive_definite_log_case(self):
        rng = generator(8, STREAM_TRIAL)
        spec = spec_for(1, 0.0, 2.0)
        pts = rng.uniform(size=(10, 1))
        w = rng.standard_normal(10)
        w -= w.mean()
        assert K.quadratic_form(pts, w, 0.07, spec) >= -1e-10


class TestRieszTypeWeights:
    def test_scaled_weight_scales_everything(self):
        base = spec_for(1, 0.5, 2.0)
        scaled = spec_for(1, 0.5, 2.0, zeta=K.ZetaWeight.scaled(2.5))
        r, eta = 0.3, 0.1
        assert K.f_eta_radial(r, eta, scaled) == pytest.approx(
            2.5 * K.f_eta_radial(r, eta, base), rel=1e-12
        )
        assert K.fourier_g_eta(1.0, eta, scaled) == pytest.approx(
            2.5 * K.fourier_g_eta(1.0, eta, base), rel=1e-12
        )
        assert scaled.g_radial(r) == pytest.approx(2.5 * base.g_radial(r), rel=1e-12)

    def test_scaled_weight_rejected_at_s0(self):
        with pytest.raises(InvalidSpecError):
            spec_for(1, 0.0, 2.0, zeta=K.ZetaWeight.scaled(2.0))

    def test_envelope_validation(self):
        good = K.ZetaWeight.tabulated(lambda t: t**0.5 * (1 + 0.3 * np.sin(np.log(t))), C_zeta=1.5)
        spec = spec_for(1, 0.5, 2.0, zeta=good)
        assert spec.check_zeta_envelope()
        bad = K.ZetaWeight.tabulated(lambda t: t**0.8, C_zeta=1.5)
        with pytest.raises(InvalidSpecError):
            spec_for(1, 0.5, 2.0, zeta=bad).check_zeta_envelope()

    def test_tabulated_matches_exact_when_equal(self):
        zw = K.ZetaWeight.tabulated(lambda t: np.asarray(t) ** 0.5, C_zeta=1.0)
        spec_t = spec_for(1, 0.5, 2.0, zeta=zw)
        spec_e = spec_for(1, 0.5, 2.0)
        shape = spec_e.bump()
        assert K.f_eta_radial(0.2, 0.1, spec_t, shape) == pytest.approx(
            float(K.f_eta_radial(0.2, 0.1, spec_e, shape)), rel=1e-9
        )
