import numpy as np
import pytest

from riesz_modlab import spectral as spx
from riesz_modlab.errors import InvalidSpecError
from riesz_modlab.ewald import TorusGeometry

GEOM1 = TorusGeometry(1, 1.0)
GEOM2 = TorusGeometry(2, 1.0)


def cos_field(k=1, n=64):
    x = np.arange(n) / n
    return spx.GridField(np.cos(2 * np.pi * k * x), GEOM1)


class TestMultipliers:
    def test_single_mode_inhomogeneous(self):
        f = cos_field()
        out = spx.apply_multiplier(f, spx.MultiplierSpec("inhomogeneous", 2.0))
        assert np.allclose(out.values, (1 + 4 * np.pi**2) * f.values, atol=1e-10)

    def test_single_mode_homogeneous(self):
        f = cos_field()
        out = spx.apply_multiplier(f, spx.MultiplierSpec("homogeneous", 1.0))
        assert np.allclose(out.values, 2 * np.pi * f.values, atol=1e-11)

    def test_roundtrip_inverse(self):
        rng_field = spx.random_band_field(GEOM1, band=10, seed=3)
        up = spx.apply_multiplier(rng_field, spx.MultiplierSpec("inhomogeneous", 1.3))
        back = spx.apply_multiplier(up, spx.MultiplierSpec("inhomogeneous", -1.3))
        assert np.max(np.abs(back.values - rng_field.values)) < 1e-12

    def test_zero_mode_guard(self):
        f = spx.GridField(np.ones(32) + np.cos(2 * np.pi * np.arange(32) / 32), GEOM1)
        with pytest.raises(InvalidSpecError):
            spx.apply_multiplier(f, spx.MultiplierSpec("homogeneous", -1.0))

    def test_gradient(self):
        n = 64
        x = np.arange(n) / n
        f = spx.GridField(np.sin(2 * np.pi * x), GEOM1)
        g = spx.apply_multiplier(f, spx.MultiplierSpec("gradient"))
        assert np.allclose(g.values[0], 2 * np.pi * np.cos(2 * np.pi * x), atol=1e-10)


class TestNorms:
    def test_cos_h1(self):
        f = cos_field()
        assert spx.sobolev_norm(f, 1.0) ** 2 == pytest.approx((1 + 4 * np.pi**2) / 2, rel=1e-12)

    def test_cos_linf(self):
        f = cos_field(k=1, n=64)  # grid contains the maximizer x = 0
        assert spx.lp_norm(f, np.inf) == pytest.approx(1.0)

    def test_sobolev_monotone_in_order(self):
        f = spx.random_band_field(GEOM1, band=8, seed=5)
        for lo, hi in [(0.5, 1.0), (1.0, 2.3)]:
            assert spx.sobolev_norm(f, lo) <= spx.sobolev_norm(f, hi) + 1e-13


class TestKatoPonce:
    def test_constant_v_vanishes(self):
        n = 64
        f = cos_field(k=2, n=n)
        v = spx.GridField(np.ones((1, n)), GEOM1)
        assert abs(spx.kato_ponce_lhs(v, f, 2.0)) < 1e-12

    def test_hand_value(self):
        # v = sin(4 pi x), f = cos(2 pi x), alpha = 2 -> -pi (1 + 4 pi^2)/2
        n = 64
        x = np.arange(n) / n
        v = spx.GridField(np.sin(4 * np.pi * x)[None, :], GEOM1)
        f = spx.GridField(np.cos(2 * np.pi * x), GEOM1)
        val = spx.kato_ponce_lhs(v, f, 2.0)
        assert val == pytest.approx(-np.pi * (1 + 4 * np.pi**2) / 2, rel=1e-12)

    def test_bilinear_in_f(self):
        n = 64
        f = spx.random_band_field(GEOM1, band=5, seed=9, n=n)
        v = spx.random_band_field(GEOM1, band=5, seed=10, vector=True, n=n)
        one = spx.kato_ponce_lhs(v, f, 1.5)
        three = spx.kato_ponce_lhs(v, spx.GridField(3 * f.values, GEOM1), 1.5)
        assert three == pytest.approx(9 * one, rel=1e-11)

    def test_alias_guard(self):
        n = 32
        f = spx.random_band_field(GEOM1, band=12, seed=2, n=n)
        v = spx.random_band_field(GEOM1, band=12, seed=3, vector=True, n=n)
        with pytest.raises(InvalidSpecError):
            spx.kato_ponce_lhs(v, f, 1.0)

    def test_integration_by_parts_identity(self):
        # int v . grad(<grad>^{a/2} f) <grad>^{a/2} f = -(1/2) int div v |<grad>^{a/2} f|^2
        n = 96
        alpha = 1.7
        f = spx.random_band_field(GEOM1, band=6, seed=13, n=n)
        v = spx.random_band_field(GEOM1, band=6, seed=14, vector=True, n=n)
        half = spx.apply_multiplier(f, spx.MultiplierSpec("inhomogeneous", alpha / 2))
        grad_half = spx.apply_multiplier(half, spx.MultiplierSpec("gradient"))
        lhs = float(np.mean(np.sum(v.values * grad_half.values, axis=0) * half.values))
        jac = spx.gradient_tensor(v)
        div = sum(jac[a, a] for a in range(1))
        rhs = -0.5 * float(np.mean(div * half.values**2))
        assert lhs == pytest.approx(rhs, abs=1e-10)


class TestAvals:
    def test_constant_field_zero(self):
        v = spx.GridField(np.ones((1, 32)), GEOM1)
        assert spx.avals_constant(v, 3.5) == 0.0

    def test_alpha_le_2_is_grad_only(self):
        v = spx.random_band_field(GEOM1, band=4, seed=4, vector=True)
        assert spx.avals_constant(v, 2.0) == pytest.approx(spx.linf_grad(v), rel=1e-12)

    def test_scaling_powers(self):
        # v(2x) rescales the derivative part of each graded term by 2^{1+sigma};
        # on a fixed torus the dilation covers whole periods, so the L^p factor
        # is unchanged (the whole-space t^{-d/p} is an exact change of variables)
        n = 256
        band = 8
        v = spx.random_band_field(GEOM1, band=band, seed=6, vector=True, n=n)
        coeffs = np.fft.fft(v.values[0])
        doubled = np.zeros_like(coeffs)
        for k in range(-band, band + 1):
            doubled[(2 * k) % n] = coeffs[k % n]
        v2 = spx.GridField(np.real(np.fft.ifft(doubled))[None, :], GEOM1)
        assert np.allclose(
            v2.values[0], v.values[0][(2 * np.arange(n)) % n], atol=1e-12
        )  # v2 = v(2x)
        alpha, d = 3.5, 1
        m, r = spx._alpha_decomposition(alpha)
        j = m - 1
        p = max(2 * d / (2 * j + r), 2.0)
        sigma = j + r / 2
        t1 = spx._field_lp(spx._apply_frac_to_tensor(spx.gradient_tensor(v), GEOM1, sigma), p)
        t2 = spx._field_lp(spx._apply_frac_to_tensor(spx.gradient_tensor(v2), GEOM1, sigma), p)
        assert t2 / t1 == pytest.approx(2.0 ** (1 + sigma), rel=1e-10)


class TestKPRatio:
    def test_single_mode_reproduces_hand_ratio(self):
        n = 64
        x = np.arange(n) / n
        v = spx.GridField(np.sin(4 * np.pi * x)[None, :], GEOM1)
        f = spx.GridField(np.cos(2 * np.pi * x), GEOM1)
        lhs = spx.kato_ponce_lhs(v, f, 2.0)
        A = spx.avals_constant(v, 2.0)
        denom = spx.sobolev_norm(f, 1.0) ** 2
        ratio = abs(lhs) / (A * denom)
        assert lhs == pytest.approx(-np.pi * (1 + 4 * np.pi**2) / 2, rel=1e-12)
        assert A == pytest.approx(4 * np.pi, rel=1e-10)  # max |v'| of sin(4 pi x)
        assert ratio == pytest.approx(
            (np.pi * (1 + 4 * np.pi**2) / 2) / (4 * np.pi * (1 + 4 * np.pi**2) / 2), rel=1e-10
        )

    def test_band_doubling_stability(self):
        out8 = spx.kp_ratio_experiment(40, 2.0, band=8, seed=77)
        out16 = spx.kp_ratio_experiment(40, 2.0, band=16, seed=77)
        assert out16["max_ratio"] <= 1.10 * out8["max_ratio"]


class TestLeibniz:
    def test_constant_f(self):
        n = 64
        f = spx.GridField(np.full(n, 2.0), GEOM1)
        g = cos_field(k=3, n=n)
        out = spx.leibniz_check(f, g, r=1.0, multi_index=(1,))
        # lhs = |f| ||<grad>^{1/2} dg|| <= ||g||_{H^{3/2}} ||f||_inf exactly
        assert out["ratio"] <= 1.0 + 1e-12

    def test_single_mode_closed_value(self):
        # f = cos(2 pi x), g = cos(4 pi x): fg = (cos 2pi x + cos 6 pi x)/2
        n = 128
        x = np.arange(n) / n
        f = spx.GridField(np.cos(2 * np.pi * x), GEOM1)
        g = spx.GridField(np.cos(4 * np.pi * x), GEOM1)
        out = spx.leibniz_check(f, g, r=1.0, multi_index=(1,))
        b1 = (1 + 4 * np.pi**2) ** 0.25
        b3 = (1 + 36 * np.pi**2) ** 0.25
        lhs_exact = np.sqrt(
            (2 * np.pi * b1) ** 2 / 8 + (6 * np.pi * b3) ** 2 / 8
        )
        assert out["lhs"] == pytest.approx(lhs_exact, rel=1e-12)

    def test_band_stability(self):
        vals = []
        for band in (4, 8):
            f = spx.random_band_field(GEOM1, band=band, seed=21, n=128)
            g = spx.random_band_field(GEOM1, band=band, seed=22, n=128)
            vals.append(spx.leibniz_check(f, g, r=1.5, multi_index=(2,))["ratio"])
        assert vals[1] <= 1.25 * max(vals[0], 1.0)


class TestCSExtension:
    def test_boundary_condition(self):
        f = spx.random_band_field(GEOM1, band=4, seed=30)
        F = spx.cs_extension(f, 0.5, [0.0])
        assert np.allclose(F[0], f.values, atol=1e-14)

    def test_s1_closed_profile(self):
        # s = 1: P(w) = e^{-w}: single mode decays like e^{-z <2 pi>}
        f = cos_field(k=1, n=64)
        z = 0.3
        F = spx.cs_extension(f, 1.0, [z])
        m = np.sqrt(1 + 4 * np.pi**2)
        assert np.allclose(F[0], np.exp(-m * z) * f.values, atol=1e-10)

    def test_profile_quadrature_matches_closed(self):
        for s in (0.5, 1.0, 1.5):
            w = np.array([0.1, 1.0, 5.0])
            closed = spx.cs_profile(w, s)
            byquad = spx.cs_profile(w, s, method="quadrature")
            assert np.allclose(byquad, closed, rtol=1e-8)

    def test_d2n_constants(self):
        f = spx.random_band_field(GEOM1, band=3, seed=41)
        for s in (0.5, 1.0, 1.5):
            out = spx.cs_d2n_check(f, s)
            assert out["estimate"] == pytest.approx(out["target"], rel=1e-3)

    def test_energy_identity(self):
        f = spx.random_band_field(GEOM1, band=3, seed=42)
        for s in (0.5, 1.0, 1.5):
            out = spx.cs_energy_identity(f, s)
            assert out["rel_error"] < 1e-4
