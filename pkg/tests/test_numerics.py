import numpy as np
import pytest
from scipy import special

from cbbre.numerics import (
    gamma_power_laplace,
    gamma_power_series,
    gl_panels,
    has_fast_kernel,
    u_half,
    u_half_diff,
)


class TestPanels:
    def test_polynomial_exact(self):
        x, w = gl_panels(np.linspace(0.0, 2.0, 5), order=8)
        assert np.sum(w * x**7) == pytest.approx(2.0**8 / 8, rel=1e-14)

    def test_additivity(self):
        x1, w1 = gl_panels(np.array([0.0, 1.0]), 16)
        x2, w2 = gl_panels(np.array([0.0, 0.5, 1.0]), 16)
        f = lambda x: np.exp(-3 * x) * np.sin(x)
        assert np.sum(w1 * f(x1)) == pytest.approx(np.sum(w2 * f(x2)), rel=1e-13)


class TestConfluentKernel:
    # scipy's hyperu is only ~1e-9 accurate in places; it brackets the fast
    # kernel loosely, and mpmath pins a few points tightly
    @pytest.mark.parametrize("a", [0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    def test_matches_hyperu(self, a):
        w = np.geomspace(1e-6, 1e5, 60)
        ref = special.hyperu(a, 0.5, w)
        np.testing.assert_allclose(u_half(a, w), ref, rtol=1e-7)

    @pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 3.0])
    def test_matches_mpmath(self, a):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 30
        w = np.geomspace(1e-5, 3e4, 25)
        ref = np.array([float(mpmath.hyperu(a, 0.5, x)) for x in w])
        np.testing.assert_allclose(u_half(a, w), ref, rtol=5e-12)

    def test_value_at_small_w_limit(self):
        # U(a, 1/2, w) -> sqrt(pi)/Gamma(a + 1/2) + O(sqrt(w))
        for a in (0.5, 1.0, 2.5):
            lim = np.sqrt(np.pi) / special.gamma(a + 0.5)
            assert u_half(a, np.array([1e-14]))[0] == pytest.approx(lim, rel=1e-6)

    def test_fallback_for_generic_a(self):
        w = np.array([0.7, 3.0])
        np.testing.assert_allclose(u_half(0.8, w), special.hyperu(0.8, 0.5, w), rtol=1e-10)

    def test_fast_kernel_flag(self):
        assert has_fast_kernel(2.5)
        assert not has_fast_kernel(0.8)
        assert not has_fast_kernel(4.0)


class TestKernelDifference:
    @pytest.mark.parametrize("a", [0.5, 1.0, 2.5])
    def test_relative_accuracy_at_tiny_w(self, a):
        # direct subtraction loses everything below w ~ 1e-16; the series
        # form must keep full relative accuracy
        w = np.geomspace(1e-30, 0.4, 40)
        got = u_half_diff(a, w)
        # reference: leading terms of the connection formula
        ref = (np.sqrt(np.pi) * (a / 0.5) * w / special.gamma(a + 0.5)
               - 2 * np.sqrt(np.pi) * np.sqrt(w) / special.gamma(a))
        mask = w < 1e-6
        np.testing.assert_allclose(got[mask], ref[mask], rtol=1e-5)

    def test_series_agrees_with_subtraction_near_switch(self):
        # both evaluation routes at the same points, either side of 0.45
        u0 = lambda a: np.sqrt(np.pi) / special.gamma(a + 0.5)
        for a in (0.5, 1.5, 2.5):
            for w in (0.4, 0.44):
                series = u_half_diff(a, np.array([w]))[0]
                direct = u_half(a, np.array([w]))[0] - u0(a)
                assert series == pytest.approx(direct, rel=3e-13)


class TestGammaPowerLaplace:
    def test_power_one_closed_form(self):
        # E[e^{-theta G}] = (1+theta)^(-shape)
        for theta, shape in [(0.5, 2.0), (1.0, 3.5), (3.0, 0.7)]:
            assert gamma_power_laplace(theta, shape, 1.0) == pytest.approx(
                (1.0 + theta) ** (-shape), rel=1e-12
            )

    def test_theta_zero(self):
        assert gamma_power_laplace(0.0, 2.0, 0.5) == 1.0

    def test_negative_power_vs_mc(self):
        # E[e^{-theta G^{-2}}], G ~ Exp(1)
        rng = np.random.default_rng(0)
        g = rng.exponential(size=400000)
        smp = np.exp(-0.7 * g**-2.0)
        se = smp.std(ddof=1) / np.sqrt(g.size)
        assert abs(gamma_power_laplace(0.7, 1.0, -2.0) - smp.mean()) < 3 * se

    def test_fractional_power_vs_quad(self):
        from scipy.integrate import quad

        shape, power, theta = 1.5, 2.0, 0.8
        ref, _ = quad(lambda x: np.exp(-theta * x**power) * x**(shape - 1)
                      * np.exp(-x) / special.gamma(shape), 0, np.inf)
        assert gamma_power_laplace(theta, shape, power) == pytest.approx(ref, rel=1e-10)

    def test_series_diagnostic_small_argument(self):
        # for power=1 the series is convergent and matches the closed form
        val, _ = gamma_power_series(0.1, 2.0, 1.0, n_terms=30)
        assert val == pytest.approx(1.1**-2.0, rel=1e-8)
