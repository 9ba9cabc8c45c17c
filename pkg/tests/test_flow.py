import math

import numpy as np
import pytest

from cbbre.environment import EnvPath, sample_env_path
from cbbre.errors import ParameterError
from cbbre.flow import (
    closed_form_feller,
    closed_form_neveu,
    closed_form_stable,
    cond_explosion,
    cond_laplace,
    cond_survival,
    integral_exp_linear,
    solve_backward,
    solve_backward_batch,
    suffix_integral_exp_linear,
)
from cbbre.mechanisms import Feller, GeneralCB, Neveu, Stable

from conftest import make_flat


class TestPathIntegrals:
    def test_exact_on_linear_exponent(self):
        # int_0^1 e^{a+bu} du computed segment-exactly regardless of grid
        grid = np.array([0.0, 0.3, 0.55, 1.0])
        w = 0.7 + 1.9 * grid
        exact = (math.exp(0.7 + 1.9) - math.exp(0.7)) / 1.9
        assert integral_exp_linear(grid, w) == pytest.approx(exact, rel=1e-14)

    def test_suffix_shapes(self):
        grid = np.linspace(0.0, 1.0, 6)
        W = np.vstack([np.zeros(6), grid])
        out = suffix_integral_exp_linear(grid, W)
        assert out.shape == (2, 6)
        assert out[0, 0] == pytest.approx(1.0)
        assert out[1, -1] == 0.0


class TestClosedForms:
    def test_neveu_flat_unit(self):
        assert closed_form_neveu(1.0, 1.0, make_flat()) == pytest.approx(1.0)

    def test_neveu_flat_lambda_e(self):
        got = closed_form_neveu(math.e, 1.0, make_flat())
        assert got == pytest.approx(math.exp(math.exp(-1.0)), rel=1e-14)

    def test_neveu_rejects_zero_lambda(self):
        with pytest.raises(ParameterError):
            closed_form_neveu(0.0, 1.0, make_flat())

    def test_feller_flat(self):
        assert closed_form_feller(1.0, 1.0, make_flat(), 0.0, 1.0) == pytest.approx(0.5)

    def test_feller_lambda_infinity(self):
        env = make_flat(T=2.0, n=20)
        assert closed_form_feller(math.inf, 2.0, env, 0.0, 1.0) == pytest.approx(0.5)

    def test_stable_flat(self):
        env = make_flat(T=2.0, n=20)
        assert closed_form_stable(1.0, 2.0, env, 0.5, 1.0, 0.0) == pytest.approx(0.25)

    def test_stable_beta_one_is_feller(self):
        env = sample_env_path(1.0, -0.5, 1.0, 300, seed=5, flavor="K")
        for lam in (0.3, 1.0, 7.0):
            assert closed_form_stable(lam, 1.0, env, 1.0, 1.3, 0.4) == pytest.approx(
                closed_form_feller(lam, 1.0, env, 0.4, 1.3), rel=1e-13
            )

    def test_flavors_agree_pathwise(self):
        # K0 = K + alpha*t pathwise: v(K0-form, lam) = v(K-form, lam e^{-alpha t})
        alpha, t = 0.6, 1.0
        k_path = sample_env_path(1.0, -0.5, t, 200, seed=6, flavor="K")
        k0_path = EnvPath(k_path.grid, k_path.values + alpha * k_path.grid,
                          "K0", 1.0, -0.5 + alpha)
        lam = 2.0
        a = closed_form_feller(lam, t, k0_path, alpha, 1.0)
        b = closed_form_feller(lam * math.exp(-alpha * t), t, k_path, alpha, 1.0)
        assert a == pytest.approx(b, rel=1e-12)


class TestSolver:
    def test_lambda_zero_fixed_point(self):
        env = sample_env_path(1.0, -0.5, 1.0, 200, seed=7, flavor="K")
        sol = solve_backward(Stable(0.5, 0.5, 1.0), 0.0, 1.0, env)
        assert np.all(sol.values == 0.0)

    @pytest.mark.parametrize("mech,closed", [
        (Feller(0.5, 1.0), lambda e: closed_form_feller(1.0, 1.0, e, 0.5, 1.0)),
        (Stable(0.5, 0.5, 1.0), lambda e: closed_form_stable(1.0, 1.0, e, 0.5, 1.0, 0.5)),
        (Stable(0.5, -0.5, -1.0), lambda e: closed_form_stable(1.0, 1.0, e, -0.5, -1.0, 0.5)),
        (Neveu(), lambda e: closed_form_neveu(1.0, 1.0, e)),
    ])
    def test_matches_closed_form(self, mech, closed):
        env = sample_env_path(1.0, -0.5, 1.0, 1000, seed=8, flavor="K")
        sol = solve_backward(mech, 1.0, 1.0, env)
        assert sol.initial == pytest.approx(closed(env), abs=1e-8)

    def test_terminal_condition_exact(self):
        env = sample_env_path(1.0, -0.5, 1.0, 100, seed=9, flavor="K")
        sol = solve_backward(Feller(0.2, 1.0), 3.0, 1.0, env)
        assert sol.values[-1] == 3.0

    def test_semigroup_property(self):
        env = sample_env_path(1.0, -0.5, 1.0, 400, seed=10, flavor="K")
        mech = Stable(0.3, 0.5, 1.0)
        tol = 1e-10
        sol = solve_backward(mech, 1.0, 1.0, env, tol=tol)
        i_mid = 200
        s_mid = float(env.grid[i_mid])
        sub = EnvPath(env.grid[: i_mid + 1], env.values[: i_mid + 1], "K", 1.0, -0.5)
        sol2 = solve_backward(mech, float(sol.values[i_mid]), s_mid, sub, tol=tol)
        assert sol2.initial == pytest.approx(sol.initial, abs=2 * tol)

    def test_monotone_in_lambda(self):
        env = sample_env_path(1.0, -0.5, 1.0, 300, seed=11, flavor="K")
        mech = Stable(0.4, 0.5, 1.0)
        vals = [solve_backward(mech, lam, 1.0, env).initial for lam in (0.5, 1.0, 2.0, 8.0)]
        assert np.all(np.diff(vals) > 0)

    def test_conservative_small_lambda_limit(self):
        env = sample_env_path(1.0, 0.0, 1.0, 300, seed=12, flavor="K0")
        sol = solve_backward(Feller(0.5, 1.0), 1e-8, 1.0, env)
        assert sol.initial < 1e-6

    def test_general_cb_against_feller(self):
        env = sample_env_path(1.0, 0.0, 1.0, 500, seed=13, flavor="K0")
        g = GeneralCB(0.0, 0.5, 1.0)
        f = solve_backward(Feller(0.5, 1.0), 1.0, 1.0, env).initial
        assert solve_backward(g, 1.0, 1.0, env).initial == pytest.approx(f, rel=1e-10)

    def test_batch_shape(self):
        grid = np.linspace(0.0, 1.0, 101)
        K = np.cumsum(np.random.default_rng(0).normal(0, 0.1, (5, 101)), axis=1)
        K[:, 0] = 0.0
        out, blowup = solve_backward_batch(Feller(0.2, 1.0), 1.0, 1.0, grid, K, "K")
        assert out.shape == (5, 101) and blowup is None


class TestConditionalProbabilities:
    def test_empty_population(self, flat_path):
        assert cond_laplace(0.0, 1.0, 1.0, flat_path, Feller(0.0, 1.0)) == 1.0

    def test_lambda_zero_conservative(self, flat_path):
        assert cond_laplace(1.0, 0.0, 1.0, flat_path, Feller(0.0, 1.0)) == 1.0
        assert cond_laplace(1.0, 0.0, 1.0, flat_path, Neveu()) == 1.0

    def test_stable_flat_path_value(self, flat_path):
        got = cond_laplace(2.0, 1.0, 1.0, flat_path, Stable(0.0, 0.5, 1.0))
        v = (1.0 + 0.5 * 1.0) ** (-2.0)
        assert got == pytest.approx(math.exp(-2.0 * v), rel=1e-12)

    def test_branching_property_exact(self):
        env = sample_env_path(1.0, -0.5, 1.0, 300, seed=14, flavor="K")
        mech = Stable(0.5, 0.5, 1.0)
        for z1, z2 in [(0.5, 1.5), (2.0, 3.0)]:
            lhs = cond_laplace(z1 + z2, 1.0, 1.0, env, mech)
            rhs = cond_laplace(z1, 1.0, 1.0, env, mech) * cond_laplace(z2, 1.0, 1.0, env, mech)
            assert abs(lhs - rhs) <= 1e-12

    def test_survival_flat_value(self, flat_path):
        got = cond_survival(1.0, 1.0, flat_path, Feller(0.0, 1.0))
        assert got == pytest.approx(1.0 - math.exp(-1.0), rel=1e-12)

    def test_survival_short_horizon_approaches_one(self):
        env = make_flat(T=1e-6, n=4)
        assert cond_survival(1.0, 1e-6, env, Feller(0.0, 1.0)) > 1.0 - 1e-5

    def test_survival_trivial_for_negative_beta(self, flat_path):
        assert cond_survival(1.0, 1.0, flat_path, Stable(0.0, -0.5, -1.0)) == 1.0

    def test_survival_monotone_decreasing_in_t(self):
        env = sample_env_path(1.0, -0.5, 3.0, 600, seed=15, flavor="K")
        mech = Feller(0.1, 1.0)
        vals = []
        for i in (200, 400, 600):
            sub = EnvPath(env.grid[: i + 1], env.values[: i + 1], "K", 1.0, -0.5)
            vals.append(cond_survival(1.0, float(sub.T), sub, mech))
        assert vals[0] > vals[1] > vals[2]

    def test_explosion_flat_value(self, flat_path):
        got = cond_explosion(1.0, 1.0, flat_path, Stable(0.0, -0.5, -1.0))
        assert got == pytest.approx(1.0 - math.exp(-0.25), rel=1e-12)

    def test_explosion_zero_mass(self, flat_path):
        assert cond_explosion(0.0, 1.0, flat_path, Stable(0.0, -0.5, -1.0)) == 0.0

    def test_explosion_conservative_for_positive_beta(self, flat_path):
        assert cond_explosion(1.0, 1.0, flat_path, Stable(0.0, 0.5, 1.0)) == 0.0

    def test_explosion_monotone_increasing_in_t(self):
        env = sample_env_path(1.0, -0.5, 3.0, 600, seed=16, flavor="K")
        mech = Stable(0.1, -0.5, -1.0)
        vals = []
        for i in (200, 400, 600):
            sub = EnvPath(env.grid[: i + 1], env.values[: i + 1], "K", 1.0, -0.5)
            vals.append(cond_explosion(1.0, float(sub.T), sub, mech))
        assert vals[0] < vals[1] < vals[2]
