"""Conditioned processes: the Q-process and conditioning on extinction.

For m <= 0 the process conditioned to survive forever (Q-process) is the
Doob h-transform with martingale D_t = e^{theta t} U(Z_t), where U is the
regime-dependent survival constant viewed as a function of the initial mass
and theta the matching exponential rate.  For m > 0 the process conditioned
on eventual extinction is the h-transform with the bounded martingale
U_*(Z_t), U_* being the exact extinction probability.

All series appearing in the constants are evaluated through their
Gamma-expectation integral forms; reweighting of simulated paths is the
default route to Q-process functionals, with the generator identification
as a stable process-with-immigration available on the linear-U branches
(m <= -sigma^2) as an independent cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import rng as _rng
from .environment import MCEstimate, mc_log_exp_functionals
from .errors import ParameterError, RegimeError
from .longterm import (
    AsymptoticConstant,
    extinction_prob_exact_stable,
    phi_eta_grid,
)
from .mechanisms import (
    ConditionedRegime,
    EnvParams,
    Feller,
    ImmigrationMechanism,
    Mechanism,
    StableImmigration,
    SurvivalRegime,
    classify_regime,
)
from .numerics import gamma_power_laplace, gl_panels

__all__ = [
    "U",
    "U_vectorized",
    "theta",
    "qprocess_weights",
    "U_star",
    "U_star_vectorized",
    "conditioned_survival",
    "asympt_conditioned_constant",
    "qprocess_as_cbibre",
    "QprocessCbibre",
    "h_fn",
    "h_bounds",
]


# ---------------------------------------------------------------------------
# U, theta and the Q-process weights (m <= 0)
# ---------------------------------------------------------------------------


def _require_subcritical(env: EnvParams):
    if env.beta <= 0:
        raise ParameterError("the Q-process is defined for beta in (0,1]")
    if env.m > 0:
        raise RegimeError("U and theta require m <= 0 (condition on non-extinction)")


_U_CACHE: dict = {}


def U_vectorized(env: EnvParams):
    """The h-transform weight U as a vectorized callable of the state.

    Callables are cached per parameter set; the critical and weakly
    subcritical branches precompute their quadrature nodes once.
    """
    _require_subcritical(env)
    key = (env.sigma, env.alpha, env.beta, env.c)
    if key in _U_CACHE:
        return _U_CACHE[key]
    fn = _build_u(env)
    _U_CACHE[key] = fn
    return fn


def _chunked_rows(fn, z, block: int = 8000):
    # keep (paths x nodes) temporaries bounded
    out = np.empty(z.size)
    for i in range(0, z.size, block):
        out[i:i + block] = fn(z[i:i + block])
    return out


def _build_u(env: EnvParams):
    reg = classify_regime(env).survival
    b, s, kk, eta = env.beta, env.sigma, env.k, env.eta
    if reg is SurvivalRegime.CRITICAL:
        # sqrt(2/pi)/(b s) * int (1-e^{-zk x^{1/b}}) e^{-x}/x dx on panels
        w_nodes, w_w = gl_panels(np.geomspace(1e-12, 200.0, 260), 16)
        weight = w_w * np.exp(-(w_nodes**b)) * b / w_nodes
        pref = math.sqrt(2.0 / np.pi) / (b * s)

        def rows(zz):
            return pref * (-np.expm1(-np.outer(zz * kk, w_nodes)) @ weight)

        return lambda z: _chunked_rows(rows, np.maximum(np.asarray(z, float), 0.0))
    if reg is SurvivalRegime.WEAKLY_SUBCRITICAL:
        v, wv = gl_panels(np.geomspace(1e-9, 80.0 + 10.0 * eta, 240), 16)
        phi = phi_eta_grid(v, eta)
        weight = wv * phi
        pref = 8.0 / (b**3 * s**3)

        def rows(zz):
            arg = kk * np.outer(zz**b, v) ** (1.0 / b)
            return pref * (-np.expm1(-arg) @ weight)

        return lambda z: _chunked_rows(rows, np.maximum(np.asarray(z, float), 0.0))
    if reg is SurvivalRegime.INTERMEDIATELY_SUBCRITICAL:
        c = math.sqrt(2.0 / np.pi) * kk * special.gamma(1.0 / b) / (b * s)
        return lambda z: c * np.maximum(np.asarray(z, float), 0.0)
    c = kk * special.gamma(eta - 1.0 / b) / special.gamma(eta - 2.0 / b)
    return lambda z: c * np.maximum(np.asarray(z, float), 0.0)


def U(z: float, env: EnvParams) -> float:
    """The survival h-transform weight at a point; U(0) = 0."""
    if z < 0:
        raise ParameterError("z must be nonnegative")
    return float(U_vectorized(env)(np.array([z]))[0])


def theta(env: EnvParams) -> float:
    """Exponential rate of the Q-process martingale e^{theta t} U(Z_t)."""
    _require_subcritical(env)
    reg = classify_regime(env).survival
    if reg is SurvivalRegime.CRITICAL:
        return 0.0
    if reg is SurvivalRegime.WEAKLY_SUBCRITICAL:
        return env.m**2 / (2.0 * env.sigma**2)
    # intermediate and strong share the branch -(2m + sigma^2)/2
    return -0.5 * (2.0 * env.m + env.sigma**2)


def qprocess_weights(z_values, t: float, z0: float, env: EnvParams):
    """Normalized h-transform weights D_t / U(z0) for reweighted expectations.

    Absorbed paths (state 0) carry weight 0.  E[weights] = 1 within Monte
    Carlo error is the martingale property.
    """
    if z0 <= 0:
        raise ParameterError("z0 must be positive")
    u_fn = U_vectorized(env)
    th = theta(env)
    return math.exp(th * t) * u_fn(np.asarray(z_values, float)) / u_fn(np.array([z0]))[0]


# ---------------------------------------------------------------------------
# Conditioning on eventual extinction (m > 0)
# ---------------------------------------------------------------------------


def _require_supercritical(env: EnvParams):
    if env.beta <= 0:
        raise ParameterError("conditioning on extinction is defined for beta in (0,1]")
    if env.m <= 0:
        raise RegimeError("U_* requires m > 0 (extinction is certain otherwise)")


def U_star(z: float, env: EnvParams) -> float:
    """U_*(z) = E[exp(-z k Gamma_{-eta}^{1/beta})], the extinction martingale."""
    _require_supercritical(env)
    if z < 0:
        raise ParameterError("z must be nonnegative")
    if z == 0:
        return 1.0
    return extinction_prob_exact_stable(z, env)


def U_star_vectorized(env: EnvParams):
    """Vectorized U_* on a fixed Gamma quadrature (for path reweighting)."""
    _require_supercritical(env)
    shape = -env.eta
    x, w = gl_panels(np.geomspace(1e-10, 60.0 + 12.0 * shape, 200), 12)
    weight = w * x ** (shape - 1.0) * np.exp(-x) / special.gamma(shape)
    pow_x = x ** (1.0 / env.beta)
    kk = env.k

    def rows(zz):
        return np.exp(-kk * np.outer(zz, pow_x)) @ weight

    return lambda z: _chunked_rows(rows, np.maximum(np.asarray(z, float), 0.0))


def h_fn(x, y, k: float, beta: float):
    """h(x, y) = exp(-k x^{1/beta}) - exp(-k (x+y)^{1/beta})."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return np.exp(-k * x ** (1.0 / beta)) - np.exp(-k * (x + y) ** (1.0 / beta))


def h_bounds(x, y, eps: float, k: float, beta: float):
    """Pointwise envelope for h from the mean value theorem.

    lower: (k/beta) x^{1/beta-1} e^{-k(x+y)^{1/beta}} y
    upper: (k/beta) e^{-k x^{1/beta}} ((x+eps)^{1/beta-1} y
                                       + (x/eps+1)^{1/beta-1} y^{1/beta})
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    kb = k / beta
    lower = kb * x ** (1.0 / beta - 1.0) * np.exp(-k * (x + y) ** (1.0 / beta)) * y
    upper = kb * np.exp(-k * x ** (1.0 / beta)) * (
        (x + eps) ** (1.0 / beta - 1.0) * y + (x / eps + 1.0) ** (1.0 / beta - 1.0) * y ** (1.0 / beta)
    )
    return lower, upper


def conditioned_survival(z: float, t: float, env: EnvParams,
                         n_mc: int = 100_000, n_steps: int | None = None,
                         seed: int = 0, method: str = "formula-mc") -> MCEstimate:
    """P*_z(Z_t > 0): survival of the process conditioned on extinction.

    Evaluates E[h(z^beta G, z^beta/(2 I_nu^(-eta)))] / U_*(z) with
    G ~ Gamma(-eta) independent of the exponential functional, either by
    Monte Carlo (``"formula-mc"``) or by a Gamma x density tensor quadrature
    (``"quadrature"``; the relevant drift is -eta > 0, so the density route
    is always valid here).
    """
    _require_supercritical(env)
    if z <= 0:
        raise ParameterError("z must be positive")
    nu = env.beta**2 * env.sigma**2 * t / 4.0
    ustar = U_star(z, env)
    if method == "quadrature":
        from .environment import my_density_grid, _default_v_rule

        shape = -env.eta
        x, wx = gl_panels(np.geomspace(1e-10, 60.0 + 12.0 * shape, 240), 16)
        wx = wx * x ** (shape - 1.0) * np.exp(-x) / special.gamma(shape)
        v, wv = _default_v_rule(nu, abs(env.eta))
        wv = wv * my_density_grid(v, nu, abs(env.eta))
        H = h_fn(z**env.beta * x[:, None], z**env.beta * v[None, :], env.k, env.beta)
        val = float(wx @ H @ wv) / ustar
        return MCEstimate(val, 0.0, 0, "quadrature",
                          {"nu": nu, "eta": env.eta, "u_star": ustar})
    n_steps = n_steps or max(400, int(round(2000 * nu)))
    logI = mc_log_exp_functionals(-env.eta, nu, n_mc, n_steps, seed)
    gamma_draws = _rng.stream(seed, 9001).gamma(-env.eta, size=n_mc)
    y = np.exp(-math.log(2.0) - logI)
    samples = h_fn(z**env.beta * gamma_draws, z**env.beta * y, env.k, env.beta)
    samples = samples / ustar
    se = float(samples.std(ddof=1) / math.sqrt(n_mc))
    manifest = {"seed": seed, "n_paths": n_mc, "n_steps": n_steps,
                "estimator": "conditioned-survival-formula", "u_star": ustar}
    return MCEstimate(float(samples.mean()), se, n_mc, "formula-mc", manifest)


def asympt_conditioned_constant(z: float, env: EnvParams) -> AsymptoticConstant:
    """Theorem-5-type constants for the conditioned supercritical regimes."""
    _require_supercritical(env)
    if z <= 0:
        raise ParameterError("z must be positive")
    reg = classify_regime(env).conditioned
    b, s, kk, eta = env.beta, env.sigma, env.k, env.eta
    ustar = U_star(z, env)
    if reg is ConditionedRegime.WEAKLY_SUPERCRITICAL:
        ae = abs(eta)
        x, wx = gl_panels(np.geomspace(1e-10, 60.0 + 12.0 * ae, 200), 12)
        wx = wx * x ** (ae - 1.0) * np.exp(-x)
        y, wy = gl_panels(np.geomspace(1e-9, 80.0 + 10.0 * ae, 200), 12)
        wy = wy * phi_eta_grid(y, ae)
        H = h_fn(z**b * x[:, None], z**b * y[None, :], kk, b)
        const = 8.0 / (b**3 * s**3 * special.gamma(ae) * ustar) * float(wx @ H @ wy)
        return AsymptoticConstant(reg.value, 1.5, env.m**2 / (2.0 * s**2), const, "quadrature")
    if reg is ConditionedRegime.INTERMEDIATELY_SUPERCRITICAL:
        # E[e^{-zk G^{1/b}} G^{1/b}] over G ~ Gamma(2) = Gamma(1/b+1) * laplace form
        shape = 1.0 / b + 1.0
        integral = special.gamma(shape) * gamma_power_laplace(z * kk, shape, 1.0 / b)
        const = z * kk * math.sqrt(2.0) / (b**2 * s * math.sqrt(np.pi) * ustar) * integral
        return AsymptoticConstant(reg.value, 0.5, 0.5 * b**2 * s**2, const, "gamma-expectation")
    if reg is ConditionedRegime.STRONGLY_SUPERCRITICAL:
        shape = 1.0 / b - eta - 1.0
        integral = special.gamma(shape) * gamma_power_laplace(z * kk, shape, 1.0 / b)
        const = -z * kk * (eta + 2.0) / (b * ustar * special.gamma(-eta)) * integral
        return AsymptoticConstant(reg.value, 0.0, 0.5 * b * (2.0 * env.m - b * s**2), const,
                                  "gamma-expectation")
    raise RegimeError("no conditioned regime for these parameters")


# ---------------------------------------------------------------------------
# Q-process generator identification (m <= -sigma^2)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QprocessCbibre:
    """The Q-process realized as a stable CBIBRE (linear-U branches only)."""

    mechanism: Mechanism
    immigration: ImmigrationMechanism
    sigma: float


def qprocess_as_cbibre(env: EnvParams) -> QprocessCbibre:
    """Identify the Q-process generator: drift alpha + sigma^2, immigration
    phi(u) = c (beta+1) u^beta, same Brownian environment.

    Only derived for m <= -sigma^2 (where U is linear).
    """
    _require_subcritical(env)
    if env.m > -env.sigma**2 + 1e-12:
        raise RegimeError(
            "the generator identification holds for m <= -sigma^2 only"
        )
    alpha_q = env.alpha + env.sigma**2
    b, c = env.beta, env.c
    if b == 1.0:
        mech: Mechanism = Feller(alpha_q, c)
        imm = ImmigrationMechanism(d=2.0 * c, nu=None)
    else:
        from .mechanisms import Stable

        mech = Stable(alpha_q, b, c)
        imm = ImmigrationMechanism(d=0.0, nu=StableImmigration(b, c * (b + 1.0)))
    return QprocessCbibre(mech, imm, env.sigma)
