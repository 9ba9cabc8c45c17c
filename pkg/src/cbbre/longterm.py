"""Unconditional survival, explosion, extinction, and asymptotic constants.

Everything stable reduces to functionals of the exponential drift integral

    A_t = int_0^t exp(-beta (K_u + alpha u)) du  =d  (4/(beta^2 sigma^2)) I_nu^(eta)

with nu = beta^2 sigma^2 t / 4.  Probabilities can thus be computed two
independent ways: Monte Carlo over environment paths, and quadrature against
the density of 1/(2 I_nu^(eta)).  Limits as t -> infinity become Gamma
expectations through Dufresne's identity, which is also how the five survival
regimes and three explosion regimes get their constants.

Series forms of the regime constants are formal for beta < 1 (the terms grow
factorially); the canonical numerical object is always the Gamma-expectation
or integral form, and truncated series are exposed only as diagnostics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .environment import (
    MCEstimate,
    density_expectation,
    hw_marginal_expectation,
    sample_env_paths,
)
from .errors import MethodError, ParameterError, RegimeError
from .mechanisms import (
    EnvParams,
    ExplosionRegime,
    SurvivalRegime,
    classify_regime,
)
from .numerics import gamma_power_laplace, gl_panels

__all__ = [
    "survival_prob",
    "explosion_prob",
    "extinction_prob_exact_stable",
    "ExtinctionBounds",
    "extinction_bounds",
    "AsymptoticConstant",
    "asympt_survival_constant",
    "asympt_explosion_constant",
    "phi_eta",
    "phi_eta_grid",
    "critical_constant_integral",
    "neveu_longterm",
    "NeveuReport",
    "survival_scaled_trend",
]


# ---------------------------------------------------------------------------
# Finite-time probabilities: MC over environments vs density quadrature
# ---------------------------------------------------------------------------


def _mc_log_a(env: EnvParams, t: float, n_paths: int, n_steps: int, seed: int):
    """log A_t over sampled environments (exact-linear segment integration)."""
    grid, K = sample_env_paths(env.sigma, env.m, t, n_steps, seed, n_paths)
    # log-space exact segment integrals of exp(-beta*K0)
    W = -env.beta * K
    dw = np.diff(W, axis=1)
    dt = np.diff(grid)
    with np.errstate(divide="ignore"):
        ratio = np.where(np.abs(dw) > 1e-8, np.expm1(dw) / np.where(dw == 0, 1.0, dw), 1.0 + 0.5 * dw)
    seg_log = W[:, :-1] + np.log(dt) + np.log(ratio)
    return special.logsumexp(seg_log, axis=1)


def _default_steps(t: float) -> int:
    return max(400, int(round(200 * t)))


def survival_prob(z: float, t: float, env: EnvParams, method: str = "mc",
                  n_paths: int = 30000, n_steps: int | None = None,
                  seed: int = 0) -> MCEstimate:
    """P_z(Z_t > 0) for the stable family with beta in (0, 1].

    Methods: ``"mc"`` averages the conditional survival over sampled
    environments; ``"quadrature"`` integrates against the density of
    1/(2 I_nu^(eta)) (requires eta > -1).
    """
    if env.beta <= 0:
        raise ParameterError("survival_prob requires beta in (0,1]")
    if z < 0:
        raise ParameterError("z must be nonnegative")
    if z == 0:
        return MCEstimate(0.0, 0.0, 0, method, {"trivial": "z=0"})
    nu = env.beta**2 * env.sigma**2 * t / 4.0
    kk = env.k
    if method == "mc":
        n_steps = n_steps or _default_steps(t)
        log_a = _mc_log_a(env, t, n_paths, n_steps, seed)
        arg = z * (env.beta * env.c) ** (-1.0 / env.beta) * np.exp(-log_a / env.beta)
        ps = -np.expm1(-arg)
        se = float(ps.std(ddof=1) / math.sqrt(n_paths))
        manifest = {"seed": seed, "n_paths": n_paths, "n_steps": n_steps,
                    "estimator": "mean cond_survival"}
        return MCEstimate(float(ps.mean()), se, n_paths, "mc", manifest)
    if method == "quadrature":
        if env.eta <= -1.0:
            raise MethodError("density quadrature requires eta > -1")
        val = density_expectation(
            lambda v: -np.expm1(-kk * (z**env.beta * v) ** (1.0 / env.beta)), nu, env.eta
        )
        return MCEstimate(float(val), 0.0, 0, "quadrature", {"nu": nu, "eta": env.eta})
    raise MethodError(f"unknown method {method!r}")


def explosion_prob(z: float, t: float, env: EnvParams, method: str = "mc",
                   n_paths: int = 30000, n_steps: int | None = None,
                   seed: int = 0) -> MCEstimate:
    """P_z(Z_t = infinity) for beta in (-1, 0); positive for every t > 0.

    Methods: ``"mc"``; ``"quadrature"`` (p-density, needs eta > -1);
    ``"quadrature-hw"`` (Hartman-Watson marginal, valid for every eta).
    """
    if not -1.0 < env.beta < 0.0:
        raise ParameterError("explosion_prob requires beta in (-1,0)")
    if z < 0:
        raise ParameterError("z must be nonnegative")
    if z == 0:
        return MCEstimate(0.0, 0.0, 0, method, {"trivial": "z=0"})
    nu = env.beta**2 * env.sigma**2 * t / 4.0
    kk = env.k
    if method == "mc":
        n_steps = n_steps or _default_steps(t)
        log_a = _mc_log_a(env, t, n_paths, n_steps, seed)
        arg = z * (env.beta * env.c) ** (-1.0 / env.beta) * np.exp(-log_a / env.beta)
        ps = -np.expm1(-arg)
        se = float(ps.std(ddof=1) / math.sqrt(n_paths))
        manifest = {"seed": seed, "n_paths": n_paths, "n_steps": n_steps,
                    "estimator": "mean cond_explosion"}
        return MCEstimate(float(ps.mean()), se, n_paths, "mc", manifest)
    if method == "quadrature":
        if env.eta <= -1.0:
            raise MethodError("density quadrature requires eta > -1; "
                              "use 'quadrature-hw' for eta <= -1")
        conserv = density_expectation(
            lambda v: np.exp(-kk * (z**env.beta * v) ** (1.0 / env.beta)), nu, env.eta
        )
        return MCEstimate(float(1.0 - conserv), 0.0, 0, "quadrature",
                          {"nu": nu, "eta": env.eta})
    if method == "quadrature-hw":
        conserv = hw_marginal_expectation(
            lambda u: np.exp(-z * kk * (2.0 * u) ** (-1.0 / env.beta)), nu, env.eta
        )
        return MCEstimate(float(1.0 - conserv), 0.0, 0, "quadrature-hw",
                          {"nu": nu, "eta": env.eta})
    raise MethodError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Exact extinction probability and bounds
# ---------------------------------------------------------------------------


def extinction_prob_exact_stable(z: float, env: EnvParams) -> float:
    """P_z(lim Z_t = 0) for stable beta in (0,1].

    Equals E[exp(-z k Gamma_{-eta}^{1/beta})] when m > 0 (via Dufresne) and
    1 otherwise.
    """
    if env.beta <= 0:
        raise ParameterError("extinction requires beta in (0,1]")
    if z < 0:
        raise ParameterError("z must be nonnegative")
    if env.m <= 0:
        return 1.0
    return gamma_power_laplace(z * env.k, -env.eta, 1.0 / env.beta)


@dataclass(frozen=True)
class ExtinctionBounds:
    lower: float          # (1 + z sigma^2/gamma^2)^(-2m/sigma^2)
    upper: float | None   # (1 + z sigma^2/(2(gamma^2+kappa)))^(-2m/sigma^2)
    remark_lower: float   # (1 + z sigma^2/(2 gamma^2))^(-2m/sigma^2)
    remark_upper: float | None


def extinction_bounds(z: float, env: EnvParams, gamma2: float,
                      kappa: float = 0.0) -> ExtinctionBounds:
    """Lower/upper bounds on the extinction probability for m > 0.

    ``kappa`` is the second tail moment int_1^inf x^2 mu(dx); the upper
    bound is unavailable when it is infinite.
    """
    if gamma2 <= 0:
        raise ParameterError("bounds require gamma2 > 0")
    if env.m <= 0:
        return ExtinctionBounds(1.0, 1.0, 1.0, 1.0)
    expo = -2.0 * env.m / env.sigma**2
    s2 = env.sigma**2
    lower = (1.0 + z * s2 / gamma2) ** expo
    remark_lower = (1.0 + z * s2 / (2.0 * gamma2)) ** expo
    if math.isinf(kappa):
        return ExtinctionBounds(lower, None, remark_lower, None)
    upper = (1.0 + 0.5 * z * s2 / (gamma2 + kappa)) ** expo
    return ExtinctionBounds(lower, upper, remark_lower, upper)


# ---------------------------------------------------------------------------
# phi_eta and the regime constants
# ---------------------------------------------------------------------------

_PHI_CACHE: dict = {}


def _phi_xi_rule(eta: float):
    # integrand tail ~ xi e^{-eta xi}: truncate where it is < 1e-16 of peak
    ximax = (40.0 + 4.0 * math.log1p(1.0 / eta)) / eta + 2.0 / eta + 2.0
    width = min(0.5, ximax / 24.0)
    return gl_panels(np.arange(0.0, ximax + width, width), 16)


def phi_eta_grid(v, eta: float, n_lag: int = 96):
    """phi_eta on an array of points by the tensor rule.

    Generalized Gauss-Laguerre (weight u^{(eta-1)/2} e^{-u}) in u crossed
    with Gauss-Legendre panels in xi, truncated where the integrand has
    decayed to ~1e-16 of its peak.
    """
    if eta <= 0:
        raise ParameterError("phi_eta requires eta > 0")
    v = np.asarray(v, float)
    key = (round(eta, 12), n_lag)
    if key not in _PHI_CACHE:
        u, wu = special.roots_genlaguerre(n_lag, 0.5 * (eta - 1.0))
        xi, wx = _phi_xi_rule(eta)
        _PHI_CACHE[key] = (u, wu, xi, wx * np.sinh(xi) * np.cosh(xi) * xi)
    u, wu, xi, wxs = _PHI_CACHE[key]
    pref = special.gamma(0.5 * (eta + 2.0)) / (math.sqrt(2.0) * np.pi) * np.exp(-v) * v ** (-0.5 * eta)
    c2 = np.cosh(xi) ** 2
    out = np.empty_like(v)
    chunk = max(1, int(2e6 / (u.size * xi.size)))
    for i0 in range(0, v.size, chunk):
        vv = v[i0:i0 + chunk, None, None]
        M = (u[None, :, None] + vv * c2[None, None, :]) ** (-0.5 * (eta + 2.0))
        out[i0:i0 + chunk] = np.einsum("j,ijk,k->i", wu, M, wxs)
    return pref * out


def phi_eta(v: float, eta: float) -> float:
    """The weakly-regime spectral weight at a single point (positive)."""
    vals = [phi_eta_grid(np.array([v]), eta, n)[0] for n in (96, 144)]
    if abs(vals[1] - vals[0]) > 1e-8 * max(1.0, abs(vals[1])):
        raise RegimeError(f"phi_eta quadrature unstable at v={v}, eta={eta}: {vals}")
    return float(vals[1])


def _phi_functional(func, eta: float) -> float:
    """int func(v) phi_eta(v) dv on a cached log grid."""
    v, w = gl_panels(np.geomspace(1e-9, 80.0 + 10.0 * eta, 240), 16)
    return float(np.sum(w * func(v) * phi_eta_grid(v, eta)))


def critical_constant_integral(q: float, beta: float) -> float:
    """int_0^inf (1 - e^{-q x^{1/beta}}) e^{-x}/x dx (canonical form).

    For beta = 1 this is log(1 + q).
    """
    if q < 0:
        raise ParameterError("q must be nonnegative")
    if q == 0:
        return 0.0

    def f(w):
        # x = w^beta
        return -np.expm1(-q * w) * np.exp(-(w**beta)) * beta / w

    cut = 10.0 + 2.0 / max(q, 1e-10)
    v1, _ = integrate.quad(f, 0.0, cut, points=[min(1.0 / max(q, 1e-10), cut), 1.0], limit=400)
    v2, _ = integrate.quad(f, cut, np.inf, limit=400)
    return float(v1 + v2)


@dataclass(frozen=True)
class AsymptoticConstant:
    """P(t) ~ constant / (t^rate_power * exp(rate_exp * t)) as t -> infinity."""

    regime: str
    rate_power: float
    rate_exp: float
    constant: float
    method: str

    def scale(self, t: float) -> float:
        """Multiplier M(t) with M(t) * P(t) -> constant."""
        return t**self.rate_power * math.exp(self.rate_exp * t)


def asympt_survival_constant(z: float, env: EnvParams) -> AsymptoticConstant:
    """The five survival regimes of the stable CBBRE (beta in (0,1])."""
    if env.beta <= 0:
        raise ParameterError("survival asymptotics require beta in (0,1]")
    if z <= 0:
        raise ParameterError("z must be positive")
    reg = classify_regime(env).survival
    b, s, kk, eta = env.beta, env.sigma, env.k, env.eta
    if reg is SurvivalRegime.SUPERCRITICAL:
        const = 1.0 - gamma_power_laplace(z * kk, -eta, 1.0 / b)
        return AsymptoticConstant(reg.value, 0.0, 0.0, const, "gamma-expectation")
    if reg is SurvivalRegime.CRITICAL:
        const = math.sqrt(2.0 / np.pi) / (b * s) * critical_constant_integral(z * kk, b)
        return AsymptoticConstant(reg.value, 0.5, 0.0, const, "quadrature")
    if reg is SurvivalRegime.WEAKLY_SUBCRITICAL:
        const = 8.0 / (b**3 * s**3) * _phi_functional(
            lambda v: -np.expm1(-kk * (z**b * v) ** (1.0 / b)), eta
        )
        return AsymptoticConstant(reg.value, 1.5, env.m**2 / (2.0 * s**2), const, "quadrature")
    if reg is SurvivalRegime.INTERMEDIATELY_SUBCRITICAL:
        const = z * math.sqrt(2.0 / np.pi) * kk * special.gamma(1.0 / b) / (b * s)
        return AsymptoticConstant(reg.value, 0.5, s**2 / 2.0, const, "closed-form")
    # strongly subcritical
    const = z * kk * special.gamma(eta - 1.0 / b) / special.gamma(eta - 2.0 / b)
    return AsymptoticConstant(reg.value, 0.0, -0.5 * (2.0 * env.m + s**2), const, "closed-form")


def asympt_explosion_constant(z: float, env: EnvParams) -> AsymptoticConstant:
    """The three explosion regimes of the stable CBBRE (beta in (-1,0)).

    The constants describe P_z(Z_t < infinity): its limit in the
    subcritical-explosion regime, and its decay rate otherwise.
    """
    if not -1.0 < env.beta < 0.0:
        raise ParameterError("explosion asymptotics require beta in (-1,0)")
    if z <= 0:
        raise ParameterError("z must be positive")
    reg = classify_regime(env).explosion
    b, s, kk, eta = env.beta, env.sigma, env.k, env.eta
    if reg is ExplosionRegime.SUBCRITICAL_EXPLOSION:
        const = gamma_power_laplace(z * kk, -eta, 1.0 / b)
        return AsymptoticConstant(reg.value, 0.0, 0.0, const, "gamma-expectation")
    if reg is ExplosionRegime.CRITICAL_EXPLOSION:

        def f(x):
            return np.exp(-z * kk * x ** (1.0 / b) - x) / x

        v1, _ = integrate.quad(f, 0.0, 20.0, points=[1e-3, 1.0], limit=400)
        v2, _ = integrate.quad(f, 20.0, np.inf, limit=200)
        const = -math.sqrt(2.0 / np.pi) / (b * s) * (v1 + v2)
        return AsymptoticConstant(reg.value, 0.5, 0.0, const, "quadrature")
    # supercritical-explosion
    const = -8.0 / (b**3 * s**3) * _phi_functional(
        lambda v: np.exp(-kk * (z**b * v) ** (1.0 / b)), eta
    )
    return AsymptoticConstant(reg.value, 1.5, env.m**2 / (2.0 * s**2), const, "quadrature")


def survival_scaled_trend(z: float, env: EnvParams, ts) -> list[dict]:
    """Quadrature survival probabilities with the regime scaling applied."""
    const = asympt_survival_constant(z, env)
    rows = []
    for t in ts:
        p = survival_prob(z, t, env, method="quadrature")
        scaled = p.value * const.scale(t)
        rows.append({
            "t": float(t), "p": p.value, "scaled": scaled,
            "constant": const.constant,
            "rel_gap": abs(scaled - const.constant) / abs(const.constant),
        })
    return rows


# ---------------------------------------------------------------------------
# Neveu long-term behaviour
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeveuReport:
    prob_limit_zero: float  # P_z(lim Z_t e^{-K_t} = 0)
    mean_is_infinite: bool
    method: str


def neveu_longterm(z: float, sigma: float, n_hermite: int = 201) -> NeveuReport:
    """P_z(lim Z_t e^{-K_t} = 0) = E[exp(-z e^G)], G ~ N(-sigma^2/2, sigma^2/2).

    The Neveu process itself survives almost surely and has infinite mean at
    every positive time.
    """
    if z < 0:
        raise ParameterError("z must be nonnegative")
    if sigma == 0.0:
        return NeveuReport(math.exp(-z), True, "degenerate")
    x, w = np.polynomial.hermite_e.hermegauss(n_hermite)
    g = -0.5 * sigma**2 + math.sqrt(0.5) * sigma * x
    val = float(np.sum(w * np.exp(-z * np.exp(g))) / math.sqrt(2.0 * np.pi))
    return NeveuReport(val, True, "gauss-hermite")
