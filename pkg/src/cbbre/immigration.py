"""Branching with immigration: conditional semigroup and long-term behaviour.

With immigration (d, nu) the conditional Laplace transform picks up the
factor exp(-int_0^t phi(v_t(r, lambda) e^{-K0_r}) dr) multiplying the pure
branching part; zero stops being absorbing and the process is conservative
and positive at every finite time in the stable case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .environment import EnvPath, MCEstimate, sample_env_paths
from .errors import ParameterError, UnsupportedMechanismError
from .flow import solve_backward, suffix_integral_exp_linear
from .mechanisms import (
    EnvParams,
    ImmigrationMechanism,
    Mechanism,
    StableImmigration,
    is_infinite_mean,
)
from .numerics import gl_panels

__all__ = [
    "ImmigrationMechanism",
    "StableImmigration",
    "cbibre_cond_laplace",
    "stable_cbibre_laplace",
    "entrance_law",
    "cbibre_longterm",
    "CbibreLongterm",
]


def cbibre_cond_laplace(z: float, lam: float, t: float, env: EnvPath,
                        mech: Mechanism, imm: ImmigrationMechanism,
                        tol: float = 1e-10) -> float:
    """E_z[exp(-lambda Z_t e^{-K0_t}) | K0] with immigration.

    The branching factor uses the drift-free backward equation (psi0); the
    immigration factor integrates phi(v e^{-K0}) along the solution by
    composite Simpson on the environment grid.
    """
    if z < 0:
        raise ParameterError("initial mass must be nonnegative")
    if is_infinite_mean(mech):
        raise UnsupportedMechanismError(
            "the immigration semigroup is defined for finite-mean mechanisms"
        )
    if env.flavor != "K0":
        raise ParameterError("immigration formulas condition on K0-flavored paths")
    sol = solve_backward(mech, lam, t, env, tol=tol)
    branch = math.exp(-z * sol.initial) if z > 0 else 1.0
    if imm.trivial:
        return branch
    imm_integral = 0.0
    # drift and stable-tail parts are exp(linear) along the declared path
    # model once log v is interpolated linearly: integrate segments exactly
    log_u = np.log(np.maximum(sol.values, 1e-300)) - env.values
    if imm.d > 0:
        imm_integral += imm.d * _integral_exp_linear(env.grid, log_u)
    if isinstance(imm.nu, StableImmigration):
        b = imm.nu.beta
        imm_integral += imm.nu.kappa * _integral_exp_linear(env.grid, b * log_u)
    elif imm.nu is not None:
        tail = imm.eval_phi(np.exp(log_u)) - imm.d * np.exp(log_u)
        imm_integral += float(integrate.simpson(tail, x=env.grid))
    return branch * math.exp(-imm_integral)


def _integral_exp_linear(grid, w):
    return float(suffix_integral_exp_linear(grid, w)[0])


def _a_t(env: EnvPath, beta: float) -> float:
    # int_0^t exp(-beta K0_s) ds, exact under linear interpolation
    return float(suffix_integral_exp_linear(env.grid, -beta * env.values)[0])


def stable_cbibre_laplace(z: float, lam: float, t: float, env: EnvPath,
                          beta: float, c: float, kappa: float) -> float:
    """Closed form for psi(u) = -alpha u + c u^{1+beta}, phi(u) = kappa u^beta.

    Product of the stable branching factor and the entrance-law factor
    (1 + beta c lambda^beta A_t)^(-kappa/(beta c)), A_t = int e^{-beta K0}.
    """
    if not 0.0 < beta < 1.0 or c <= 0 or kappa < 0:
        raise ParameterError("need beta in (0,1), c > 0, kappa >= 0")
    if env.flavor != "K0":
        raise ParameterError("the closed form conditions on K0-flavored paths")
    if z < 0 or lam < 0:
        raise ParameterError("z and lambda must be nonnegative")
    A = _a_t(env, beta)
    if lam == 0.0:
        return 1.0
    factor_imm = math.exp(-(kappa / (beta * c)) * math.log1p(beta * c * lam**beta * A))
    if z == 0.0:
        return factor_imm
    v0 = (lam ** (-beta) + beta * c * A) ** (-1.0 / beta)
    return math.exp(-z * v0) * factor_imm


def entrance_law(lam: float, t: float, env: EnvPath, beta: float, c: float,
                 kappa: float) -> float:
    """The z -> 0 entrance factor of the stable CBIBRE at 0."""
    return stable_cbibre_laplace(0.0, lam, t, env, beta, c, kappa)


@dataclass(frozen=True)
class CbibreLongterm:
    verdict: str  # "converges" or "diverges"
    limit_transform: float | None  # Gamma-quadrature value of the limit (m>0)
    mc_estimates: list  # MCEstimate at increasing horizons
    medians: list  # MC medians of Z_T (divergent case)
    lam: float
    z: float


def cbibre_longterm(z: float, env: EnvParams, beta: float, c: float,
                    kappa: float, lam: float = 1.0, n_paths: int = 20000,
                    seed: int = 0, method: str = "mc") -> CbibreLongterm:
    """Long-term behaviour of the stable CBIBRE.

    m > 0: Z_t e^{-K0_t} converges in distribution; the limiting Laplace
    transform is evaluated by Gamma quadrature (via Dufresne) and by MC at
    two horizons chosen so the truncation error of A_infinity ~ A_T is
    below 1e-6.  m <= 0: divergence verdict supported by growing medians.
    """
    if not 0.0 < beta < 1.0 or c <= 0 or kappa <= 0:
        raise ParameterError("need beta in (0,1), c > 0, kappa > 0")
    if env.m > 0:
        T = 6.0 * math.log(10.0) / (beta * env.m)
        ests = []
        for mult, stream in ((1.0, 1), (2.0, 2)):
            horizon = T * mult
            n_steps = max(600, int(round(60 * horizon)))
            grid, K = sample_env_paths(env.sigma, env.m, horizon, n_steps,
                                       seed, n_paths, stream=stream)
            A = suffix_integral_exp_linear(grid, -beta * K)[:, 0]
            vals = _stable_cbi_transform_samples(z, lam, A, beta, c, kappa)
            se = float(vals.std(ddof=1) / math.sqrt(n_paths))
            ests.append(MCEstimate(float(vals.mean()), se, n_paths, "mc",
                                   {"seed": seed, "stream": stream, "T": horizon,
                                    "n_steps": n_steps}))
        limit = _stable_cbi_limit_transform(z, lam, env.m, env.sigma, beta, c, kappa)
        return CbibreLongterm("converges", limit, ests, [], lam, z)
    # m <= 0: medians of simulated Z_T must grow.  A coarse jump threshold
    # keeps the thinning rate (~ eps^-(1+beta) per unit mass) affordable;
    # the removed jumps are moment-matched, which medians tolerate.
    from .mechanisms import Stable
    from .simulate import SimConfig, simulate_cbibre_batch

    mech = Stable(env.alpha, beta, c)
    imm = ImmigrationMechanism(d=0.0, nu=StableImmigration(beta, kappa))
    medians = []
    for i, T in enumerate((4.0, 8.0, 16.0)):
        cfg = SimConfig(dt=0.01, eps_jump=0.05, seed=seed + i)
        batch = simulate_cbibre_batch(mech, imm, env.sigma, z, T, cfg,
                                      max(1500, n_paths // 10), record_times=[T])
        zT = batch.z[:, -1]
        medians.append(float(np.median(zT[np.isfinite(zT)])))
    return CbibreLongterm("diverges", None, [], medians, lam, z)


def _stable_cbi_transform_samples(z, lam, A, beta, c, kappa):
    bca = beta * c * A
    factor = np.exp(-(kappa / (beta * c)) * np.log1p(bca * lam**beta))
    if z > 0:
        factor = factor * np.exp(-z * (lam ** (-beta) + bca) ** (-1.0 / beta))
    return factor


def _stable_cbi_limit_transform(z, lam, m, sigma, beta, c, kappa):
    # beta*c*A_inf  =d  (2c/(beta sigma^2)) / Gamma_{2m/(beta sigma^2)}
    shape = 2.0 * m / (beta * sigma**2)
    if shape <= 0:
        raise ParameterError("the limit transform requires m > 0")
    x, w = gl_panels(np.geomspace(1e-10, 60.0 + 12.0 * shape, 280), 16)
    from scipy.special import gamma as gamma_fn

    dens = w * x ** (shape - 1.0) * np.exp(-x) / gamma_fn(shape)
    bca = (2.0 * c / (beta * sigma**2)) / x
    vals = np.exp(-(kappa / (beta * c)) * np.log1p(bca * lam**beta))
    if z > 0:
        vals = vals * np.exp(-z * (lam ** (-beta) + bca) ** (-1.0 / beta))
    return float(np.sum(dens * vals))
