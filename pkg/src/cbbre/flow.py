"""Environment-conditioned Laplace exponents.

Given an environment path delta on [0, t], the conditional Laplace exponent
v_t(s, lambda, delta) solves the backward equation

    d/ds v = exp(delta_s) * psi(v * exp(-delta_s)),      v(t) = lambda

(with psi replaced by psi0 on K0-flavored paths).  The module provides a
vectorized RK4 solver with step halving, the Neveu / Feller / stable closed
forms, and the conditional survival and explosion probabilities they imply.

The declared path model is linear interpolation of the environment between
grid points.  Closed-form path functionals integrate exp(linear) segments
exactly, so solver and closed form approximate the *same* problem and can be
compared at solver accuracy.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .environment import EnvPath
from .errors import ParameterError, SolverError, UnsupportedMechanismError
from .mechanisms import (
    Feller,
    Mechanism,
    Neveu,
    Stable,
    eval_psi,
    eval_psi0,
    is_infinite_mean,
)

logger = logging.getLogger(__name__)

__all__ = [
    "FlowSolution",
    "solve_backward",
    "solve_backward_batch",
    "closed_form_neveu",
    "closed_form_feller",
    "closed_form_stable",
    "cond_laplace",
    "cond_survival",
    "cond_explosion",
    "integral_exp_linear",
    "suffix_integral_exp_linear",
    "weighted_exp_decay_integral",
    "V_FLOOR",
]

#: |v| below this is rounded to the invariant fixed point 0
V_FLOOR = 1e-14

#: solver treats v above this as blow-up
V_BLOWUP = 1e12


# ---------------------------------------------------------------------------
# Exact path functionals under the linear-interpolation path model
# ---------------------------------------------------------------------------


def _expm1_over_x(x):
    # (e^x - 1)/x, stable near 0
    out = np.where(np.abs(x) > 1e-8, np.expm1(x) / np.where(x == 0, 1.0, x), 1.0 + 0.5 * x)
    return out


def integral_exp_linear(grid, w):
    """int exp(w(u)) du with w piecewise linear on the grid (exact)."""
    return float(suffix_integral_exp_linear(grid, w)[0])


def suffix_integral_exp_linear(grid, w):
    """Array of int_s^T exp(w(u)) du at every grid point s (exact segments).

    ``w`` may be (n,) or (paths, n); the result has matching leading shape.
    """
    g = np.asarray(grid, float)
    W = np.atleast_2d(np.asarray(w, float))
    dt = np.diff(g)
    dw = np.diff(W, axis=1)
    seg = dt * np.exp(W[:, :-1]) * _expm1_over_x(dw)
    out = np.zeros_like(W)
    out[:, :-1] = np.cumsum(seg[:, ::-1], axis=1)[:, ::-1]
    return out if np.ndim(w) == 2 else out[0]


def weighted_exp_decay_integral(grid, w):
    """Arrays of int_s^T exp(-u) w(u) du for piecewise-linear w (exact)."""
    g = np.asarray(grid, float)
    W = np.atleast_2d(np.asarray(w, float))
    # int (a+b u) e^{-u} du = -(a + b + b u) e^{-u}
    b = np.diff(W, axis=1) / np.diff(g)
    a = W[:, :-1] - b * g[:-1]
    anti_lo = -(a + b + b * g[:-1]) * np.exp(-g[:-1])
    anti_hi = -(a + b + b * g[1:]) * np.exp(-g[1:])
    seg = anti_hi - anti_lo
    out = np.zeros_like(W)
    out[:, :-1] = np.cumsum(seg[:, ::-1], axis=1)[:, ::-1]
    return out if np.ndim(w) == 2 else out[0]


# ---------------------------------------------------------------------------
# Backward solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowSolution:
    t: float
    lam: float
    grid: np.ndarray
    values: np.ndarray
    env: EnvPath
    blowup_time: float | None = None

    @property
    def initial(self) -> float:
        """v_t(0, lambda, delta)."""
        return float(self.values[0] if self.values.ndim == 1 else self.values[0, 0])

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.grid, np.atleast_2d(self.values).T]),
                   delimiter=",", header="s,v", comments="")


def _rhs_factory(mech: Mechanism, flavor: str):
    if flavor == "K0":
        if is_infinite_mean(mech):
            raise UnsupportedMechanismError(
                "K0-flavored environments require a finite-mean mechanism"
            )
        psi = lambda u: eval_psi0(mech, u)
    else:
        psi = lambda u: eval_psi(mech, u)

    def rhs(delta_s, v):
        ed = np.exp(delta_s)
        return ed * psi(np.maximum(v, 0.0) * np.exp(-delta_s))

    return rhs


def solve_backward_batch(mech: Mechanism, lam: float, t: float, grid, values,
                         flavor: str = "K", tol: float = 1e-10,
                         max_halvings: int = 12):
    """Solve the backward equation along many paths at once.

    ``values`` has shape (paths, n); the solution is returned on the same
    grid.  Classical RK4 per environment segment with global step halving:
    a segment is subdivided until the Richardson error estimate across all
    paths is below ``tol * max(1, |v|)``.
    """
    g = np.asarray(grid, float)
    V = np.atleast_2d(np.asarray(values, float))
    if lam < 0 or not np.isfinite(lam):
        raise ParameterError("terminal value lambda must be finite and >= 0")
    if abs(g[-1] - t) > 1e-12 * max(1.0, t):
        raise ParameterError("environment grid must end at the horizon t")
    rhs = _rhs_factory(mech, flavor)
    n_seg = g.size - 1
    slopes = np.diff(V, axis=1) / np.diff(g)

    def delta_at(j, s):
        return V[:, j] + slopes[:, j] * (s - g[j])

    out = np.empty_like(V)
    out[:, -1] = lam
    v = np.full(V.shape[0], float(lam))
    blowup = None
    for j in range(n_seg - 1, -1, -1):
        s_hi, s_lo = g[j + 1], g[j]
        n_sub = 1
        for _ in range(max_halvings + 1):
            v1 = _rk4_span(rhs, delta_at, j, s_hi, s_lo, v, n_sub)
            v2 = _rk4_span(rhs, delta_at, j, s_hi, s_lo, v, 2 * n_sub)
            err = np.max(np.abs(v1 - v2) / np.maximum(1.0, np.abs(v2)))
            if err < tol or n_sub >= 2**max_halvings:
                break
            n_sub *= 2
        v = v2
        if np.any(~np.isfinite(v)) or np.any(v > V_BLOWUP):
            blowup = float(s_lo)
            out[:, : j + 1] = np.inf
            break
        if np.any(v < -tol * 10):
            raise SolverError(f"negative excursion at s = {s_lo:.6g}")
        v = np.where(np.abs(v) < V_FLOOR, 0.0, np.maximum(v, 0.0))
        out[:, j] = v
    return out, blowup


def _rk4_span(rhs, delta_at, j, s_hi, s_lo, v0, n_sub):
    h = (s_lo - s_hi) / n_sub  # negative: integrating backward
    v = v0.copy()
    s = s_hi
    for _ in range(n_sub):
        k1 = rhs(delta_at(j, s), v)
        k2 = rhs(delta_at(j, s + 0.5 * h), v + 0.5 * h * k1)
        k3 = rhs(delta_at(j, s + 0.5 * h), v + 0.5 * h * k2)
        k4 = rhs(delta_at(j, s + h), v + h * k3)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s += h
    return v


def solve_backward(mech: Mechanism, lam: float, t: float, env: EnvPath,
                   tol: float = 1e-10) -> FlowSolution:
    """Solve the backward equation on one environment path."""
    vals, blowup = solve_backward_batch(mech, lam, t, env.grid, env.values,
                                        env.flavor, tol)
    return FlowSolution(t, lam, env.grid, vals[0], env, blowup)


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def _check_flavor_grid(env: EnvPath, t: float):
    if abs(env.T - t) > 1e-12 * max(1.0, t):
        raise ParameterError("environment grid must end at the horizon t")


def closed_form_neveu(lam: float, t: float, env: EnvPath) -> float:
    """v_t(0, lambda) for the Neveu mechanism: lambda^{e^-t} exp(int e^-u K_u du)."""
    if lam <= 0:
        raise ParameterError("the Neveu closed form requires lambda > 0")
    if env.flavor != "K":
        raise ParameterError("the Neveu mechanism has infinite mean: use a K-flavored path")
    _check_flavor_grid(env, t)
    J = weighted_exp_decay_integral(env.grid, env.values)[0]
    return float(np.exp(J + math.exp(-t) * math.log(lam)))


def _drift_adjusted(env: EnvPath, alpha: float):
    # exponent D_u with int exp(-beta D_u): K_u + alpha*u for K-flavor,
    # K0_u for K0-flavor (identical paths when K0 = K + alpha t)
    if env.flavor == "K":
        return env.values + alpha * env.grid
    return env.values


def closed_form_feller(lam: float, t: float, env: EnvPath, alpha: float,
                       gamma2: float) -> float:
    """v_t(0, lambda) for the Feller mechanism; lam = inf is accepted."""
    _check_flavor_grid(env, t)
    if lam == 0.0:
        return 0.0
    D = _drift_adjusted(env, alpha)
    A = integral_exp_linear(env.grid, -D)
    lam_eff_inv = 0.0 if np.isinf(lam) else 1.0 / (lam * (math.exp(alpha * t) if env.flavor == "K" else 1.0))
    return 1.0 / (lam_eff_inv + gamma2 * A)


def closed_form_stable(lam: float, t: float, env: EnvPath, beta: float,
                       c: float, alpha: float) -> float:
    """v_t(0, lambda) for the stable mechanism.

    Limits: lam = inf is the extinction functional (beta > 0); lam = 0 is
    the explosion functional (beta < 0).
    """
    _check_flavor_grid(env, t)
    D = _drift_adjusted(env, alpha)
    logA = _log_integral_exp_linear(env.grid, -beta * D)
    inner_env = beta * c * math.exp(logA)
    if np.isinf(lam):
        if beta < 0:
            raise ParameterError("lambda = inf is not a supported limit for beta < 0")
        lam_term = 0.0
    elif lam == 0.0:
        if beta > 0:
            raise ParameterError("lambda = 0 gives v = 0 for beta > 0 (conservative)")
        lam_term = 0.0
    else:
        lam_eff = lam * (math.exp(alpha * t) if env.flavor == "K" else 1.0)
        lam_term = lam_eff ** (-beta)
    inner = lam_term + inner_env
    if inner <= 0:
        raise ParameterError("invalid parameter combination: sign(c) must equal sign(beta)")
    return inner ** (-1.0 / beta)


def _log_integral_exp_linear(grid, w):
    from scipy.special import logsumexp

    g = np.asarray(grid, float)
    W = np.asarray(w, float)
    dw = np.diff(W)
    seg_log = W[:-1] + np.log(np.diff(g)) + np.log(_expm1_over_x(dw))
    return float(logsumexp(seg_log))


# ---------------------------------------------------------------------------
# Conditional probabilities
# ---------------------------------------------------------------------------


def _v_initial(mech: Mechanism, lam: float, t: float, env: EnvPath, tol: float) -> float:
    if isinstance(mech, Neveu):
        return closed_form_neveu(lam, t, env)
    if isinstance(mech, Feller):
        return closed_form_feller(lam, t, env, mech.alpha, mech.gamma2)
    if isinstance(mech, Stable):
        return closed_form_stable(lam, t, env, mech.beta, mech.c, mech.alpha)
    return solve_backward(mech, lam, t, env, tol).initial


def cond_laplace(z: float, lam: float, t: float, env: EnvPath,
                 mech: Mechanism, tol: float = 1e-10) -> float:
    """E_z[exp(-lambda Z_t e^{-K_t}) | K] = exp(-z v_t(0, lambda, K))."""
    if z < 0:
        raise ParameterError("initial mass must be nonnegative")
    if z == 0:
        return 1.0
    if lam == 0:
        from .mechanisms import GeneralCB

        if isinstance(mech, Stable) and mech.beta < 0:
            v0 = closed_form_stable(0.0, t, env, mech.beta, mech.c, mech.alpha)
            return float(np.exp(-z * v0))
        if isinstance(mech, GeneralCB) and mech.q > 0:
            v0 = solve_backward(mech, 1e-12, t, env, tol).initial
            return float(np.exp(-z * v0))
        return 1.0  # conservative: lim v = 0
    v0 = _v_initial(mech, lam, t, env, tol)
    return float(np.exp(-z * v0))


def cond_survival(z: float, t: float, env: EnvPath, mech: Stable | Feller) -> float:
    """P_z(Z_t > 0 | K) for the stable family.

    For beta < 0 the process never dies: the probability is exactly 1.
    """
    if isinstance(mech, Feller):
        mech = Stable(mech.alpha, 1.0, mech.gamma2)
    if mech.beta < 0:
        logger.info("survival probability is identically 1 for beta < 0")
        return 1.0
    if z < 0:
        raise ParameterError("initial mass must be nonnegative")
    v_inf = closed_form_stable(math.inf, t, env, mech.beta, mech.c, mech.alpha)
    return float(-np.expm1(-z * v_inf))


def cond_explosion(z: float, t: float, env: EnvPath, mech: Stable) -> float:
    """P_z(Z_t = infinity | K); positive for every t > 0 when beta < 0."""
    if mech.beta > 0:
        logger.info("the process is conservative for beta > 0: explosion probability 0")
        return 0.0
    if z < 0:
        raise ParameterError("initial mass must be nonnegative")
    v0 = closed_form_stable(0.0, t, env, mech.beta, mech.c, mech.alpha)
    return float(-np.expm1(-z * v0))
