"""Brownian environments and exponential functionals.

The random environment is a drifted Brownian motion sampled exactly on a
grid: ``K_t = sigma*B_t - sigma^2 t/2`` (flavor ``"K"``) or
``K0_t = sigma*B_t + m t`` (flavor ``"K0"``).  Everything downstream is a
path functional of ``int exp(theta * K_s) ds``, so the integrals here are
accumulated in log space; supercritical parameter sets push the integrand
across hundreds of orders of magnitude.

The analytic side of the module evaluates the law of

    I_nu^(eta) = int_0^nu exp(2(eta*s + B_s)) ds

three ways: Dufresne's Gamma identity at nu = infinity, the closed-form
density ``p_{nu,eta}`` of 1/(2 I_nu^(eta)) for eta > -1, and a marginal
built from the Hartman-Watson-type kernel ``theta_r(t)`` which remains valid
for any drift.  Monte Carlo samplers double as oracles for all of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import rng as _rng
from .errors import (
    DivergentFunctionalError,
    ParameterError,
    QuadratureInstabilityError,
)
from .numerics import gl_panels, u_half_diff

__all__ = [
    "MCEstimate",
    "EnvPath",
    "sample_env_path",
    "sample_env_paths",
    "refine_env_path",
    "ExpFunctional",
    "exp_functional",
    "log_exp_functional",
    "dufresne_law",
    "my_density",
    "my_density_grid",
    "density_expectation",
    "density_cdf",
    "hw_kernel",
    "hw_conditional_density",
    "hw_marginal_expectation",
    "mc_half_inverse_samples",
    "lemma1_moments",
    "Lemma1Report",
    "NU_MIN",
    "T_MIN",
]

#: below these the exp(pi^2/2t) prefactor and sin(pi y/t) oscillation cancel
#: catastrophically in double precision; Monte Carlo is the fallback
NU_MIN = 0.3
T_MIN = 0.3


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    """Point estimate with standard error and a reproducibility manifest."""

    value: float
    stderr: float
    n: int
    method: str
    manifest: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n,
            "method": self.method,
            "manifest": dict(self.manifest),
        }


def _mc_estimate(samples: np.ndarray, method: str, manifest: dict) -> MCEstimate:
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(float(samples.mean()), se, n, method, manifest)


# ---------------------------------------------------------------------------
# Environment paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvPath:
    """A discretized environment realization on [0, T]."""

    grid: np.ndarray
    values: np.ndarray
    flavor: str  # "K" or "K0"
    sigma: float
    drift: float

    def __post_init__(self):
        g = np.asarray(self.grid, float)
        v = np.asarray(self.values, float)
        if g.ndim != 1 or g.size < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0):
            raise ParameterError("grid must start at 0 and increase strictly")
        if v.shape != g.shape or v[0] != 0.0:
            raise ParameterError("values must match the grid and start at 0")
        if self.flavor not in ("K", "K0"):
            raise ParameterError("flavor must be 'K' or 'K0'")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.grid, self.values]),
                   delimiter=",", header="t,K", comments="")


def sample_env_paths(sigma: float, drift: float, T: float, n_steps: int,
                     seed: int, n_paths: int, stream: int = 0):
    """Matrix of environment paths, shape (n_paths, n_steps+1).

    Increments are exact Gaussians: N(drift*dt, sigma^2*dt).  sigma = 0 is
    accepted as the degenerate deterministic path.
    """
    if T <= 0 or n_steps < 1:
        raise ParameterError("need T > 0 and n_steps >= 1")
    if sigma < 0:
        raise ParameterError("sigma must be nonnegative")
    gen = _rng.stream(seed, stream)
    dt = T / n_steps
    K = np.empty((n_paths, n_steps + 1))
    K[:, 0] = 0.0
    if sigma == 0.0:
        K[:, 1:] = drift * dt * np.arange(1, n_steps + 1)
    else:
        inc = gen.normal(drift * dt, sigma * math.sqrt(dt), size=(n_paths, n_steps))
        np.cumsum(inc, axis=1, out=K[:, 1:])
    grid = np.linspace(0.0, T, n_steps + 1)
    return grid, K


def sample_env_path(sigma: float, drift: float, T: float, n_steps: int,
                    seed: int, flavor: str = "K0", stream: int = 0) -> EnvPath:
    """One reproducible environment path."""
    grid, K = sample_env_paths(sigma, drift, T, n_steps, seed, 1, stream)
    return EnvPath(grid, K[0], flavor, sigma, drift)


def refine_env_path(path: EnvPath, seed: int, stream: int = 0) -> EnvPath:
    """Insert Brownian-bridge midpoints, halving the step.

    The refined path agrees with the original at the original grid points,
    so convergence studies are coupled pathwise.
    """
    g, v = path.grid, path.values
    gen = _rng.stream(seed, stream)
    mid_t = 0.5 * (g[:-1] + g[1:])
    mean = 0.5 * (v[:-1] + v[1:])
    # bridge variance of the Gaussian part: sigma^2 * dt/4
    sd = path.sigma * np.sqrt((g[1:] - g[:-1]) / 4.0)
    mid_v = mean + gen.normal(0.0, 1.0, size=mid_t.size) * sd
    new_g = np.empty(2 * g.size - 1)
    new_v = np.empty_like(new_g)
    new_g[0::2], new_g[1::2] = g, mid_t
    new_v[0::2], new_v[1::2] = v, mid_v
    return EnvPath(new_g, new_v, path.flavor, path.sigma, path.drift)


# ---------------------------------------------------------------------------
# Exponential functionals of a path
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpFunctional:
    value: float
    log_value: float
    T: float
    rule: str = "log-trapezoid"
    saturated: bool = False


def log_exp_functional(grid, values, theta: float):
    """log int_0^T exp(theta * K_s) ds by trapezoid in log space.

    ``values`` may be a matrix of paths (one row per path).
    """
    g = np.asarray(grid, float)
    V = np.atleast_2d(np.asarray(values, float)) * theta
    dt = np.diff(g)
    seg = np.logaddexp(V[:, :-1], V[:, 1:]) + np.log(0.5 * dt)
    out = special.logsumexp(seg, axis=1)
    return out if np.ndim(values) == 2 else float(out[0])


def exp_functional(path: EnvPath, theta: float) -> ExpFunctional:
    """Trapezoidal int_0^T exp(theta*K_s) ds, overflow-guarded."""
    lv = log_exp_functional(path.grid, path.values, theta)
    value = float(np.exp(lv))
    return ExpFunctional(value, float(lv), path.T, saturated=not np.isfinite(value))


# ---------------------------------------------------------------------------
# Dufresne identity
# ---------------------------------------------------------------------------


def dufresne_law(eta: float) -> float:
    """Gamma shape s such that I_inf^(eta) =d 1/(2*Gamma_s); requires eta < 0."""
    if eta >= 0:
        raise DivergentFunctionalError(
            "I_infinity diverges a.s. for eta >= 0; no limiting law exists"
        )
    return -eta


# ---------------------------------------------------------------------------
# Density of 1/(2 I_nu^(eta)) for eta > -1
# ---------------------------------------------------------------------------

_P_CLAMP = 1e-12  # matches the validated accuracy of the confluent kernel


def _xi_rule(nu: float, panel_width: float = 0.5, order: int = 16):
    # panels aligned with the sin(pi xi/nu) lobes; cut where the layer
    # cancellation residue of the truncated tail is negligible
    ximax = 2.0 * nu + math.sqrt(4.0 * nu * nu + 220.0 * nu)
    edges = [0.0]
    k = 0
    while k * nu < ximax:
        lo, hi = k * nu, (k + 1) * nu
        nsub = max(1, int(np.ceil((hi - lo) / panel_width)))
        edges.extend(np.linspace(lo, hi, nsub + 1)[1:])
        k += 1
    return gl_panels(np.asarray(edges), order)


def my_density_grid(x, nu: float, eta: float):
    """p_{nu,eta} evaluated on an array of points (vectorized sweep).

    The oscillatory integral is computed against ``U(w) - U(0)`` rather than
    ``U(w)``: the Gaussian-sinh-sine measure integrates every constant (and
    every integer power of cosh) to exactly zero, so the subtraction removes
    the dominant cancellation without changing the value.  A relative noise
    clamp zeroes points whose remaining cancellation exceeds the kernel
    accuracy; the true density there is far below anything the caller can
    use.
    """
    if nu < NU_MIN:
        raise QuadratureInstabilityError(
            f"nu = {nu} < {NU_MIN}: exp(pi^2/2nu) cancellation; use Monte Carlo"
        )
    if eta <= -1.0:
        raise ParameterError("the density formula requires eta > -1")
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise ParameterError("density support is (0, infinity)")
    a = 0.5 * (eta + 1.0)
    logC = (
        -0.5 * eta * eta * nu
        + np.pi**2 / (2.0 * nu)
        + special.gammaln(0.5 * (eta + 2.0))
        + special.gammaln(a)
        - math.log(math.sqrt(2.0) * np.pi**2 * math.sqrt(nu))
    )
    xi, w = _xi_rule(nu)
    osc = w * np.exp(-(xi**2) / (2.0 * nu)) * np.sinh(xi) * np.sin(np.pi * xi / nu)
    W = np.outer(x, np.cosh(xi) ** 2)
    B = u_half_diff(a, W.ravel()).reshape(W.shape)
    J = B @ osc
    noise = (np.abs(B) @ np.abs(osc)) * _P_CLAMP
    J = np.where(np.abs(J) > noise, np.maximum(J, 0.0), 0.0)
    return np.exp(logC - x - a * np.log(x)) * J


def my_density(nu: float, eta: float, x: float) -> float:
    """Density of 1/(2 I_nu^(eta)) at a single point."""
    return float(my_density_grid(np.array([x]), nu, eta)[0])


def _default_v_rule(nu: float, eta: float, per_lnunit: float = 2.6, order: int = 16):
    # cover the lognormal-type bulk: ln v is centered near -2*eta*nu with
    # spread ~ 2*sqrt(nu); widen generously for integrand tilts
    vlo = math.exp(-2.0 * nu * (abs(eta) + 4.0) - 16.0 * math.sqrt(nu) - 20.0)
    vlo = max(vlo, 1e-280)
    vhi = 60.0 + 10.0 * abs(eta)
    npan = max(40, min(int(per_lnunit * math.log(vhi / vlo)), 560))
    return gl_panels(np.geomspace(vlo, vhi, npan), order)


def density_expectation(func: Callable, nu: float, eta: float) -> float:
    """int func(v) p_{nu,eta}(v) dv over the full support."""
    v, w = _default_v_rule(nu, eta)
    p = my_density_grid(v, nu, eta)
    return float(np.sum(w * func(v) * p))


def density_cdf(points, nu: float, eta: float):
    """CDF of 1/(2 I_nu^(eta)) at the given (sorted) points."""
    pts = np.asarray(points, float)
    v, w = _default_v_rule(nu, eta, per_lnunit=3.2)
    p = my_density_grid(v, nu, eta)
    mass = w * p
    order = np.argsort(v)
    v, mass = v[order], np.cumsum(mass[order])
    return np.interp(pts, v, mass, left=0.0)


# ---------------------------------------------------------------------------
# Hartman-Watson-type kernel and the drift-free marginal route
# ---------------------------------------------------------------------------


def _theta_rule(t: float, ymax: float, order: int = 16):
    width = min(0.5 * t, 0.5)
    n = max(2, int(np.ceil(ymax / width)) + 1)
    return gl_panels(np.linspace(0.0, ymax, n), order)


def hw_kernel(r, t: float):
    """theta_r(t): the oscillatory kernel of the conditional law of I_t.

    Vectorized over r.  Values that fall below the cancellation noise floor
    are clamped to zero (theta_r(t) -> 0 faster than any power as r -> 0).
    """
    if t < T_MIN:
        raise QuadratureInstabilityError(
            f"t = {t} < {T_MIN}: exp(pi^2/2t) cancellation; use Monte Carlo"
        )
    scalar = np.ndim(r) == 0
    r = np.atleast_1d(np.asarray(r, float))
    if np.any(r <= 0):
        raise ParameterError("r must be positive")
    rmin = float(r.min())
    ymax = min(math.sqrt(2.0 * t * 745.0) + 2.0, float(np.arccosh(745.0 / min(rmin, 745.0)) + 1.0))
    y, w = _theta_rule(t, ymax)
    base = -(y**2) / (2.0 * t)
    osc = np.sinh(y) * np.sin(np.pi * y / t) * w
    E = np.exp(base[None, :] - np.outer(r, np.cosh(y)))
    val = E @ osc
    noise = (E @ np.abs(osc)) * 5e-15
    val = np.where(np.abs(val) > noise, np.maximum(val, 0.0), 0.0)
    pref = r / math.sqrt(2.0 * np.pi**3 * t) * math.exp(np.pi**2 / (2.0 * t))
    out = pref * val
    return float(out[0]) if scalar else out


def hw_conditional_density(u, t: float, x: float):
    """Density in u of I_t^(eta) given B_t + eta*t = x (drift-free)."""
    u = np.asarray(u, float)
    pref = math.sqrt(2.0 * np.pi * t) * math.exp(x**2 / (2.0 * t))
    return pref / u * np.exp(-(1.0 + math.exp(2.0 * x)) / (2.0 * u)) * hw_kernel(np.exp(x) / u, t)


def hw_marginal_expectation(func: Callable, nu: float, eta: float,
                            order: int = 12) -> float:
    """E[func(I_nu^(eta))] by quadrature over the Hartman-Watson marginal.

    Valid for every drift eta (unlike the p-density route, which needs
    eta > -1).  The joint density in (u, x) of (I, B+eta*nu) is integrated
    on a tensor panel grid, with theta_r(nu) interpolated from a dense
    logarithmic r-grid.
    """
    if nu < T_MIN:
        raise QuadratureInstabilityError(f"nu = {nu} < {T_MIN}: use Monte Carlo")
    sp = math.sqrt(nu)
    lu_lo = math.log(nu) - 2.0 * abs(eta) * nu - 8.0 * sp - 22.0
    lu_hi = math.log(nu) + 2.0 * abs(eta) * nu + 8.0 * sp + 22.0
    lx_lo = eta * nu - 8.0 * sp - 8.0
    lx_hi = eta * nu + 8.0 * sp + 8.0
    lu, wu = gl_panels(np.arange(lu_lo, lu_hi + 0.5, 0.5), order)
    x, wx = gl_panels(np.arange(lx_lo, lx_hi + 0.4, 0.4), order)
    # theta on a dense log-r grid, then interpolated
    lr_lo, lr_hi = (lx_lo - lu_hi), (lx_hi - lu_lo)
    lr = np.linspace(lr_lo, lr_hi, 4000)
    th = hw_kernel(np.exp(lr), nu)
    U = np.exp(lu)
    marg = np.empty_like(U)
    ex2 = np.exp(2.0 * x)
    for i, u in enumerate(U):
        theta_vals = np.interp(x - lu[i], lr, th)
        integ = np.exp(eta * x - (1.0 + ex2) / (2.0 * u)) * theta_vals
        marg[i] = np.dot(wx, integ) / u
    marg *= math.exp(-0.5 * eta * eta * nu)
    # d u = u d(ln u)
    return float(np.sum(wu * U * marg * func(U)))


# ---------------------------------------------------------------------------
# Monte Carlo for I_nu^(eta)
# ---------------------------------------------------------------------------


def mc_log_exp_functionals(eta: float, t: float, n: int, n_steps: int,
                           seed: int, chunk: int | None = None):
    """Samples of log I_t^(eta) = log int_0^t exp(2(eta s + B_s)) ds."""
    if chunk is None:
        chunk = max(1000, int(1.5e7 / max(n_steps, 1)))
    out = np.empty(n)
    grid = np.linspace(0.0, t, n_steps + 1)
    done = 0
    for gen, m in _rng.chunk_streams(seed, n, chunk):
        inc = gen.normal(0.0, math.sqrt(t / n_steps), size=(m, n_steps))
        B = np.concatenate([np.zeros((m, 1)), np.cumsum(inc, axis=1)], axis=1)
        out[done:done + m] = log_exp_functional(grid, eta * grid[None, :] + B, 2.0)
        done += m
    return out


def mc_half_inverse_samples(nu: float, eta: float, n: int, n_steps: int, seed: int):
    """Samples of 1/(2 I_nu^(eta))."""
    logI = mc_log_exp_functionals(eta, nu, n, n_steps, seed)
    return np.exp(-math.log(2.0) - logI)


# ---------------------------------------------------------------------------
# Moment identities (time reversal + Esscher transform)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lemma1Report:
    lhs: MCEstimate
    rhs: MCEstimate
    diff_stderr: float
    identity_ok: bool
    inequality_lhs: MCEstimate
    inequality_rhs: MCEstimate
    inequality_rhs_stderr: float
    inequality_ok: bool


def lemma1_moments(eta: float, p: float, t: float, n_mc: int = 100_000,
                   n_steps: int = 1000, seed: int = 0,
                   chunk: int | None = None) -> Lemma1Report:
    """Check the negative-moment identity and product bound by paired MC.

    Identity: E[(I_t^(eta))^-p] = e^{(2p^2-2p eta)t} E[(I_t^(-(eta-2p)))^-p].
    Bound:    E[(I_t^(eta))^-2p] <= e^{(2p^2-2p eta)t}
              * E[(I_{t/2}^(-(eta-2p)))^-p] * E[(I_{t/2}^((eta-2p)))^-p].

    Both sides are driven by the same Brownian increments, so the identity
    check uses the standard error of the per-path difference.
    """
    if p < 0 or t <= 0:
        raise ParameterError("need p >= 0 and t > 0")
    if chunk is None:
        chunk = max(1000, int(8e6 / max(n_steps, 1)))
    pref = math.exp((2.0 * p * p - 2.0 * p * eta) * t)
    mirror = -(eta - 2.0 * p)
    grid = np.linspace(0.0, t, n_steps + 1)
    half = n_steps // 2
    lhs = np.empty(n_mc)
    rhs = np.empty(n_mc)
    ineq_lhs = np.empty(n_mc)
    prod_a = np.empty(n_mc)
    prod_b = np.empty(n_mc)
    done = 0
    for gen, m in _rng.chunk_streams(seed, n_mc, chunk):
        inc = gen.normal(0.0, math.sqrt(t / n_steps), size=(m, n_steps))
        B = np.concatenate([np.zeros((m, 1)), np.cumsum(inc, axis=1)], axis=1)
        li_eta = log_exp_functional(grid, eta * grid[None, :] + B, 2.0)
        li_mirror = log_exp_functional(grid, mirror * grid[None, :] + B, 2.0)
        gh = grid[: half + 1]
        Bh = B[:, : half + 1]
        li_ha = log_exp_functional(gh, mirror * gh[None, :] + Bh, 2.0)
        li_hb = log_exp_functional(gh, (eta - 2.0 * p) * gh[None, :] + Bh, 2.0)
        sl = slice(done, done + m)
        lhs[sl] = np.exp(-p * li_eta)
        rhs[sl] = pref * np.exp(-p * li_mirror)
        ineq_lhs[sl] = np.exp(-2.0 * p * li_eta)
        prod_a[sl] = np.exp(-p * li_ha)
        prod_b[sl] = np.exp(-p * li_hb)
        done += m
    manifest = {"seed": seed, "n_paths": n_mc, "n_steps": n_steps,
                "eta": eta, "p": p, "t": t}
    est_l = _mc_estimate(lhs, "mc-negative-moment", manifest | {"side": "lhs"})
    est_r = _mc_estimate(rhs, "mc-negative-moment", manifest | {"side": "rhs"})
    dse = float((lhs - rhs).std(ddof=1) / math.sqrt(n_mc))
    est_il = _mc_estimate(ineq_lhs, "mc-negative-moment", manifest | {"side": "ineq-lhs"})
    ea = _mc_estimate(prod_a, "mc-negative-moment", manifest)
    eb = _mc_estimate(prod_b, "mc-negative-moment", manifest)
    prod_val = pref * ea.value * eb.value
    prod_se = pref * math.hypot(ea.value * eb.stderr, eb.value * ea.stderr)
    est_ir = MCEstimate(prod_val, prod_se, n_mc, "mc-product-bound", manifest | {"side": "ineq-rhs"})
    identity_ok = abs(est_l.value - est_r.value) <= 3.0 * dse
    inequality_ok = est_il.value <= prod_val + 3.0 * math.hypot(est_il.stderr, prod_se)
    return Lemma1Report(est_l, est_r, dse, identity_ok, est_il, est_ir, prod_se, inequality_ok)
