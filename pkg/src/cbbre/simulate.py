"""Pathwise SDE simulation with absorption and explosion detection.

Scheme: explicit Euler with full truncation; all coefficients are evaluated
at max(Z, 0), so states may briefly dip below zero but are clamped back
each step.  Jumps are simulated by thinning above a size threshold
``eps_jump``; the removed small jumps are replaced by their compensator-
matched drift plus a variance-matched Gaussian when the SDE compensates
them, and by their mean contribution when it does not.

Environment increments are drawn once per step and shared between the state
update and the returned environment path, so formula evaluators can be
compared pathwise against the same realization.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma_fn

from . import rng as _rng
from .errors import ParameterError, UnsupportedMechanismError
from .mechanisms import (
    NEVEU_DRIFT,
    Feller,
    GeneralCB,
    ImmigrationMechanism,
    Mechanism,
    Neveu,
    Stable,
    StableImmigration,
    TabulatedMeasure,
    is_infinite_mean,
    psi_prime_at_zero,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "SimPath",
    "SimBatch",
    "simulate_cbbre",
    "simulate_cbbre_batch",
    "simulate_cbibre",
    "simulate_cbibre_batch",
    "simulate_stable_jumps",
    "detect_events",
    "martingale_diagnostics",
    "MartingaleReport",
]

# expected jump count per path-step beyond which a path is declared exploded
_LAM_MAX = 1e5


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    eps_jump: float = 1e-3
    eps_abs: float = 1e-10
    m_expl: float = 1e9
    scheme: str = "euler-full-truncation"
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.eps_jump <= 0:
            raise ParameterError("dt and eps_jump must be positive")
        if self.m_expl <= 0:
            raise ParameterError("explosion threshold must be positive")


@dataclass(frozen=True)
class SimPath:
    times: np.ndarray
    z: np.ndarray
    env_values: np.ndarray
    env_flavor: str
    t0: float | None
    t_inf: float | None
    config: SimConfig


@dataclass(frozen=True)
class SimBatch:
    """Simulated states recorded at ``times`` for many paths."""

    times: np.ndarray
    z: np.ndarray  # (n_paths, len(times)); inf marks exploded
    env_values: np.ndarray  # same shape: K (or K0) at times
    env_flavor: str
    t0: np.ndarray  # absorption times, nan if never absorbed
    t_inf: np.ndarray  # explosion times, nan if never exploded
    config: SimConfig

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]

    def path(self, i: int) -> SimPath:
        return SimPath(
            self.times, self.z[i], self.env_values[i], self.env_flavor,
            None if np.isnan(self.t0[i]) else float(self.t0[i]),
            None if np.isnan(self.t_inf[i]) else float(self.t_inf[i]),
            self.config,
        )


# ---------------------------------------------------------------------------
# Jump machinery
# ---------------------------------------------------------------------------


def _pareto_tail_sample(rng, count_total: int, eps: float, exponent: float):
    # inverse of the tail S(z) = (z/eps)^-exponent
    u = rng.random(count_total)
    return eps * u ** (-1.0 / exponent)


def _thinned_jumps(rng, rates, eps, tail_exponent):
    """Summed jump sizes >= eps per path, drawn by thinning.

    rates: expected counts per path this step.  Returns (sums, exploded)
    where exploded marks paths whose expected count exceeded the resolution
    cap.
    """
    exploded = rates > _LAM_MAX
    lam = np.where(exploded, 0.0, rates)
    counts = rng.poisson(lam)
    total = int(counts.sum())
    sums = np.zeros_like(rates)
    if total > 0:
        sizes = _pareto_tail_sample(rng, total, eps, tail_exponent)
        owners = np.repeat(np.arange(rates.size), counts)
        np.add.at(sums, owners, sizes)
    return sums, exploded


def simulate_stable_jumps(state, dt: float, beta: float, c: float,
                          eps_jump: float, rng) -> np.ndarray:
    """One Euler step of the stable jump integral for frozen state(s).

    For beta in (0,1) the SDE compensates all jumps: thinning above
    ``eps_jump``, minus the compensator of the simulated tail, plus a
    Gaussian matching the variance of the removed small jumps.  For beta in
    (-1,0) nothing is compensated: thinning plus the mean of the removed
    small jumps.
    """
    state = np.atleast_1d(np.asarray(state, float))
    zp = np.maximum(state, 0.0)
    ci = c * beta * (beta + 1.0) / _gamma_fn(1.0 - beta)
    tail_mass = ci * eps_jump ** (-(1.0 + beta)) / (1.0 + beta)
    sums, exploded = _thinned_jumps(rng, zp * tail_mass * dt, eps_jump, 1.0 + beta)
    if beta > 0:
        tail_mean = ci * eps_jump ** (-beta) / beta  # int_eps^inf z mu(dz)
        small_var = ci * eps_jump ** (1.0 - beta) / (1.0 - beta)
        inc = sums - zp * dt * tail_mean + rng.normal(0.0, 1.0, zp.size) * np.sqrt(zp * dt * small_var)
    else:
        small_mean = -ci * eps_jump ** (-beta) / beta  # int_0^eps z mu(dz), beta < 0
        inc = sums + zp * dt * small_mean
    inc[exploded] = np.inf
    return inc


def _neveu_jump_step(rng, zp, dt, eps):
    # mu(dx) = x^-2 dx: thinning above eps (Pareto index 1), compensation of
    # [eps,1) only, Gaussian for the compensated small jumps (variance eps)
    sums, exploded = _thinned_jumps(rng, zp * dt / eps, eps, 1.0)
    comp = math.log(1.0 / eps) if eps < 1.0 else 0.0
    inc = sums - zp * dt * comp + rng.normal(0.0, 1.0, zp.size) * np.sqrt(zp * dt * eps)
    inc[exploded] = np.inf
    return inc


class _TabulatedJumps:
    """Precomputed thinning data for a tabulated jump measure."""

    def __init__(self, mu: TabulatedMeasure, eps: float):
        x, d = mu.x, mu.density
        self.eps = eps
        mask = x >= eps
        if mask.sum() < 2:
            self.rate = mu.tail_mass
            self.xs = np.array([eps, eps])
            self.cdf = np.array([0.0, 1.0])
        else:
            xs, ds = x[mask], d[mask]
            seg = 0.5 * (ds[1:] + ds[:-1]) * np.diff(xs)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            self.rate = float(cum[-1]) + mu.tail_mass
            self.xs = xs
            self.cdf = cum
        self.tail_mass = mu.tail_mass
        self.tail_location = mu.tail_location
        below = x < eps
        if below.sum() >= 2:
            xb, db = x[below], d[below]
            self.small_mean = float(np.trapezoid(xb * db, xb))
            self.small_var = float(np.trapezoid(xb**2 * db, xb))
        else:
            self.small_mean = self.small_var = 0.0
        # compensated band [eps, 1): subtracted as drift
        band = (x >= eps) & (x < 1.0)
        if band.sum() >= 2:
            self.band_mean = float(np.trapezoid(x[band] * d[band], x[band]))
        else:
            self.band_mean = 0.0

    def sample(self, rng, n):
        u = rng.random(n) * self.rate
        out = np.empty(n)
        tab = u < self.cdf[-1]
        out[~tab] = self.tail_location
        if np.any(tab):
            out[tab] = np.interp(u[tab], self.cdf, self.xs)
        return out


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


def _mech_coeffs(mech: Mechanism):
    """(sde_drift, gamma2, flavor, mean_growth).

    ``mean_growth`` is -psi'(0+) (the exponential growth rate of the
    conditional mean); it drives the drift of a K0-flavored path and is None
    for infinite-mean mechanisms, whose recorded path is K.
    """
    if isinstance(mech, Neveu):
        return NEVEU_DRIFT, 0.0, "K", None
    if isinstance(mech, Feller):
        return mech.alpha, mech.gamma2, "K0", mech.alpha
    if isinstance(mech, Stable):
        if mech.beta < 0:
            return mech.alpha, 0.0, "K", None
        gamma2 = mech.c if mech.beta == 1.0 else 0.0
        return mech.alpha, gamma2, "K0", mech.alpha
    if isinstance(mech, GeneralCB):
        return mech.a, mech.gamma2, "K0", -psi_prime_at_zero(mech)
    raise UnsupportedMechanismError(f"cannot simulate {type(mech).__name__}")


def _jump_stepper(mech: Mechanism, eps: float):
    if isinstance(mech, Stable) and mech.beta != 1.0:
        beta, c = mech.beta, mech.c

        def step(rng, zp, dt):
            return simulate_stable_jumps(zp, dt, beta, c, eps, rng)

        return step
    if isinstance(mech, Neveu):
        return lambda rng, zp, dt: _neveu_jump_step(rng, zp, dt, eps)
    if isinstance(mech, GeneralCB) and mech.mu is not None:
        tab = _TabulatedJumps(mech.mu, eps)

        def step(rng, zp, dt):
            sums, exploded = _thinned_big(rng, zp * tab.rate * dt, tab)
            inc = sums - zp * dt * tab.band_mean
            if tab.small_var > 0:
                inc = inc + rng.normal(0.0, 1.0, zp.size) * np.sqrt(zp * dt * tab.small_var)
            inc[exploded] = np.inf
            return inc

        return step
    return None


def _thinned_big(rng, rates, tab):
    exploded = rates > _LAM_MAX
    counts = rng.poisson(np.where(exploded, 0.0, rates))
    total = int(counts.sum())
    sums = np.zeros_like(rates)
    if total:
        sizes = tab.sample(rng, total)
        np.add.at(sums, np.repeat(np.arange(rates.size), counts), sizes)
    return sums, exploded


def _imm_steppers(imm: ImmigrationMechanism | None, eps: float):
    if imm is None or imm.trivial:
        return 0.0, None
    drift = imm.d
    if isinstance(imm.nu, StableImmigration):
        b, ci = imm.nu.beta, imm.nu.intensity_const
        rate = ci * eps ** (-b) / b
        small_mean = ci * eps ** (1.0 - b) / (1.0 - b)

        def step(rng, n, dt):
            counts = rng.poisson(rate * dt, size=n)
            total = int(counts.sum())
            sums = np.zeros(n)
            if total:
                sizes = _pareto_tail_sample(rng, total, eps, b)
                np.add.at(sums, np.repeat(np.arange(n), counts), sizes)
            return sums + small_mean * dt

        return drift, step
    if isinstance(imm.nu, TabulatedMeasure):
        tab = _TabulatedJumps(imm.nu, eps)

        def step(rng, n, dt):
            counts = rng.poisson(tab.rate * dt, size=n)
            total = int(counts.sum())
            sums = np.zeros(n)
            if total:
                sizes = tab.sample(rng, total)
                np.add.at(sums, np.repeat(np.arange(n), counts), sizes)
            return sums + tab.small_mean * dt

        return drift, step
    return drift, None


def _run_chunk(mech, sigma, z0, T, cfg, n, gen, record_idx, imm,
               driving=None):
    alpha, gamma2, flavor, mean_growth = _mech_coeffs(mech)
    if flavor == "K":
        k_drift = -0.5 * sigma**2
    else:
        k_drift = mean_growth - 0.5 * sigma**2
    n_steps = int(round(T / cfg.dt))
    dt = T / n_steps
    sq_dt = math.sqrt(dt)
    jumps = _jump_stepper(mech, cfg.eps_jump)
    imm_drift, imm_step = _imm_steppers(imm, cfg.eps_jump)
    absorbing = imm is None or imm.trivial

    z = np.full(n, float(z0))
    k_env = np.zeros(n)
    t0 = np.full(n, np.nan)
    t_inf = np.full(n, np.nan)
    if z0 == 0 and absorbing:
        t0[:] = 0.0
    z_rec = np.empty((n, len(record_idx)))
    k_rec = np.empty((n, len(record_idx)))
    rec_map = {idx: j for j, idx in enumerate(record_idx)}
    if 0 in rec_map:
        z_rec[:, rec_map[0]] = z
        k_rec[:, rec_map[0]] = 0.0
    if driving is None:
        # bulk-drawn per chunk: per-step Generator calls dominate otherwise
        all_dB = gen.normal(0.0, sq_dt, (n, n_steps))
        all_dBe = gen.normal(0.0, sq_dt, (n, n_steps))
    else:
        all_dB, all_dBe = driving
    for step_i in range(1, n_steps + 1):
        live = np.isnan(t_inf) & np.isnan(t0) if absorbing else np.isnan(t_inf)
        zp = np.where(live, np.maximum(z, 0.0), 0.0)  # frozen paths: no flow
        dB, dBe = all_dB[:, step_i - 1], all_dBe[:, step_i - 1]
        dz = alpha * zp * dt + sigma * zp * dBe
        if gamma2 > 0:
            dz = dz + np.sqrt(2.0 * gamma2 * zp) * dB
        if jumps is not None:
            dz = dz + jumps(gen, zp, dt)
        if imm_step is not None:
            dz = dz + imm_step(gen, n, dt)
        dz = dz + imm_drift * dt
        z_new = np.where(live, np.maximum(z + dz, 0.0), z)
        k_env = k_env + k_drift * dt + sigma * dBe
        t_now = step_i * dt
        boom = live & (~np.isfinite(z_new) | (z_new > cfg.m_expl))
        if np.any(boom):
            t_inf[boom] = t_now
            z_new[boom] = np.inf
        if absorbing:
            dead = live & ~boom & (z_new < cfg.eps_abs)
            if np.any(dead):
                t0[dead] = t_now
                z_new[dead] = 0.0
        z = z_new
        if step_i in rec_map:
            j = rec_map[step_i]
            z_rec[:, j] = z
            k_rec[:, j] = k_env
    return z_rec, k_rec, t0, t_inf, flavor


def _resolve_record(T, cfg, record_times):
    n_steps = int(round(T / cfg.dt))
    if record_times is None:
        idx = list(range(n_steps + 1))
    else:
        idx = sorted({int(round(t / (T / n_steps))) for t in record_times})
        idx = [min(max(i, 0), n_steps) for i in idx]
    times = np.array([i * (T / n_steps) for i in idx])
    return idx, times


def simulate_cbbre_batch(mech: Mechanism, sigma: float, z0: float, T: float,
                         cfg: SimConfig, n_paths: int, record_times=None,
                         imm: ImmigrationMechanism | None = None,
                         chunk: int = 20000, driving=None,
                         workers: int = 1) -> SimBatch:
    """Simulate many CBBRE paths; record states at ``record_times``.

    ``record_times=None`` keeps the full grid (memory permitting).  With
    ``workers > 1`` chunks run on a thread pool; each chunk owns its RNG
    stream and reduction is in chunk order, so results are identical for
    any worker count.
    """
    if z0 < 0 or T <= 0:
        raise ParameterError("need z0 >= 0 and T > 0")
    if sigma < 0:
        raise ParameterError("sigma must be nonnegative")
    if imm is not None and not imm.trivial and is_infinite_mean(mech):
        raise UnsupportedMechanismError(
            "immigration requires a finite-mean branching mechanism"
        )
    record_idx, times = _resolve_record(T, cfg, record_times)
    n_steps = int(round(T / cfg.dt))
    chunk = max(1000, min(chunk, int(2.5e7 / max(n_steps, 1))))
    flavor = _mech_coeffs(mech)[2]
    if driving is not None:
        gen = _rng.stream(cfg.seed, 1)
        z, k, t0, ti, flavor = _run_chunk(mech, sigma, z0, T, cfg,
                                          driving[0].shape[0], gen, record_idx,
                                          imm, driving)
        results = [(z, k, t0, ti)]
    else:
        chunks = _rng.chunk_streams(cfg.seed, n_paths, chunk)

        def work(args):
            gen, m = args
            z, k, t0, ti, _ = _run_chunk(mech, sigma, z0, T, cfg, m, gen,
                                         record_idx, imm)
            return z, k, t0, ti

        if workers > 1 and len(chunks) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(work, chunks))  # fixed chunk order
        else:
            results = [work(c) for c in chunks]
    return SimBatch(times, np.vstack([r[0] for r in results]),
                    np.vstack([r[1] for r in results]), flavor,
                    np.concatenate([r[2] for r in results]),
                    np.concatenate([r[3] for r in results]), cfg)


def simulate_cbbre(mech: Mechanism, sigma: float, z0: float, T: float,
                   cfg: SimConfig) -> SimPath:
    """One full CBBRE trajectory."""
    return simulate_cbbre_batch(mech, sigma, z0, T, cfg, 1).path(0)


def simulate_cbibre_batch(mech: Mechanism, imm: ImmigrationMechanism,
                          sigma: float, z0: float, T: float, cfg: SimConfig,
                          n_paths: int, record_times=None,
                          chunk: int = 20000) -> SimBatch:
    """CBBRE plus immigration: zero is no longer absorbing."""
    return simulate_cbbre_batch(mech, sigma, z0, T, cfg, n_paths,
                                record_times, imm=imm, chunk=chunk)


def simulate_cbibre(mech: Mechanism, imm: ImmigrationMechanism, sigma: float,
                    z0: float, T: float, cfg: SimConfig) -> SimPath:
    return simulate_cbibre_batch(mech, imm, sigma, z0, T, cfg, 1).path(0)


def detect_events(path: SimPath):
    """(T0, T_infinity) from a recorded trajectory: first passage below
    eps_abs and first passage above m_expl (or an infinite value)."""
    z = np.asarray(path.z, float)
    t = np.asarray(path.times, float)
    cfg = path.config
    t0 = t_inf = None
    hit0 = np.nonzero(z < cfg.eps_abs)[0]
    hit_inf = np.nonzero(~np.isfinite(z) | (z > cfg.m_expl))[0]
    i0 = hit0[0] if hit0.size else None
    ii = hit_inf[0] if hit_inf.size else None
    if i0 is not None and (ii is None or i0 < ii):
        t0 = float(t[i0])
    elif ii is not None:
        t_inf = float(t[ii])
    return t0, t_inf


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MartingaleReport:
    mean_ratio: float
    stderr: float
    supermartingale_ok: bool
    regression_r2: float
    p_w_zero: float
    w_tol: float
    n_exploded: int


def martingale_diagnostics(batch: SimBatch, z0: float,
                           w_tol: float = 1e-3) -> MartingaleReport:
    """Check E[Z_t e^{-K0_t}] <= z0 and the conditional-mean regression.

    Uses the final recorded time.  The conditional mean given the
    environment is z0 * e^{K0_t}; binning paths by K0_t and regressing the
    log bin-means of Z against K0 should give slope 1 and R^2 > 0.99.
    Paths capped at the explosion threshold are excluded from the
    supermartingale mean and counted as W > 0; pick the horizon and
    ``m_expl`` so they are rare.
    """
    if batch.env_flavor != "K0":
        raise UnsupportedMechanismError("martingale diagnostics need a finite-mean mechanism")
    z = batch.z[:, -1]
    k = batch.env_values[:, -1]
    finite = np.isfinite(z)
    w = np.where(finite, z, 0.0) * np.exp(-k)
    n = w.size
    mean = float(w[finite].mean())
    se = float(w[finite].std(ddof=1) / math.sqrt(max(finite.sum(), 2)))
    ok = mean <= z0 + 3.0 * se
    # regression of binned means
    nb = 16
    qs = np.quantile(k, np.linspace(0, 1, nb + 1))
    xs, ys = [], []
    for i in range(nb):
        m = (k >= qs[i]) & (k <= qs[i + 1]) & finite
        if m.sum() > 50:
            mz = z[m].mean()
            if mz > 0:
                xs.append(k[m].mean())
                ys.append(math.log(mz))
    xs, ys = np.array(xs), np.array(ys)
    if xs.size >= 3:
        A = np.column_stack([xs, np.ones_like(xs)])
        coef, res, *_ = np.linalg.lstsq(A, ys, rcond=None)
        ss_tot = float(((ys - ys.mean()) ** 2).sum())
        ss_res = float(res[0]) if res.size else float(((ys - A @ coef) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    else:
        r2 = float("nan")
    p_w0 = float((finite & (w < w_tol * max(z0, 1e-300))).mean())
    return MartingaleReport(mean / z0 if z0 > 0 else mean, se, ok, r2, p_w0,
                            w_tol, int((~finite).sum()))
