"""Quadrature building blocks.

Three things live here because several modules need them:

* composite Gauss-Legendre panel rules (`gl_panels`),
* a fast vectorized confluent kernel ``U(a, 1/2, w)`` for half-integer ``2a``
  (`u_half`), together with the cancellation-free difference
  ``U(a,1/2,w) - U(a,1/2,0)`` (`u_half_diff`) that the oscillatory density
  integrals require at tiny arguments,
* Gamma-power Laplace transforms ``E[exp(-theta * G^power)]`` for a Gamma
  variable ``G``, evaluated by generalized Gauss-Laguerre with order
  escalation (`gamma_power_laplace`, `gamma_power_expectation`).

The confluent kernel is a three-zone hybrid: an erfcx-seeded contiguous
recurrence for small ``w`` (the recurrence runs in its stable zone only), a
Chebyshev fit of a log-transformed Laplace-integral quadrature in the middle,
and the divergent 2F0 asymptotic series truncated at its smallest term for
large ``w``.  Accuracy is ~1e-12 relative for 2a <= 6; callers with
non-half-integer ``a`` fall back to ``scipy.special.hyperu``.
"""
from __future__ import annotations

import numpy as np
from scipy import special

__all__ = [
    "gl_panels",
    "log_panel_edges",
    "u_half",
    "u_half_diff",
    "has_fast_kernel",
    "gamma_power_laplace",
    "gamma_power_expectation",
]

SQRT_PI = np.sqrt(np.pi)

_LEG_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(order):
    if order not in _LEG_CACHE:
        _LEG_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _LEG_CACHE[order]


def gl_panels(edges, order: int = 16):
    """Composite Gauss-Legendre nodes/weights on consecutive panels."""
    edges = np.asarray(edges, float)
    xg, wg = _leggauss(order)
    lo, hi = edges[:-1], edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def log_panel_edges(lo: float, hi: float, per_decade: float = 6.0):
    """Geometric panel edges from lo to hi (both > 0)."""
    n = max(2, int(np.ceil(per_decade * np.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, n)


# ---------------------------------------------------------------------------
# Confluent hypergeometric kernel U(a, 1/2, w)
# ---------------------------------------------------------------------------

_LADDER_MAX_W = 6.0  # forward recurrence loses digits beyond this
_CHEB_CACHE: dict[int, "np.polynomial.chebyshev.Chebyshev"] = {}


def _wlim(a: float) -> float:
    return 60.0 + 8.0 * a * a


def _u_asymptotic(a, w, kmax=40):
    # w^-a 2F0(a, a+1/2;; -1/w), truncated at the smallest term
    acc = np.ones_like(w)
    term = np.ones_like(w)
    best = np.abs(term)
    for k in range(1, kmax):
        term = term * (-(a + k - 1) * (a + 0.5 + k - 1) / (k * w))
        mag = np.abs(term)
        stop = mag >= best
        term = np.where(stop, 0.0, term)
        best = np.where(stop, best, mag)
        acc = acc + term
    return w ** (-a) * acc


def _u_ladder(a, ws):
    # contiguous recurrence in a, seeded by erfcx closed forms; stable for
    # small w only
    n2 = int(round(2 * a))
    rw = np.sqrt(ws)
    if n2 % 2 == 0:
        m = n2 // 2
        u_prev = np.ones_like(ws)  # a = 0
        if m == 0:
            return u_prev
        u_cur = 2.0 * (1.0 - SQRT_PI * rw * special.erfcx(rw))  # a = 1
        aa = 1.0
    else:
        m = (n2 - 1) // 2
        u_prev = SQRT_PI * special.erfcx(rw)  # a = 1/2
        if m == 0:
            return u_prev
        # U(3/2,1/2,w) = sqrt(w) U(2,3/2,w), with U(2,3/2,w) from the b=3/2
        # ladder seeded at U(1,3/2,w) = sqrt(pi/w) erfcx(sqrt(w))
        u1_32 = SQRT_PI / rw * special.erfcx(rw)
        u_cur = rw * 2.0 * ((ws + 0.5) * u1_32 - 1.0)
        aa = 1.5
    for _ in range(m - 1):
        u_prev, u_cur = u_cur, ((2 * aa - 0.5 + ws) * u_cur - u_prev) / (aa * (aa + 0.5))
        aa += 1.0
    return u_cur


def _u_quad_logt(a, w):
    # Laplace integral of DLMF 13.4.4 on a log grid; slow but uniformly
    # accurate in the mid zone
    u, uw = gl_panels(np.arange(-48.0, 8.0 + 1e-9, 0.4), 16)
    t = np.exp(u)
    base = a * u - np.log1p(t) * (a + 0.5)
    E = np.exp(base[None, :] - np.outer(np.asarray(w, float), t))
    return (E @ uw) / special.gamma(a)


def _u_cheb(n2: int):
    if n2 not in _CHEB_CACHE:
        a = 0.5 * n2

        def f(u):
            return np.log(_u_quad_logt(a, np.exp(u)) * np.exp(a * u))

        _CHEB_CACHE[n2] = np.polynomial.chebyshev.Chebyshev.interpolate(
            f, 140, domain=[np.log(_LADDER_MAX_W) - 0.02, np.log(_wlim(a)) + 0.05]
        )
    return _CHEB_CACHE[n2]


def has_fast_kernel(a: float) -> bool:
    """True when u_half has a validated fast path for this a."""
    n2 = 2.0 * a
    return abs(n2 - round(n2)) < 1e-9 and 0 <= round(n2) <= 6


def u_half(a: float, w):
    """U(a, 1/2, w) for w > 0, vectorized.

    Fast three-zone evaluation when ``2a`` is an integer in [0, 6] (relative
    error <= ~1e-12); otherwise defers to scipy's hyperu.
    """
    w = np.asarray(w, float)
    if not has_fast_kernel(a):
        return special.hyperu(a, 0.5, w)
    n2 = int(round(2 * a))
    out = np.empty_like(w)
    wlim = _wlim(a)
    lo = w < _LADDER_MAX_W
    hi = w >= wlim
    mid = ~lo & ~hi
    if np.any(lo):
        out[lo] = _u_ladder(a, w[lo])
    if np.any(mid):
        if n2 <= 1:
            out[mid] = _u_ladder(a, w[mid])  # seeds are exact at any w
        else:
            lw = np.log(w[mid])
            out[mid] = np.exp(_u_cheb(n2)(lw) - a * lw)
    if np.any(hi):
        out[hi] = _u_asymptotic(a, w[hi])
    return out


_DIFF_SERIES_MAX_W = 0.45


def u_half_diff(a: float, w):
    """U(a,1/2,w) - U(a,1/2,0), full relative accuracy down to w -> 0.

    Direct subtraction is catastrophic for small w (both terms approach
    sqrt(pi)/Gamma(a+1/2)); the Kummer connection formula gives the
    difference as an explicit series there.
    """
    w = np.asarray(w, float)
    u0 = SQRT_PI / special.gamma(a + 0.5)
    out = np.empty_like(w)
    small = w < _DIFF_SERIES_MAX_W
    if np.any(small):
        ws = w[small]
        m1 = np.zeros_like(ws)
        t1 = np.ones_like(ws)
        m2 = np.ones_like(ws)
        t2 = np.ones_like(ws)
        for k in range(1, 24):
            t1 = t1 * (a + k - 1) / ((k - 0.5) * k) * ws
            m1 += t1
            t2 = t2 * (a + k - 0.5) / ((k + 0.5) * k) * ws
            m2 += t2
        out[small] = SQRT_PI * m1 / special.gamma(a + 0.5) - 2.0 * SQRT_PI * np.sqrt(ws) * m2 / special.gamma(a)
    big = ~small
    if np.any(big):
        out[big] = u_half(a, w[big]) - u0
    return out


# ---------------------------------------------------------------------------
# Gamma-power Laplace transforms via generalized Gauss-Laguerre
# ---------------------------------------------------------------------------

_GENLAG_CACHE: dict[tuple[float, int], tuple[np.ndarray, np.ndarray]] = {}


def _genlag(order, alpha):
    key = (float(alpha), int(order))
    if key not in _GENLAG_CACHE:
        _GENLAG_CACHE[key] = special.roots_genlaguerre(order, alpha)
    return _GENLAG_CACHE[key]


def _quad_gamma_expectation(func, shape: float) -> float:
    # adaptive fallback; substitute u = x^shape so the density weight is
    # regular at the origin for shape < 1
    from scipy import integrate

    norm = special.gamma(shape)
    if shape < 1.0:

        def g(u):
            x = u ** (1.0 / shape)
            return func(x) * np.exp(-x) / (shape * norm)

    else:

        def g(u):
            return func(u) * u ** (shape - 1.0) * np.exp(-u) / norm

    cut = 30.0 + 10.0 * shape
    v1, _ = integrate.quad(g, 0.0, cut, limit=400)
    v2, _ = integrate.quad(g, cut, np.inf, limit=200)
    return float(v1 + v2)


def gamma_power_expectation(func, shape: float, tol: float = 1e-13, max_order: int = 256):
    """E[func(G)] for G ~ Gamma(shape, rate 1), by Gauss-Laguerre escalation.

    Orders double until two successive values agree to ``tol``; integrands
    with essential behaviour at the origin (negative powers) defeat the
    polynomial rule, so a stalled escalation falls back to adaptive
    quadrature rather than failing.
    """
    if shape <= 0:
        raise ValueError("Gamma shape must be positive")
    alpha = shape - 1.0
    norm = special.gamma(shape)
    prev = None
    order = 32
    while order <= max_order:
        x, w = _genlag(order, alpha)
        val = float(np.sum(w * func(x)) / norm)
        if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
            return val
        prev = val
        order *= 2
    return _quad_gamma_expectation(func, shape)


def gamma_power_laplace(theta: float, shape: float, power: float, tol: float = 1e-13):
    """E[exp(-theta * G**power)] for G ~ Gamma(shape, rate 1).

    This is the canonical numerical object behind the formal series
    sum_n (-theta)^n Gamma(n*power + shape)/(n! Gamma(shape)); the series
    itself diverges whenever |power| > 1 and is offered separately as a
    diagnostic only.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if theta == 0:
        return 1.0
    return gamma_power_expectation(lambda x: np.exp(-theta * x ** power), shape, tol=tol)


def gamma_power_series(theta: float, shape: float, power: float, n_terms: int = 20):
    """Truncated formal series sum (-theta)^n Gamma(n*power+shape)/(n! Gamma(shape)).

    Diverges factorially for power > 1; returned with the index of the
    smallest term so callers can judge how asymptotic the truncation is.
    """
    terms = []
    logg0 = special.gammaln(shape)
    for n in range(n_terms):
        lg = special.gammaln(n * power + shape) - logg0 - special.gammaln(n + 1)
        terms.append(((-theta) ** n) * np.exp(lg))
    terms = np.array(terms)
    k_min = int(np.argmin(np.abs(terms)[1:]) + 1) if n_terms > 1 else 0
    return float(np.sum(terms[: k_min + 1])), k_min
