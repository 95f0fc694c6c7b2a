"""Reference pricers: Black-Scholes, CRR lattice, PSOR and Barone-Adesi-Whaley."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import brentq
from scipy.stats import norm

from .core import ConvergenceError, DomainError, FboundError


def _kind(payoff):
    if payoff not in ("call", "put"):
        raise DomainError(f"payoff must be 'call' or 'put', got {payoff!r}")
    return payoff == "call"


def bs_european_price(S, params, tau, payoff="call"):
    """Closed-form European value with continuous dividend yield."""
    call = _kind(payoff)
    r, q, s, E = params.r, params.q, params.sigma, params.E
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0) or tau < 0:
        raise DomainError("need S > 0 and tau >= 0")
    if tau == 0:
        out = np.maximum(S - E, 0.0) if call else np.maximum(E - S, 0.0)
    else:
        sq = s * math.sqrt(tau)
        d1 = (np.log(S / E) + (r - q + 0.5 * s * s) * tau) / sq
        d2 = d1 - sq
        Sq, Er = S * math.exp(-q * tau), E * math.exp(-r * tau)
        if call:
            out = Sq * norm.cdf(d1) - Er * norm.cdf(d2)
        else:
            out = Er * norm.cdf(-d2) - Sq * norm.cdf(-d1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeConfig:
    steps: int = 2000
    style: str = "american"
    payoff: str = "call"

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.style not in ("american", "european"):
            raise DomainError(f"unknown style {self.style!r}")
        _kind(self.payoff)


def _crr(params, tau, N):
    dt = tau / N
    u = math.exp(params.sigma * math.sqrt(dt))
    d = 1.0 / u
    p = (math.exp((params.r - params.q) * dt) - d) / (u - d)
    if not 0 < p < 1:
        raise DomainError(f"CRR probability {p:.4g} outside (0,1); use more steps")
    return u, p, math.exp(-params.r * dt)


def binomial_price(S, params, cfg=LatticeConfig(), tau=None):
    """CRR backward induction.

    Returns (price, boundary) where boundary[i] is the exercise threshold
    at level i (time to expiry tau - i*dt): the lowest exercised node for a
    call, the highest for a put, NaN where no node is exercised.
    """
    tau = params.T if tau is None else tau
    if S <= 0 or tau <= 0:
        raise DomainError("need S > 0 and tau > 0")
    call = cfg.payoff == "call"
    amer = cfg.style == "american"
    N = cfg.steps
    u, p, disc = _crr(params, tau, N)
    E = params.E
    ST = S * u ** (N - 2.0 * np.arange(N + 1))
    V = np.maximum(ST - E, 0.0) if call else np.maximum(E - ST, 0.0)
    bnd = np.full(N + 1, np.nan)
    for i in range(N - 1, -1, -1):
        V = disc * (p * V[:-1] + (1 - p) * V[1:])
        if amer:
            St = S * u ** (i - 2.0 * np.arange(i + 1))
            ex = St - E if call else E - St
            hit = ex >= V
            V = np.where(hit, ex, V)
            if hit.any():
                bnd[i] = St[hit].min() if call else St[hit].max()
    return float(V[0]), bnd


def binomial_critical_price(params, tau, steps=5000, payoff="put", tol=1e-7):
    """Critical price at time to expiry tau from the lattice root decision.

    Bisection on S for the sign of (intrinsic - continuation) at the root
    of a tree started at S.
    """
    call = _kind(payoff)
    E = params.E

    def gap(S):
        N = steps
        u, p, disc = _crr(params, tau, N)
        ST = S * u ** (N - 2.0 * np.arange(N + 1))
        V = np.maximum(ST - E, 0.0) if call else np.maximum(E - ST, 0.0)
        for i in range(N - 1, 0, -1):
            V = disc * (p * V[:-1] + (1 - p) * V[1:])
            St = S * u ** (i - 2.0 * np.arange(i + 1))
            V = np.maximum(V, St - E if call else E - St)
        cont = disc * (p * V[0] + (1 - p) * V[1])
        return (S - E if call else E - S) - cont

    if call:
        lo, hi = E, 2 * E
        while gap(hi) < 0:
            hi *= 2
            if hi > 1e3 * E:
                raise FboundError("no call exercise region found")
    else:
        lo, hi = 1e-3 * E, E
    return brentq(gap, lo, hi, xtol=tol)


# ---------------------------------------------------------------------------
# PSOR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsorConfig:
    n_space: int = 800
    n_time: int = 800
    width: float | None = None     # half-width in ln S, default max(6 sigma sqrt(T), 1)
    omega: float = 1.2
    tol: float = 1e-8
    max_sweeps: int = 10000
    payoff: str = "call"


@njit(cache=True)
def _psor_sweep(V, rhs, g, lo, di, up, omega, tol, maxit):
    n = V.shape[0]
    for it in range(maxit):
        err = 0.0
        for i in range(1, n - 1):
            y = (rhs[i] - lo * V[i - 1] - up * V[i + 1]) / di
            y = V[i] + omega * (y - V[i])
            if y < g[i]:
                y = g[i]
            e = abs(y - V[i])
            if e > err:
                err = e
            V[i] = y
        if err < tol:
            return it + 1
    return -1


def psor_price(params, cfg=PsorConfig()):
    """Crank-Nicolson in ln S with projected SOR at each step.

    Returns (S, V, boundary, residual): boundary[j] is the exercise
    threshold after j steps (time to expiry j*dt), residual the largest
    nodewise complementarity residual min(AV - f, V - payoff) at the last
    step.
    """
    call = _kind(cfg.payoff)
    r, q, s, E, T = params.r, params.q, params.sigma, params.E, params.T
    W = cfg.width if cfg.width is not None else max(6 * s * math.sqrt(T), 1.0)
    x = np.linspace(-W, W, cfg.n_space + 1)
    h = x[1] - x[0]
    S = E * np.exp(x)
    g = np.maximum(S - E, 0.0) if call else np.maximum(E - S, 0.0)
    dt = T / cfg.n_time
    a = 0.5 * s * s / h ** 2
    b = (r - q - 0.5 * s * s) / (2 * h)
    # operator A V = -(a (V+ - 2V + V-) + b (V+ - V-)) + r V
    lo_op, di_op, up_op = -(a - b), 2 * a + r, -(a + b)
    lo, di, up = 0.5 * dt * lo_op, 1 + 0.5 * dt * di_op, 0.5 * dt * up_op
    V = g.copy()
    bnd = np.full(cfg.n_time + 1, np.nan)
    bnd[0] = E
    rhs = np.empty_like(V)
    res = 0.0
    for j in range(1, cfg.n_time + 1):
        rhs[1:-1] = V[1:-1] - 0.5 * dt * (lo_op * V[:-2] + di_op * V[1:-1] + up_op * V[2:])
        V[0], V[-1] = g[0], g[-1]
        it = _psor_sweep(V, rhs, g, lo, di, up, cfg.omega, cfg.tol, cfg.max_sweeps)
        if it < 0:
            raise ConvergenceError(f"psor: no convergence at tau={j * dt:.6g}", where=j * dt)
        ex = np.nonzero((V <= g + 1e-12) & (g > 0))[0]
        if ex.size:
            bnd[j] = S[ex].min() if call else S[ex].max()
        if j == cfg.n_time:
            AV = lo * V[:-2] + di * V[1:-1] + up * V[2:] - rhs[1:-1]
            res = float(np.max(np.abs(np.minimum(AV, V[1:-1] - g[1:-1]))))
    return S, V, bnd, res


def psor_at(S0, params, cfg=PsorConfig()):
    S, V, _, _ = psor_price(params, cfg)
    return float(np.interp(math.log(S0), np.log(S), V))


# ---------------------------------------------------------------------------
# Barone-Adesi-Whaley
# ---------------------------------------------------------------------------

def baw_price(S, params, tau=None, payoff="call", tol=1e-10, max_iter=100):
    """Quadratic approximation; critical price by Newton on value matching."""
    call = _kind(payoff)
    tau = params.T if tau is None else tau
    if tau <= 0 or S <= 0:
        raise DomainError("need S > 0 and tau > 0")
    r, q, s, E = params.r, params.q, params.sigma, params.E
    b = r - q
    if call and q == 0:
        return bs_european_price(S, params, tau, "call")
    s2 = s * s
    M, Nn = 2 * r / s2, 2 * b / s2
    K = 1 - math.exp(-r * tau)
    sq = s * math.sqrt(tau)
    eq = math.exp((b - r) * tau)
    root = math.sqrt((Nn - 1) ** 2 + 4 * M / K)
    qq = (-(Nn - 1) + root) / 2 if call else (-(Nn - 1) - root) / 2

    def d1(x):
        return (math.log(x / E) + (b + s2 / 2) * tau) / sq

    # standard seed from the perpetual critical price
    qinf = (-(Nn - 1) + (1 if call else -1) * math.sqrt((Nn - 1) ** 2 + 4 * M)) / 2
    Sinf = E / (1 - 1 / qinf)
    if call:
        hh = -(b * tau + 2 * sq) * E / (Sinf - E)
        Sc = E + (Sinf - E) * (1 - math.exp(hh))
    else:
        hh = (b * tau - 2 * sq) * E / (E - Sinf)
        Sc = Sinf + (E - Sinf) * math.exp(hh)

    sgn = 1 if call else -1
    for _ in range(max_iter):
        d = d1(Sc)
        Nd = norm.cdf(sgn * d)
        euro = bs_european_price(Sc, params, tau, payoff)
        f = sgn * (Sc - E) - euro - sgn * (1 - eq * Nd) * Sc / qq
        fp = sgn - sgn * eq * Nd - sgn * (1 - eq * Nd) / qq + eq * norm.pdf(d) / (sq * qq)
        step = f / fp
        Sc -= step
        if Sc <= 0 or not math.isfinite(Sc):
            raise ConvergenceError("baw: Newton left the positive axis")
        if abs(step) < tol * E:
            break
    else:
        raise ConvergenceError("baw: critical price Newton did not converge")
    A = sgn * (Sc / qq) * (1 - eq * norm.cdf(sgn * d1(Sc)))
    if (call and S >= Sc) or (not call and S <= Sc):
        return sgn * (S - E)
    return bs_european_price(S, params, tau, payoff) + A * (S / Sc) ** qq
