"""American floating-strike Asian call (arithmetic average) in similarity form.

State variable x = S/A, boundary rho(tau) = x_f(T - tau), and the
transformed unknown Pi on xi = ln(rho/x) in [0, L].  The scheme mirrors
the vanilla solver: transport along characteristics, then an implicit
diffusion-reaction step whose drift carries the space-dependent part
(rho e^{-xi} - 1)/(T - tau).  The boundary constraint is

    rho = (1 + r(T-tau) + (T-tau) sigma^2/2 (Pi_1 - Pi_0)/h) / (1 + q(T-tau)).

The horizon tau = T is singular; the march stops one step short of it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import ConvergenceError, DomainError, FboundError
from .pde_solver import transport, tridiag_factor, tridiag_solve


@dataclass(frozen=True)
class AsianParams:
    r: float
    q: float
    sigma: float
    T: float

    def __post_init__(self):
        if not (self.r >= self.q >= 0):
            raise DomainError(f"Asian solver needs r >= q >= 0 (got r={self.r}, q={self.q})")
        if self.sigma <= 0 or self.T <= 0:
            raise DomainError("sigma and T must be positive")


@dataclass(frozen=True)
class AsianConfig:
    n: int = 100
    m: int = 10000
    L: float = 3.0
    micro_tol: float = 1e-7
    micro_max: int = 50
    max_jump: float = 0.5


@dataclass
class AsianState:
    xi: np.ndarray
    tau: np.ndarray
    rho: np.ndarray
    Pi: np.ndarray           # last computed level
    micro_iters: np.ndarray
    pi_min: float
    pi_max: float
    wall_time: float = 0.0

    def inv_xf(self):
        """(t, 1/x_f(t)) with t = T - tau."""
        T = self.tau[-1] + (self.tau[1] - self.tau[0])
        return T - self.tau, 1.0 / self.rho

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.tau, self.rho]), delimiter=",",
                   header="tau,rho", comments="", fmt="%.12g")

    def inv_csv(self, path):
        t, v = self.inv_xf()
        order = np.argsort(t)
        np.savetxt(path, np.column_stack([t[order], v[order]]), delimiter=",",
                   header="t,inv_xf", comments="", fmt="%.12g")


def asian_initial_boundary(params):
    return (1 + params.r * params.T) / (1 + params.q * params.T)


def asian_boundary_constraint(Pi, params, tau, h):
    if tau >= params.T:
        raise DomainError("boundary constraint degenerates at tau = T")
    ttm = params.T - tau
    sl = (Pi[1] - Pi[0]) / h
    return (1 + params.r * ttm + ttm * params.sigma ** 2 / 2 * sl) / (1 + params.q * ttm)


def asian_transport(Pi_prev, rho_prev, rho_new, params, k, L):
    """Half-step values: shift ln(rho_new/rho_prev) + (r-q)k, -1 on the left."""
    Pi_prev = np.asarray(Pi_prev, float)
    n = len(Pi_prev) - 1
    h = L / n
    out = np.empty(n + 1)
    transport(Pi_prev, np.arange(n + 1) * h, math.log(rho_new / rho_prev)
              + (params.r - params.q) * k, 1.0, L, h, out)
    return out


@njit(cache=True)
def _assemble(rho, x, s2, r, k, h, ttm, n, a, b, c):
    for i in range(1, n):
        drift = 0.5 * s2 + (rho * math.exp(-x[i]) - 1.0) / ttm
        al = -k / (2 * h * h) * s2 + k / (2 * h) * drift
        ga = -k / (2 * h * h) * s2 - k / (2 * h) * drift
        a[i] = al
        c[i] = ga
        b[i] = 1.0 + (r + 1.0 / ttm) * k - (al + ga)


@njit(cache=True)
def _level(Pi_prev, rho_prev, rb, x, s2, r, q, k, h, L, ttm, n, half, new, a, b, c, bp, lf, d):
    transport(Pi_prev, x, math.log(rb / rho_prev) + (r - q) * k, 1.0, L, h, half)
    _assemble(rb, x, s2, r, k, h, ttm, n, a, b, c)
    tridiag_factor(a, b, c, n, bp, lf)
    tridiag_solve(bp, lf, a, c, half, -1.0, 0.0, n, d, new)
    sl = (new[1] + 1.0) / h
    return (1.0 + r * ttm + ttm * 0.5 * s2 * sl) / (1.0 + q * ttm) - rb


@njit(cache=True)
def asian_kernel(r, q, sig, T, L, n, m, tol, maxit, max_jump):
    h = L / n
    k = T / m
    s2 = sig * sig
    x = np.arange(n + 1) * h
    rho0 = (1 + r * T) / (1 + q * T)
    Pi = np.empty(n + 1)
    xj = math.log(rho0)
    for i in range(n + 1):
        Pi[i] = -1.0 if x[i] < xj else 0.0
    Pi[0] = -1.0
    Pi[n] = 0.0
    rho = np.empty(m)
    rho[0] = rho0
    its = np.zeros(m, np.int64)
    half = np.empty(n + 1)
    new = np.empty(n + 1)
    Pp = Pi.copy()
    a = np.zeros(n + 1)
    b = np.zeros(n + 1)
    c = np.zeros(n + 1)
    bp = np.zeros(n + 1)
    lf = np.zeros(n + 1)
    d = np.zeros(n + 1)
    pmin = -1.0
    pmax = 0.0
    for j in range(1, m):
        ttm = T - j * k
        rp = rho[j - 1]
        for i in range(n + 1):
            Pp[i] = Pi[i]
        conv = False
        it = 0
        for it in range(maxit):
            # secant on the scalar constraint
            ra = rp
            ga = _level(Pi, rho[j - 1], ra, x, s2, r, q, k, h, L, ttm, n, half, new,
                        a, b, c, bp, lf, d)
            rb = ra + ga
            for _ in range(60):
                if rb <= 0.0:
                    rb = 0.5 * ra
                gb = _level(Pi, rho[j - 1], rb, x, s2, r, q, k, h, L, ttm, n, half, new,
                            a, b, c, bp, lf, d)
                if abs(gb) < 1e-13 * rb or gb == ga:
                    break
                rc = rb - gb * (rb - ra) / (gb - ga)
                ra = rb
                ga = gb
                rb = rc
            err = abs(rb - rp)
            for i in range(n + 1):
                e = abs(new[i] - Pp[i])
                if e > err:
                    err = e
                Pp[i] = new[i]
            rp = rb
            if err < tol:
                conv = True
                break
        its[j] = it + 1
        if abs(rp - rho[j - 1]) > max_jump:
            rho[j] = rp
            return rho, Pi, its, 2, j, pmin, pmax
        for i in range(n + 1):
            Pi[i] = Pp[i]
            if Pi[i] < pmin:
                pmin = Pi[i]
            if Pi[i] > pmax:
                pmax = Pi[i]
        rho[j] = rp
        if not conv:
            return rho, Pi, its, 1, j, pmin, pmax
    return rho, Pi, its, 0, -1, pmin, pmax


def asian_solve(params, cfg=AsianConfig()):
    if cfg.n < 2 or cfg.m < 2:
        raise DomainError("n and m must be at least 2")
    t0 = time.perf_counter()
    rho, Pi, its, status, fail, pmin, pmax = asian_kernel(
        params.r, params.q, params.sigma, params.T, cfg.L, cfg.n, cfg.m,
        cfg.micro_tol, cfg.micro_max, cfg.max_jump)
    k = params.T / cfg.m
    if status == 1:
        raise ConvergenceError(
            f"asian: micro-iteration did not converge at tau={fail * k:.6g}", where=fail * k)
    if status == 2:
        raise FboundError(f"asian: boundary jump exceeded {cfg.max_jump} at tau={fail * k:.6g}")
    xi = np.arange(cfg.n + 1) * (cfg.L / cfg.n)
    tau = np.arange(cfg.m) * k
    return AsianState(xi, tau, rho, Pi, its[1:], float(pmin), float(pmax),
                      time.perf_counter() - t0)


def asian_advance(Pi_prev, rho_prev, params, cfg, j):
    """One time level; returns (Pi_j, rho_j, micro-iterations)."""
    k = params.T / cfg.m
    ttm = params.T - j * k
    if ttm <= 0:
        raise DomainError("cannot advance onto the singular horizon tau = T")
    n = len(Pi_prev) - 1
    h = cfg.L / n
    x = np.arange(n + 1) * h
    bufs = [np.zeros(n + 1) for _ in range(8)]
    half, new, a, b, c, bp, lf, d = bufs
    Pi_prev = np.asarray(Pi_prev, float)
    rp = rho_prev
    Pp = Pi_prev.copy()
    s2 = params.sigma ** 2
    for it in range(cfg.micro_max):
        ra = rp
        ga = _level(Pi_prev, rho_prev, ra, x, s2, params.r, params.q, k, h, cfg.L, ttm, n,
                    half, new, a, b, c, bp, lf, d)
        rb = ra + ga
        for _ in range(60):
            gb = _level(Pi_prev, rho_prev, rb, x, s2, params.r, params.q, k, h, cfg.L, ttm,
                        n, half, new, a, b, c, bp, lf, d)
            if abs(gb) < 1e-13 * rb or gb == ga:
                break
            ra, ga, rb = rb, gb, rb - gb * (rb - ra) / (gb - ga)
        err = max(abs(rb - rp), float(np.max(np.abs(new - Pp))))
        Pp = new.copy()
        rp = rb
        if err < cfg.micro_tol:
            return Pp, rp, it + 1
    raise ConvergenceError(f"asian: level {j} did not converge", residual=err)
