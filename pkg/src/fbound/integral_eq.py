"""Constant-volatility American call via the singular integral equation.

The unknown is ``H`` on ``xi = sqrt(tau)`` with
``rho(tau) = (rE/q) (1 + sigma sqrt(2) H(sqrt(tau)))``.
The theta-integral is taken by composite Gauss-Legendre on (eps, pi/2);
the sliver (0, eps) uses the theta -> 0 limit of the integrand.

Plain fixed-point sweeps (every node updated from the previous iterate)
are available as :func:`iterate_boundary`.  They amplify grid-scale errors
through the cot(theta) coupling and diverge on fine grids, so
:func:`solve_boundary` uses the Volterra structure instead: H at node i
only depends on H on [0, xi_i], and each node is solved for implicitly
while marching forward in xi.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq
from scipy.special import erf

from .core import ConvergenceError, DomainError, ExerciseRegionError, FboundError

SQRT2 = math.sqrt(2.0)
SQRTPI = math.sqrt(math.pi)
H0_SLOPE = 0.451381  # first-order initial guess H0(xi) = 0.451381 xi


@dataclass(frozen=True)
class QuadratureConfig:
    panels: int = 64
    order: int = 8
    eps: float = 1e-5

    def nodes(self):
        x, w = leggauss(self.order)
        edges = np.linspace(self.eps, 0.5 * math.pi, self.panels + 1)
        a, b = edges[:-1], edges[1:]
        th = ((b - a)[:, None] * (x[None, :] + 1) / 2 + a[:, None]).ravel()
        wt = ((b - a)[:, None] * w[None, :] / 2).ravel()
        return th, wt


@dataclass(frozen=True)
class IntegralConfig:
    n: int = 100
    tol: float = 1e-8
    max_iters: int = 20
    relaxation: float = 1.0
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)


@dataclass
class BoundaryFunctionH:
    xi: np.ndarray
    H: np.ndarray
    Lam: float
    iterations: int = 0
    residual: float = float("nan")
    history: list = field(default_factory=list)


@dataclass
class BoundaryCurve:
    tau: np.ndarray
    rho: np.ndarray

    def at(self, tau):
        return np.interp(tau, self.tau, self.rho)

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.tau, self.rho]), delimiter=",",
                   header="tau,rho", comments="", fmt="%.12g")


def lam(params):
    return (params.r - params.q) / params.sigma - params.sigma / 2.0


def h_to_curve(Hf, params):
    s2 = params.sigma * SQRT2
    return BoundaryCurve(Hf.xi ** 2, params.rho0 * (1.0 + s2 * Hf.H))


def _dH(H, i, h):
    # one-sided (backward) difference keeps the node solve causal
    if i >= 2:
        return (3 * H[i] - 4 * H[i - 1] + H[i - 2]) / (2 * h)
    if i == 1:
        return (H[1] - H[0]) / h
    return (-3 * H[0] + 4 * H[1] - H[2]) / (2 * h)


class _Kernel:
    """Right-hand side of the H-equation at a single node."""

    def __init__(self, params, xi, quad):
        self.r, self.q, self.sig = params.r, params.q, params.sigma
        self.s2 = self.sig * SQRT2
        self.Lam = lam(params)
        self.xi = xi
        self.h = xi[1] - xi[0]
        self.eps = quad.eps
        self.th, self.wt = quad.nodes()
        self.cos, self.sin = np.cos(self.th), np.sin(self.th)
        self.cot = self.cos / self.sin
        self.lnrq = math.log(self.r / self.q)

    def f_H(self, x, Hx):
        if x == 0.0:
            return 0.0
        gp = math.log1p(self.s2 * Hx) / (self.s2 * x) + self.Lam / SQRT2 * x
        z = gp + self.lnrq / (self.s2 * x)
        return math.exp(-self.r * x * x - z * z) / (2 * self.r * SQRTPI * x)

    def phi(self, H, i, dHi):
        """Phi_i(H): right-hand side at node i."""
        x = self.xi[i]
        if x == 0.0:
            return 0.0
        Hi = H[i]
        Hc = np.interp(x * self.cos, self.xi, H)
        xs = x * self.sin
        g = np.log((1 + self.s2 * Hi) / (1 + self.s2 * Hc)) / (self.s2 * xs) \
            + self.Lam / SQRT2 * xs
        integ = (x * self.cos - 2 * self.cot * Hc * g) * np.exp(-self.r * xs * xs - g * g)
        total = float(np.dot(integ, self.wt))
        lim = 0.5 * dHi / (1 + self.s2 * Hi) + self.Lam / SQRT2 * x
        total += self.eps * (x - 2 * Hi * lim)
        if not math.isfinite(total):
            raise FboundError(f"non-finite quadrature at node i={i}, xi={x:.6g}")
        return self.f_H(x, Hi) + total / SQRTPI


def _check(params):
    params.require_call_regime()


def initial_guess(params, n):
    xi = np.linspace(0.0, math.sqrt(params.T), n + 1)
    return BoundaryFunctionH(xi, H0_SLOPE * xi, lam(params))


def iterate_boundary(Hf, params, quad=QuadratureConfig(), relaxation=1.0):
    """One plain fixed-point step H -> Phi(H) at every node (Jacobi style)."""
    _check(params)
    K = _Kernel(params, Hf.xi, quad)
    H = Hf.H
    out = np.zeros_like(H)
    for i in range(1, len(H)):
        out[i] = K.phi(H, i, _dH(H, i, K.h))
    if relaxation != 1.0:
        out = (1 - relaxation) * H + relaxation * out
    return BoundaryFunctionH(Hf.xi, out, Hf.Lam)


def _march(K, H):
    """Forward sweep: solve H_i = Phi_i(H_0..H_i) node by node."""
    H = H.copy()
    n = len(H) - 1
    for i in range(1, n + 1):
        def res(y):
            Ht = H.copy()
            Ht[i] = y
            return K.phi(Ht, i, _dH(Ht, i, K.h)) - y
        lo, hi = 0.0, max(1.0, 4 * H[i])
        while res(hi) > 0:
            hi *= 2
            if hi > 1e6:
                raise FboundError(f"no bracket for node {i}")
        H[i] = brentq(res, lo, hi, xtol=1e-14, rtol=1e-14)
    return H


def solve_boundary(params, cfg=IntegralConfig(), H0=None):
    """Iterate forward sweeps to a fixed point; returns (H, curve)."""
    _check(params)
    Hf = H0 if H0 is not None else initial_guess(params, cfg.n)
    K = _Kernel(params, Hf.xi, cfg.quad)
    H = Hf.H.copy()
    hist = []
    t0 = time.perf_counter()
    for it in range(1, cfg.max_iters + 1):
        Hn = _march(K, H)
        if cfg.relaxation != 1.0:
            Hn = (1 - cfg.relaxation) * H + cfg.relaxation * Hn
        d = float(np.max(np.abs(Hn - H)))
        hist.append(d)
        H = Hn
        if d < cfg.tol:
            break
    else:
        raise ConvergenceError(
            f"integral equation did not converge in {cfg.max_iters} sweeps", residual=d)
    out = BoundaryFunctionH(Hf.xi, H, K.Lam, iterations=it, residual=d, history=hist)
    out.wall_time = time.perf_counter() - t0
    return out, h_to_curve(out, params)


# ---------------------------------------------------------------------------
# pricing
# ---------------------------------------------------------------------------

def _M(x, y):
    return erf(x + y) - erf(x)


def _I1(A, L, t, r, sig):
    w = sig * np.sqrt(2 * t)
    return np.exp(-(r - sig * sig / 2) * t) / 2 * (
        np.exp(A) * _M((-A - sig * sig * t) / w, L / w)
        - np.exp(-A) * _M((A - sig * sig * t) / w, L / w))


def _I2(A, L, t, r, sig):
    w = sig * np.sqrt(2 * t)
    return (np.exp(-r * t) * np.exp(L) / 2 * _M((A - L) / w, 2 * L / w)
            - np.exp(-(r - sig * sig / 2) * t) / 2 * (
                np.exp(A) * _M((-A - sig * sig * t) / w, L / w)
                + np.exp(-A) * _M((A - sig * sig * t) / w, L / w)))


def price_call_semi_explicit(S, tau, curve, params, order=8):
    """American call value at spot S and time to expiry tau.

    The s-integral is written in u = sqrt(tau - s) and split at the grid
    times of ``curve`` (where the linear interpolant of rho has kinks);
    each piece gets an ``order``-point Gauss-Legendre rule.
    """
    params.require_call_regime()
    r, q, sig, E = params.r, params.q, params.sigma, params.E
    if tau < 0 or tau > curve.tau[-1] * (1 + 1e-12):
        raise DomainError(f"tau={tau} outside solved range")
    if S <= 0:
        raise DomainError("S must be positive")
    R = float(curve.at(tau))
    if S > R:
        raise ExerciseRegionError(f"S={S} above boundary {R:.6g}", S - E)
    if tau == 0:
        return max(S - E, 0.0)
    L = math.log(R / S)
    a = r - q - sig * sig / 2
    A0 = math.log(R / curve.rho[0]) + a * tau
    v = S - E + S / R * E * _I2(A0 + math.log(r / q), L, tau, r, sig)

    tk = curve.tau[curve.tau < tau]
    br = np.unique(np.concatenate([[0.0, math.sqrt(tau)], np.sqrt(tau - tk)]))
    x, w = leggauss(order)
    lo, hi = br[:-1], br[1:]
    u = ((hi - lo)[:, None] * (x[None, :] + 1) / 2 + lo[:, None]).ravel()
    wu = ((hi - lo)[:, None] * w[None, :] / 2).ravel()
    dt = u * u
    rs = curve.at(tau - dt)
    A = np.log(R / rs) + a * dt
    f = r * E * _I2(A, L, dt, r, sig) + (r * E - q * rs) * _I1(A, L, dt, r, sig)
    return float(v + S / R * np.dot(f * 2 * u, wu))


def put_boundary_asymptotic(tau, params):
    """Near-expiry American put boundary (no dividends)."""
    if params.q != 0:
        raise DomainError("put asymptotics derived for q = 0 only")
    r, sig, E = params.r, params.sigma, params.E
    if tau <= 0:
        if tau == 0:
            return E
        raise DomainError("tau must be nonnegative")
    arg = 2 * r / sig * math.sqrt(2 * math.pi * tau) * math.exp(r * tau)
    if not 0 < arg < 1:
        raise DomainError(f"asymptotic formula invalid at tau={tau} (log argument {arg:.4g})")
    eta = -math.sqrt(-math.log(arg))
    return E * math.exp(-(r - sig * sig / 2) * tau) * math.exp(sig * math.sqrt(2 * tau) * eta)
