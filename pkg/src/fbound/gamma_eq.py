"""Risk-adjusted pricing (RAPM): hedging interval, Gamma equation, European prices.

The Gamma equation is solved for H = S V_SS in x = ln(S/E):

    H_tau = (beta(H))_xx + (beta(H))_x + r H_x,
    beta(H) = sigma^2/2 (1 + mu H^(1/3)) H.

It is discretised in conservative (finite-volume) form with
beta(H) = D(H_lag) H, D lagged from the previous inner sweep, so the
discrete mass h*sum(H) only changes through the two boundary fluxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.stats import norm

from .core import ConvergenceError, DomainError, FboundError, rapm_mu, signed_power


@dataclass(frozen=True)
class RapmParams:
    C: float
    R: float

    def __post_init__(self):
        if self.C < 0 or self.R < 0:
            raise DomainError("C and R must be nonnegative")

    @property
    def mu(self):
        return rapm_mu(self.C, self.R)


# ---------------------------------------------------------------------------
# hedging interval
# ---------------------------------------------------------------------------

def r_tc(dt, C, sigma_hat, S, Gamma):
    return C * sigma_hat * S * abs(Gamma) / math.sqrt(2 * math.pi * dt)


def r_vp(dt, R, sigma_hat, S, Gamma):
    return 0.5 * R * sigma_hat ** 4 * S * S * Gamma * Gamma * dt


def optimal_hedging_interval(rapm, sigma_hat, S, Gamma):
    """Minimiser of r_TC + r_VP over the hedging lag and the minimal premium.

    Degenerate cases: C = 0 gives dt_opt = 0 and premium 0; R = 0 gives
    dt_opt = inf and premium 0.
    """
    C, R = rapm.C, rapm.R
    if sigma_hat <= 0:
        raise DomainError("sigma_hat must be positive")
    sg = abs(S * Gamma)
    if sg == 0:
        raise DomainError("S*Gamma must be nonzero")
    if C == 0:
        return 0.0, 0.0
    if R == 0:
        return math.inf, 0.0
    K = (C / (R * math.sqrt(2 * math.pi))) ** (1.0 / 3.0)
    dt = K * K / (sigma_hat ** 2 * sg ** (2.0 / 3.0))
    rmin = 1.5 * (C * C * R / (2 * math.pi)) ** (1.0 / 3.0) * sigma_hat ** 2 * sg ** (4.0 / 3.0)
    return dt, rmin


# ---------------------------------------------------------------------------
# Gamma equation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaConfig:
    n: int = 400
    m: int = 2000
    X: float | None = None      # half-width, default 6 sigma sqrt(T)
    tau_star: float = 0.005
    inner_tol: float = 1e-10
    inner_max: int = 20


@dataclass
class GammaField:
    x: np.ndarray
    tau: np.ndarray
    H: np.ndarray        # (levels, n+1)
    mass: np.ndarray
    tau_star: float


def initial_gamma(params, tau_star, x):
    if tau_star <= 0:
        raise DomainError("tau_star must be positive")
    s = params.sigma
    d = (x + (params.r - params.q - s * s / 2) * tau_star) / (s * math.sqrt(tau_star))
    return norm.pdf(d) / (s * math.sqrt(tau_star))


def gamma_closed_form(params, tau_star, x, tau):
    """Exact solution of the mu = 0 Gamma equation from the smoothed delta."""
    s = params.sigma
    tt = tau_star + tau
    d = (x + (params.r - params.q - s * s / 2) * tau_star + (params.r + s * s / 2) * tau) \
        / (s * math.sqrt(tt))
    return norm.pdf(d) / (s * math.sqrt(tt))


def _gamma_matrix(D, v, k, h):
    """Banded form of I - k * L with L the conservative operator."""
    n = len(D) - 1
    ab = np.zeros((3, n - 1))
    # unknowns 1..n-1; H_0 = H_n = 0
    main = 1 + 2 * k * D[1:n] / h ** 2
    # central convection of (v H)_x keeps the divergence form
    up = -k * D[2:n] / h ** 2 - k * v[2:n] / (2 * h)
    lo = -k * D[1:n - 1] / h ** 2 + k * v[1:n - 1] / (2 * h)
    ab[0, 1:] = up
    ab[1, :] = main
    ab[2, :-1] = lo
    return ab


def solve_gamma_equation(params, rapm, cfg=GammaConfig(), save_every=None):
    mu = rapm.mu if isinstance(rapm, RapmParams) else float(rapm)
    if mu < 0:
        raise DomainError("mu must be nonnegative")
    s2 = params.sigma ** 2
    X = cfg.X if cfg.X is not None else 6 * params.sigma * math.sqrt(params.T)
    x = np.linspace(-X, X, cfg.n + 1)
    h = x[1] - x[0]
    k = params.T / cfg.m
    H = initial_gamma(params, cfg.tau_star, x)
    H[0] = H[-1] = 0.0
    save_every = save_every or cfg.m
    levels, taus, masses = [H.copy()], [0.0], [h * H.sum()]
    for j in range(1, cfg.m + 1):
        Hl = H.copy()
        for it in range(cfg.inner_max):
            D = 0.5 * s2 * (1 + mu * signed_power(np.maximum(Hl, 0.0), 1.0 / 3.0))
            v = D + params.r
            ab = _gamma_matrix(D, v, k, h)
            Hn = np.zeros_like(H)
            Hn[1:-1] = solve_banded((1, 1), ab, H[1:-1])
            ch = np.max(np.abs(Hn - Hl))
            Hl = Hn
            if ch < cfg.inner_tol * max(1.0, np.max(np.abs(Hn))):
                break
        else:
            raise ConvergenceError(f"gamma_eq: inner sweeps stalled at level {j}", residual=ch)
        if Hn.min() < -1e-12:
            raise FboundError(f"gamma_eq: negative H={Hn.min():.3g} at tau={j * k:.6g}")
        H = np.maximum(Hn, 0.0)
        if j % save_every == 0 or j == cfg.m:
            levels.append(H.copy())
            taus.append(j * k)
            masses.append(h * H.sum())
    return GammaField(x, np.array(taus), np.array(levels), np.array(masses), cfg.tau_star)


# ---------------------------------------------------------------------------
# European RAPM prices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EuroConfig:
    n: int = 400
    m: int = 200
    width: float = 6.0        # domain half-width in units of sigma sqrt(T)
    rannacher: int = 4        # backward Euler half-steps before Crank-Nicolson
    inner_tol: float = 1e-8
    inner_max: int = 30


def _bs_call(S, E, r, q, s, tau):
    if tau <= 0:
        return np.maximum(S - E, 0.0)
    d1 = (np.log(S / E) + (r - q + s * s / 2) * tau) / (s * math.sqrt(tau))
    return S * math.exp(-q * tau) * norm.cdf(d1) - E * math.exp(-r * tau) * norm.cdf(d1 - s * math.sqrt(tau))


def price_european_rapm(params, rapm, tau=None, cfg=EuroConfig(), payoff="call"):
    """European RAPM value on a log-price grid at time to expiry ``tau``.

    Returns (S, V).  sigma^2 is lagged on the latest inner sweep and the
    level is iterated until the update drops below ``inner_tol``.
    """
    mu = rapm.mu if isinstance(rapm, RapmParams) else float(rapm)
    if mu < 0:
        raise DomainError("mu must be nonnegative")
    tau = params.T if tau is None else tau
    r, q, s, E = params.r, params.q, params.sigma, params.E
    s2 = s * s
    X = cfg.width * s * math.sqrt(max(tau, 1e-12)) + abs(r - q) * tau
    X = max(X, 0.5)
    x = np.linspace(-X, X, cfg.n + 1)
    h = x[1] - x[0]
    S = E * np.exp(x)
    call = payoff == "call"
    V = np.maximum(S - E, 0.0) if call else np.maximum(E - S, 0.0)
    if tau == 0:
        return S, V

    def bc(t):
        if call:
            return 0.0, S[-1] * math.exp(-q * t) - E * math.exp(-r * t)
        return E * math.exp(-r * t) - S[0] * math.exp(-q * t), 0.0

    def sig2(Vv):
        g = (Vv[2:] - 2 * Vv[1:-1] + Vv[:-2]) / h ** 2 - (Vv[2:] - Vv[:-2]) / (2 * h)
        Hh = np.maximum(g / S[1:-1], 0.0)   # S*Gamma, clamped to the parabolic range
        return s2 * (1 + mu * signed_power(Hh, 1.0 / 3.0))

    def op(Vv, sg):
        # spatial operator L V at interior nodes
        vxx = (Vv[2:] - 2 * Vv[1:-1] + Vv[:-2]) / h ** 2
        vx = (Vv[2:] - Vv[:-2]) / (2 * h)
        return 0.5 * sg * (vxx - vx) + (r - q) * vx - r * Vv[1:-1]

    def solve(Vold, sg_old, t_new, dt, theta):
        V_it = Vold.copy()
        left, right = bc(t_new)
        V_it[0], V_it[-1] = left, right
        rhs0 = Vold[1:-1] + (1 - theta) * dt * op(Vold, sg_old) if theta < 1 else Vold[1:-1].copy()
        for it in range(cfg.inner_max):
            sg = sig2(V_it)
            a = 0.5 * sg / h ** 2
            b = (-0.5 * sg + (r - q)) / (2 * h)
            lo = a - b          # coefficient of V_{i-1}
            di = -2 * a - r
            up = a + b          # coefficient of V_{i+1}
            ab = np.zeros((3, cfg.n - 1))
            ab[0, 1:] = -theta * dt * up[:-1]
            ab[1, :] = 1 - theta * dt * di
            ab[2, :-1] = -theta * dt * lo[1:]
            rhs = rhs0.copy()
            rhs[0] += theta * dt * lo[0] * left
            rhs[-1] += theta * dt * up[-1] * right
            Vn = V_it.copy()
            Vn[1:-1] = solve_banded((1, 1), ab, rhs)
            ch = np.max(np.abs(Vn - V_it))
            V_it = Vn
            if ch < cfg.inner_tol * max(1.0, E):
                return V_it
        raise ConvergenceError(f"rapm price: inner sweeps stalled at tau={t_new:.6g}", residual=ch)

    k = tau / cfg.m
    t = 0.0
    nr = min(cfg.rannacher, 2 * cfg.m)
    for _ in range(nr):
        V = solve(V, None, t + k / 2, k / 2, 1.0)
        t += k / 2
    steps = cfg.m - nr // 2
    for j in range(steps):
        sg_old = sig2(V)
        V = solve(V, sg_old, t + k, k, 0.5)
        t += k
    return S, V


def rapm_value(params, rapm, S0, tau=None, cfg=EuroConfig()):
    S, V = price_european_rapm(params, rapm, tau, cfg)
    return float(np.interp(math.log(S0), np.log(S), V))


def bid_ask(params, rapm, S0, t=0.0, cfg=EuroConfig()):
    tau = params.T - t
    if tau < 0:
        raise DomainError("t beyond expiry")
    ask = rapm_value(params, rapm, S0, tau, cfg)
    mid = rapm_value(params, RapmParams(rapm.C, 0.0), S0, tau, cfg)
    return 2 * mid - ask, mid, ask


def calibrate_rapm(V_mid, V_ask, C, params, S0, t=0.0, guess=(0.25, 1.0),
                   cfg=EuroConfig(), max_iter=50):
    """Solve V_mid = V(sigma, R=0), V_ask = V(sigma, R) by damped Newton.

    Newton runs on (sigma, R^(1/3)): the spread grows like R^(1/3), so this
    keeps the Jacobian bounded as R -> 0.  Returns (sigma, R, residual).
    """
    if V_ask < V_mid:
        raise FboundError("calibration failure: ask below mid")
    if C <= 0 and V_ask > V_mid:
        raise FboundError("calibration failure: spread with C = 0")
    tau = params.T - t

    def F(z):
        sg, w = z
        p = replace(params, sigma=sg)
        mid = rapm_value(p, RapmParams(C, 0.0), S0, tau, cfg)
        ask = rapm_value(p, RapmParams(C, w ** 3), S0, tau, cfg) if w > 0 else mid
        return np.array([mid - V_mid, ask - V_ask])

    z = np.array([guess[0], guess[1] ** (1.0 / 3.0)], float)
    tol = 1e-6 * params.E
    Fz = F(z)
    for it in range(max_iter):
        if np.max(np.abs(Fz)) < tol:
            return float(z[0]), float(z[1] ** 3), float(np.max(np.abs(Fz)))
        J = np.empty((2, 2))
        for c_ in range(2):
            dz = np.zeros(2)
            dz[c_] = max(1e-6, 1e-5 * abs(z[c_]))
            if z[c_] - dz[c_] <= 0:
                J[:, c_] = (F(z + dz) - Fz) / dz[c_]
            else:
                J[:, c_] = (F(z + dz) - F(z - dz)) / (2 * dz[c_])
        if not np.all(np.isfinite(J)) or abs(np.linalg.det(J)) < 1e-14:
            raise FboundError("calibration failure: singular Jacobian")
        step = np.linalg.solve(J, -Fz)
        lam = 1.0
        for _ in range(10):
            zn = z + lam * step
            zn[0] = max(zn[0], 1e-4)
            zn[1] = max(zn[1], 0.0)
            Fn = F(zn)
            if np.max(np.abs(Fn)) < np.max(np.abs(Fz)):
                break
            lam *= 0.5
        z, Fz = zn, Fn
    raise FboundError(f"calibration failure after {max_iter} iterations, residuals {Fz}")
