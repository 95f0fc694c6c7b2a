"""Shared domain types, the volatility catalogue and the Barles-Soner Psi function.

Every volatility model is expressed through the curvature variable
``p = S^2 V_SS`` (which equals the x-derivative of the synthetic portfolio
in the transformed coordinates), the asset price ``S`` and the time to
expiry ``tau``.  The numba kernel :func:`sig2_kernel` is the single
implementation used by the time-marching solvers; the Python wrappers
call it too so both paths agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator


class FboundError(Exception):
    """Base class for library errors."""


class DomainError(FboundError, ValueError):
    pass


class ConvergenceError(FboundError):
    def __init__(self, msg, residual=None, where=None):
        super().__init__(msg)
        self.residual = residual
        self.where = where


class SingularVolatilityError(FboundError):
    pass


class ExerciseRegionError(FboundError):
    """Raised when a price is requested inside the exercise region.

    ``value`` carries the intrinsic value, which is the price there.
    """

    def __init__(self, msg, value):
        super().__init__(msg)
        self.value = value


@dataclass(frozen=True)
class MarketParams:
    r: float
    q: float
    E: float
    T: float
    sigma: float

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError(f"r must be positive, got {self.r}")
        if not self.q >= 0:
            raise DomainError(f"q must be nonnegative, got {self.q}")
        if not self.E > 0:
            raise DomainError(f"E must be positive, got {self.E}")
        if not self.T > 0:
            raise DomainError(f"T must be positive, got {self.T}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")

    def require_call_regime(self):
        # structural assumption for the call boundary problem
        if not (0 < self.q < self.r):
            raise DomainError(
                f"structural assumption 0 < q < r violated (got r={self.r}, q={self.q})")

    @property
    def rho0(self):
        return self.r * self.E / self.q


# ---------------------------------------------------------------------------
# volatility specifications
# ---------------------------------------------------------------------------

CONSTANT, LELAND, AVELLANEDA, RAPM_CODE, BARLES_SONER, FREY_STREMME = range(6)


@dataclass(frozen=True)
class Constant:
    code = CONSTANT
    name = "constant"

    def args(self):
        return 0.0, 0.0


@dataclass(frozen=True)
class Leland:
    Le: float
    code = LELAND
    name = "leland"

    def __post_init__(self):
        if self.Le < 0:
            raise DomainError("Le must be nonnegative")

    def args(self):
        return float(self.Le), 0.0


@dataclass(frozen=True)
class Avellaneda:
    sigma1: float
    sigma2: float
    code = AVELLANEDA
    name = "avellaneda"

    def __post_init__(self):
        if not (0 < self.sigma1 <= self.sigma2):
            raise DomainError("need 0 < sigma1 <= sigma2")

    def args(self):
        return float(self.sigma1), float(self.sigma2)


@dataclass(frozen=True)
class RAPM:
    mu: float
    code = RAPM_CODE
    name = "rapm"

    def __post_init__(self):
        if self.mu < 0:
            raise DomainError("mu must be nonnegative")

    @classmethod
    def from_costs(cls, C, R):
        return cls(rapm_mu(C, R))

    def args(self):
        return float(self.mu), 0.0


@dataclass(frozen=True)
class BarlesSoner:
    a: float
    code = BARLES_SONER
    name = "barles-soner"

    def __post_init__(self):
        if self.a < 0:
            raise DomainError("risk aversion a must be nonnegative")

    def args(self):
        return float(self.a), 0.0


@dataclass(frozen=True)
class FreyStremme:
    rho_fb: float
    lam: float = 1.0
    code = FREY_STREMME
    name = "frey-stremme"

    def __post_init__(self):
        if self.rho_fb < 0 or self.lam < 1:
            raise DomainError("need rho_fb >= 0 and lam >= 1")

    def args(self):
        return float(self.rho_fb), float(self.lam)


VolatilitySpec = Constant | Leland | Avellaneda | RAPM | BarlesSoner | FreyStremme


def rapm_mu(C, R):
    if C < 0 or R < 0:
        raise DomainError("C and R must be nonnegative")
    return 3.0 * (C * C * R / (2.0 * math.pi)) ** (1.0 / 3.0)


# ---------------------------------------------------------------------------
# Psi
# ---------------------------------------------------------------------------

# small-x series Psi = c s + d s^2 + e s^3, s = x^(1/3)
PSI_C = 1.5 ** (2.0 / 3.0)
PSI_D = 2.0 * 2.0 ** (2.0 / 3.0) * 3.0 ** (1.0 / 3.0) / 5.0
PSI_E = 72.0 / 175.0


@dataclass(frozen=True)
class PsiTable:
    """Psi tabulated on a log grid.

    ``logx`` is uniform; ``logv`` = ln Psi and ``slope`` its PCHIP
    derivative w.r.t. ln x.  Below ``x[0]`` the series is used, above
    ``x[-1]`` the large-x form Psi ~ x + ln x + const.
    """
    x: np.ndarray
    values: np.ndarray
    logx: np.ndarray
    logv: np.ndarray
    slope: np.ndarray

    @property
    def x_min(self):
        return float(self.x[0])

    @property
    def x_max(self):
        return float(self.x[-1])


def _psi_rhs(t, y):
    x = math.exp(t)
    P = y[0]
    return [x * (P + 1.0) / (2.0 * math.sqrt(x * P) - x)]


@lru_cache(maxsize=4)
def psi_table(x0=1e-12, x1=1e8, nodes=2048):
    t0, t1 = math.log(x0), math.log(x1)
    s = x0 ** (1.0 / 3.0)
    y0 = PSI_C * s + PSI_D * s * s + PSI_E * s ** 3
    tt = np.linspace(t0, t1, nodes)
    sol = solve_ivp(_psi_rhs, (t0, t1), [y0], method="DOP853", t_eval=tt,
                    rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise FboundError(f"Psi integration failed: {sol.message}")
    vals = sol.y[0]
    logv = np.log(vals)
    slope = PchipInterpolator(tt, logv).derivative()(tt)
    for a in (tt, vals, logv, slope):
        a.setflags(write=False)
    x = np.exp(tt)
    x.setflags(write=False)
    return PsiTable(x, vals, tt, logv, slope)


@njit(cache=True)
def psi_kernel(x, logx, logv, slope):
    if x <= 0.0:
        return 0.0
    n = logx.shape[0]
    if x < math.exp(logx[0]):
        s = np.cbrt(x)
        return PSI_C * s + PSI_D * s * s + PSI_E * x
    t = math.log(x)
    h = logx[1] - logx[0]
    u = (t - logx[0]) / h
    i = int(u)
    if i >= n - 1:
        xm = math.exp(logx[n - 1])
        if x <= xm:
            return math.exp(logv[n - 1])
        return math.exp(logv[n - 1]) + (x - xm) + math.log(x / xm)
    w = u - i
    w2 = w * w
    w3 = w2 * w
    h00 = 2 * w3 - 3 * w2 + 1
    h10 = w3 - 2 * w2 + w
    h01 = -2 * w3 + 3 * w2
    h11 = w3 - w2
    lv = h00 * logv[i] + h10 * h * slope[i] + h01 * logv[i + 1] + h11 * h * slope[i + 1]
    return math.exp(lv)


def psi(x):
    """Barles-Soner Psi at scalar or array ``x >= 0``."""
    tab = psi_table()
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("psi is defined for x >= 0 only")
    out = np.array([psi_kernel(v, tab.logx, tab.logv, tab.slope) for v in arr.ravel()])
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# sigma^2
# ---------------------------------------------------------------------------

@njit(cache=True)
def sig2_kernel(code, s2hat, c1, c2, r, p, S, tau, logx, logv, slope):
    """Model variance; returns +inf where Frey-Stremme is singular."""
    if code == 0:
        return s2hat
    if code == 1:
        sg = 0.0
        if p > 0:
            sg = 1.0
        elif p < 0:
            sg = -1.0
        return s2hat * (1.0 + c1 * sg)
    if code == 2:
        if p > 0:
            return c2 * c2
        return c1 * c1
    if code == 3:
        return s2hat * (1.0 + c1 * np.cbrt(p / S))
    if code == 4:
        arg = c1 * c1 * math.exp(r * tau) * p
        if arg < 0.0:
            arg = 0.0
        return s2hat * (1.0 + psi_kernel(arg, logx, logv, slope))
    den = 1.0 - c1 * c2 * p / S
    if den <= 0.0:
        return np.inf
    return s2hat / (den * den)


def kernel_args(spec, params):
    """Flatten (spec, params) into the scalar tuple used by the kernels."""
    c1, c2 = spec.args()
    return spec.code, params.sigma ** 2, c1, c2, params.r


def sigma_squared(spec, params, p, S, tau):
    if S <= 0:
        raise DomainError("S must be positive")
    if tau < 0 or tau > params.T:
        raise DomainError(f"tau={tau} outside [0, T]")
    tab = psi_table()
    v = sig2_kernel(*kernel_args(spec, params), float(p), float(S), float(tau),
                    tab.logx, tab.logv, tab.slope)
    if not np.isfinite(v):
        raise SingularVolatilityError(
            f"Frey-Stremme denominator non-positive at p={p}, S={S}")
    return v


def parabolicity_margin(spec, params, p, S, tau):
    """sigma^2 + p d(sigma^2)/dp; non-positive values mean loss of parabolicity."""
    s2 = sigma_squared(spec, params, p, S, tau)
    s2hat = params.sigma ** 2
    if isinstance(spec, Constant) or isinstance(spec, Avellaneda):
        return s2
    if isinstance(spec, Leland):
        if p == 0:
            return s2hat * (1.0 + spec.Le)  # right limit
        return s2
    if isinstance(spec, RAPM):
        return s2hat * (1.0 + (4.0 / 3.0) * spec.mu * np.cbrt(p / S))
    if isinstance(spec, FreyStremme):
        den = 1.0 - spec.rho_fb * spec.lam * p / S
        return s2 + p * 2.0 * s2hat * spec.rho_fb * spec.lam / S / den ** 3
    # Barles-Soner: centered difference, one-sided at p = 0
    dp = max(1e-6, 1e-6 * abs(p))
    if p - dp < 0:
        d = (sigma_squared(spec, params, p + dp, S, tau) - s2) / dp
    else:
        d = (sigma_squared(spec, params, p + dp, S, tau)
             - sigma_squared(spec, params, p - dp, S, tau)) / (2 * dp)
    return s2 + p * d


def signed_power(u, pexp):
    if pexp <= 0:
        raise DomainError("exponent must be positive")
    u = np.asarray(u, dtype=float)
    out = np.sign(u) * np.abs(u) ** pexp
    return float(out) if out.ndim == 0 else out


def make_spec(model, **kw):
    """Build a volatility spec from a CLI-style model name."""
    model = model.lower()
    if model == "constant":
        return Constant()
    if model == "leland":
        return Leland(kw.get("Le", 0.0))
    if model == "avellaneda":
        return Avellaneda(kw["sigma1"], kw["sigma2"])
    if model == "rapm":
        if kw.get("mu") is not None:
            return RAPM(kw["mu"])
        return RAPM.from_costs(kw.get("C", 0.0), kw.get("R", 0.0))
    if model in ("barles-soner", "barles_soner", "bs"):
        return BarlesSoner(kw.get("a", 0.0))
    if model in ("frey-stremme", "frey"):
        return FreyStremme(kw.get("rho_fb", 0.0), kw.get("lam", 1.0))
    raise DomainError(f"unknown volatility model {model!r}")
