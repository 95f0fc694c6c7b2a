"""Front-fixing operator-splitting solver for the American call.

With ``x = ln(rho(tau)/S)`` and ``Pi = V - S V_S`` the problem lives on the
fixed interval [0, L].  Each time level is a transport sub-step along
characteristics followed by an implicit diffusion sub-step (tridiagonal),
and the boundary position solves the algebraic constraint

    rho = rE/q + sigma^2 (Pi_1 - Pi_0)/(2 q h).

Per level the coupled (Pi, rho) system is resolved by micro-iterations in
which sigma_i is lagged on the previous micro-iterate.  Inside a
micro-iterate the scalar constraint is solved with a secant iteration on
rho (transport and the frozen tridiagonal solve are cheap to repeat).  The
``coupling="picard"`` option instead substitutes rho once per
micro-iterate; it converges only while the linearised gain stays below
one, which fails on fine meshes.
"""

from __future__ import annotations

import math
import os
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .core import (Constant, ConvergenceError, DomainError, ExerciseRegionError,
                   FboundError, SingularVolatilityError, kernel_args, psi_table,
                   sig2_kernel)

SECANT, PICARD = 0, 1


@dataclass(frozen=True)
class SolverConfig:
    n: int = 750
    m: int = 225000
    L: float = 3.0
    micro_tol: float = 1e-7
    micro_max: int = 50
    coupling: str = "secant"
    snapshots: int = 10  # stored Pi levels besides the last one

    @classmethod
    def fast(cls, **kw):
        kw.setdefault("n", 200)
        kw.setdefault("m", 20000)
        return cls(**kw)

    def validate(self, params):
        if self.n < 2 or self.m < 2:
            raise DomainError("n and m must be at least 2")
        if self.micro_tol <= 0:
            raise DomainError("micro_tol must be positive")
        if self.L <= math.log(params.r / params.q):
            raise DomainError(f"L={self.L} must exceed ln(r/q)")
        if self.coupling not in ("secant", "picard"):
            raise DomainError(f"unknown coupling {self.coupling!r}")


@dataclass
class PortfolioSurface:
    x: np.ndarray
    tau: np.ndarray
    rho: np.ndarray
    levels: np.ndarray          # indices j of stored Pi levels
    Pi: np.ndarray              # shape (len(levels), n+1)
    micro_iters: np.ndarray     # per level, level 0 excluded
    secant_evals: np.ndarray
    pi_min: float
    pi_max: float
    offending_rows: int
    wall_time: float = 0.0
    params: object = None
    spec: object = None
    cfg: object = None

    @property
    def h(self):
        return self.x[1] - self.x[0]

    @property
    def k(self):
        return self.tau[1] - self.tau[0]

    def level(self, tau):
        j = int(np.argmin(np.abs(self.tau[self.levels] - tau)))
        if abs(self.tau[self.levels[j]] - tau) > 0.5 * self.k + 1e-14:
            avail = ", ".join(f"{t:.6g}" for t in self.tau[self.levels])
            raise DomainError(f"no stored level at tau={tau}; stored: {avail}")
        return self.levels[j], self.Pi[j]

    def boundary(self):
        from .integral_eq import BoundaryCurve
        return BoundaryCurve(self.tau, self.rho)

    def summary(self):
        its = self.micro_iters
        return {
            "params": asdict(self.params) if self.params is not None else None,
            "spec": {"model": self.spec.name, **asdict(self.spec)} if self.spec is not None else None,
            "cfg": asdict(self.cfg) if self.cfg is not None else None,
            "rho_T": float(self.rho[-1]),
            "micro_iter_stats": {"mean": float(its.mean()), "max": int(its.max()),
                                 "secant_mean": float(self.secant_evals.mean())},
            "pi_range": [self.pi_min, self.pi_max],
            "wall_time": self.wall_time,
        }

    def surface_csv(self, path):
        with open(path, "w", newline="\n") as f:
            f.write("x,tau,pi\n")
            for j, row in zip(self.levels, self.Pi):
                t = self.tau[j]
                for xi, v in zip(self.x, row):
                    f.write(f"{xi:.12g},{t:.12g},{v:.12g}\n")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def transport(Pi, x, shift, E, L, h, out):
    """Pi^{j-1/2}_i = Pi^{j-1}(x_i - shift), -E left of 0, 0 right of L."""
    n = x.shape[0] - 1
    for i in range(n + 1):
        z = x[i] - shift
        if z <= 0.0:
            out[i] = -E
        elif z >= L:
            out[i] = 0.0
        else:
            t = z / h
            ii = int(t)
            if ii >= n:
                ii = n - 1
            w = t - ii
            out[i] = (1.0 - w) * Pi[ii] + w * Pi[ii + 1]


@njit(cache=True)
def tridiag_factor(a, b, c, n, bp, l):
    bp[1] = b[1]
    for i in range(2, n):
        l[i] = a[i] / bp[i - 1]
        bp[i] = b[i] - l[i] * c[i - 1]


@njit(cache=True)
def tridiag_solve(bp, l, a, c, rhs, left, right, n, d, out):
    """Interior solve with Dirichlet values left/right at nodes 0 and n."""
    for i in range(1, n):
        d[i] = rhs[i]
    d[1] -= a[1] * left
    d[n - 1] -= c[n - 1] * right
    for i in range(2, n):
        d[i] -= l[i] * d[i - 1]
    out[0] = left
    out[n] = right
    out[n - 1] = d[n - 1] / bp[n - 1]
    for i in range(n - 2, 0, -1):
        out[i] = (d[i] - c[i] * out[i + 1]) / bp[i]


@njit(cache=True)
def assemble(s2, k, h, r, n, a, b, c):
    bad = 0
    for i in range(1, n):
        al = -k / (2 * h * h) * s2[i - 1] + k / (4 * h) * s2[i]
        ga = -k / (2 * h * h) * s2[i] - k / (4 * h) * s2[i]
        a[i] = al
        c[i] = ga
        b[i] = 1.0 + r * k - (al + ga)
        if al > 0.0 or ga > 0.0:
            bad += 1
    return bad


@njit(cache=True)
def march_kernel(E, r, q, T, L, n, m, code, s2hat, c1, c2,
                 logx, logv, slope, tol, maxit, coupling, save, Pi_out):
    h = L / n
    k = T / m
    x = np.arange(n + 1) * h
    r0 = r * E / q
    xj = math.log(r / q)
    Pi = np.empty(n + 1)
    for i in range(n + 1):
        Pi[i] = -E if x[i] < xj else 0.0
    rho = np.empty(m + 1)
    rho[0] = r0
    its = np.zeros(m, np.int64)
    sec = np.zeros(m, np.int64)
    Pp = Pi.copy()
    half = np.empty(n + 1)
    new = np.empty(n + 1)
    s2 = np.empty(n)
    a = np.zeros(n + 1)
    b = np.zeros(n + 1)
    c = np.zeros(n + 1)
    bp = np.zeros(n + 1)
    lf = np.zeros(n + 1)
    d = np.zeros(n + 1)
    pmin = 0.0
    pmax = -E
    bad = 0
    isave = 0
    if save[0] == 0:
        Pi_out[0, :] = Pi
        isave = 1
    for i in range(n + 1):
        pmin = min(pmin, Pi[i])
        pmax = max(pmax, Pi[i])
    status = 0
    fail = -1
    for j in range(1, m + 1):
        tau = j * k
        for i in range(n + 1):
            Pp[i] = Pi[i]
        rp = rho[j - 1]
        conv = False
        it = 0
        for it in range(maxit):
            for i in range(n):
                p = (Pp[i + 1] - Pp[i]) / h
                if p < 0.0:
                    p = 0.0
                v = sig2_kernel(code, s2hat, c1, c2, r, p, rp * math.exp(-x[i]), tau,
                                logx, logv, slope)
                if not np.isfinite(v):
                    return rho, its, sec, 2, j, pmin, pmax, bad
                s2[i] = v
            bad += assemble(s2, k, h, r, n, a, b, c)
            tridiag_factor(a, b, c, n, bp, lf)
            if coupling == 1:
                sl = (Pp[1] + E) / h
                rb = r0 + sig2_kernel(code, s2hat, c1, c2, r, sl, rp, tau,
                                      logx, logv, slope) * sl / (2 * q)
                transport(Pi, x, math.log(rb / rho[j - 1]) + (r - q) * k, E, L, h, half)
                tridiag_solve(bp, lf, a, c, half, -E, 0.0, n, d, new)
                sec[j - 1] += 1
            else:
                # secant on G(rho) = rE/q + sigma^2 slope(rho)/(2q) - rho
                ra = rp
                transport(Pi, x, math.log(ra / rho[j - 1]) + (r - q) * k, E, L, h, half)
                tridiag_solve(bp, lf, a, c, half, -E, 0.0, n, d, new)
                sl = (new[1] + E) / h
                ga = r0 + sig2_kernel(code, s2hat, c1, c2, r, sl, rp, tau,
                                      logx, logv, slope) * sl / (2 * q) - ra
                rb = ra + ga
                ns = 1
                for _ in range(60):
                    if rb <= 0.0:
                        rb = 0.5 * ra
                    transport(Pi, x, math.log(rb / rho[j - 1]) + (r - q) * k, E, L, h, half)
                    tridiag_solve(bp, lf, a, c, half, -E, 0.0, n, d, new)
                    sl = (new[1] + E) / h
                    gb = r0 + sig2_kernel(code, s2hat, c1, c2, r, sl, rp, tau,
                                          logx, logv, slope) * sl / (2 * q) - rb
                    ns += 1
                    if abs(gb) < 1e-13 * rb or gb == ga:
                        break
                    rc = rb - gb * (rb - ra) / (gb - ga)
                    ra = rb
                    ga = gb
                    rb = rc
                sec[j - 1] += ns
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
        its[j - 1] = it + 1
        for i in range(n + 1):
            Pi[i] = Pp[i]
            if Pi[i] < pmin:
                pmin = Pi[i]
            if Pi[i] > pmax:
                pmax = Pi[i]
        rho[j] = rp
        if isave < save.shape[0] and save[isave] == j:
            Pi_out[isave, :] = Pi
            isave += 1
        if not conv:
            status = 1
            fail = j
            return rho, its, sec, status, fail, pmin, pmax, bad
    return rho, its, sec, status, fail, pmin, pmax, bad


def _save_levels(m, count):
    lv = np.unique(np.round(np.linspace(0, m, count + 1)).astype(np.int64))
    if lv[-1] != m:
        lv = np.append(lv, m)
    return lv


def initial_portfolio(params, cfg):
    params.require_call_regime()
    x = np.arange(cfg.n + 1) * (cfg.L / cfg.n)
    return np.where(x < math.log(params.r / params.q), -params.E, 0.0), params.rho0


def solve_free_boundary(params, spec=Constant(), cfg=SolverConfig()):
    params.require_call_regime()
    cfg.validate(params)
    tab = psi_table()
    code, s2hat, c1, c2, r = kernel_args(spec, params)
    save = _save_levels(cfg.m, cfg.snapshots)
    Pi_out = np.zeros((len(save), cfg.n + 1))
    t0 = time.perf_counter()
    rho, its, sec, status, fail, pmin, pmax, bad = march_kernel(
        params.E, params.r, params.q, params.T, cfg.L, cfg.n, cfg.m,
        code, s2hat, c1, c2, tab.logx, tab.logv, tab.slope,
        cfg.micro_tol, cfg.micro_max, PICARD if cfg.coupling == "picard" else SECANT,
        save, Pi_out)
    wall = time.perf_counter() - t0
    k = params.T / cfg.m
    if status == 2:
        raise SingularVolatilityError(
            f"pde_solver: volatility singular at level j={fail}, tau={fail * k:.6g}")
    if status == 1:
        raise ConvergenceError(
            f"pde_solver: micro-iteration did not converge at level j={fail}, "
            f"tau={fail * k:.6g} (rho={rho[fail]:.6g})", where=fail * k)
    if bad:
        warnings.warn(f"{bad} tridiagonal rows with positive off-diagonal entries "
                      "(mesh too coarse for an M-matrix)", RuntimeWarning)
    x = np.arange(cfg.n + 1) * (cfg.L / cfg.n)
    tau = np.arange(cfg.m + 1) * k
    return PortfolioSurface(x, tau, rho, save, Pi_out, its, sec, float(pmin), float(pmax),
                            int(bad), wall, params, spec, cfg)


# step-level operations, exposed for testing and experimentation

def transport_step(Pi_prev, rho_prev, rho_new, params, k, L):
    n = len(Pi_prev) - 1
    h = L / n
    x = np.arange(n + 1) * h
    out = np.empty(n + 1)
    shift = math.log(rho_new / rho_prev) + (params.r - params.q) * k
    transport(np.asarray(Pi_prev, float), x, shift, params.E, L, h, out)
    return out


def _sig2_nodes(Pi, rho, params, spec, tau, h):
    tab = psi_table()
    code, s2hat, c1, c2, r = kernel_args(spec, params)
    n = len(Pi) - 1
    out = np.empty(n)
    for i in range(n):
        p = max((Pi[i + 1] - Pi[i]) / h, 0.0)
        v = sig2_kernel(code, s2hat, c1, c2, r, p, rho * math.exp(-i * h), tau,
                        tab.logx, tab.logv, tab.slope)
        if not np.isfinite(v):
            raise SingularVolatilityError(f"singular volatility at node {i}")
        out[i] = v
    return out


def tridiagonal_system(Pi_lag, rho, params, spec, k, L, tau):
    """Coefficient arrays (alpha, beta, gamma) for interior rows 1..n-1."""
    n = len(Pi_lag) - 1
    h = L / n
    s2 = _sig2_nodes(np.asarray(Pi_lag, float), rho, params, spec, tau, h)
    a, b, c = np.zeros(n + 1), np.zeros(n + 1), np.zeros(n + 1)
    assemble(s2, k, h, params.r, n, a, b, c)
    return a, b, c


def diffusion_step(half, rho_new, params, spec, k, L, tau, Pi_lag=None):
    half = np.asarray(half, float)
    n = len(half) - 1
    a, b, c = tridiagonal_system(half if Pi_lag is None else Pi_lag, rho_new,
                                 params, spec, k, L, tau)
    if np.any(a[1:n] > 0) or np.any(c[1:n] > 0):
        worst = int(np.argmax(np.maximum(a, c)))
        warnings.warn(f"loss of diagonal dominance, worst row {worst}", RuntimeWarning)
    bp, lf, d, out = np.zeros(n + 1), np.zeros(n + 1), np.zeros(n + 1), np.zeros(n + 1)
    tridiag_factor(a, b, c, n, bp, lf)
    if not np.all(np.isfinite(bp[1:n])) or np.any(bp[1:n] == 0):
        raise FboundError("singular tridiagonal system")
    tridiag_solve(bp, lf, a, c, half, -params.E, 0.0, n, d, out)
    return out


def boundary_constraint(Pi, params, spec, tau, h, rho_lag=None):
    sl = (Pi[1] - Pi[0]) / h
    S = params.rho0 if rho_lag is None else rho_lag
    tab = psi_table()
    s2 = sig2_kernel(*kernel_args(spec, params), sl, S, tau, tab.logx, tab.logv, tab.slope)
    return params.rho0 + s2 * sl / (2 * params.q)


def advance_time_level(Pi_prev, rho_prev, params, spec, cfg, j):
    """One time level of the coupled (Pi, rho) system.

    Mirrors the compiled march: sigma lagged on the previous micro-iterate,
    the constraint solved by secant on rho inside each micro-iterate.
    Returns (Pi_j, rho_j, micro-iterations, residual history).
    """
    Pi_prev = np.asarray(Pi_prev, float)
    n = len(Pi_prev) - 1
    h = cfg.L / n
    k = params.T / cfg.m
    tau = j * k
    E, q = params.E, params.q
    tab = psi_table()
    args = kernel_args(spec, params)
    x = np.arange(n + 1) * h
    bufs = [np.zeros(n + 1) for _ in range(7)]
    half, new, a, b, c, bp, lf = bufs
    d = np.zeros(n + 1)

    def G(rb):
        transport(Pi_prev, x, math.log(rb / rho_prev) + (params.r - q) * k, E, cfg.L, h, half)
        tridiag_solve(bp, lf, a, c, half, -E, 0.0, n, d, new)
        sl = (new[1] + E) / h
        return params.rho0 + sig2_kernel(*args, sl, rp, tau, tab.logx, tab.logv,
                                         tab.slope) * sl / (2 * q) - rb

    Pp, rp = Pi_prev.copy(), rho_prev
    hist = []
    for it in range(cfg.micro_max):
        s2 = _sig2_nodes(Pp, rp, params, spec, tau, h)
        assemble(s2, k, h, params.r, n, a, b, c)
        tridiag_factor(a, b, c, n, bp, lf)
        ra = rp
        ga = G(ra)
        rb = ra + ga
        for _ in range(60):
            gb = G(rb)
            if abs(gb) < 1e-13 * rb or gb == ga:
                break
            ra, ga, rb = rb, gb, rb - gb * (rb - ra) / (gb - ga)
        err = max(abs(rb - rp), float(np.max(np.abs(new - Pp))))
        hist.append(err)
        Pp, rp = new.copy(), rb
        if err < cfg.micro_tol:
            return Pp, rp, it + 1, hist
    raise ConvergenceError(f"pde_solver: level j={j}, tau={tau:.6g} did not converge",
                           residual=hist, where=tau)


def recover_price(surface, S, tau):
    """V = (S/rho)(rho - E + int_0^{ln(rho/S)} e^x Pi dx) at a stored level."""
    j, Pi = surface.level(tau)
    R = surface.rho[j]
    E = surface.params.E
    if S <= 0:
        raise DomainError("S must be positive")
    if S > R:
        raise ExerciseRegionError(f"S={S} above boundary {R:.6g}", S - E)
    b = math.log(R / S)
    x = surface.x
    if b > x[-1]:
        raise DomainError(f"ln(rho/S)={b:.4g} exceeds domain length {x[-1]}")
    kk = np.searchsorted(x, b, side="right")
    xs = np.append(x[:kk], b)
    ps = np.append(Pi[:kk], np.interp(b, x, Pi))
    return S / R * (R - E + np.trapezoid(np.exp(xs) * ps, xs))


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

def eoc(errors):
    """Consecutive-pair orders ln(e_i/e_{i-1}) / ln(h_i/h_{i-1})."""
    if len(errors) < 2:
        raise DomainError("need at least two (h, err) pairs")
    hs = [h for h, _ in errors]
    if len(set(hs)) != len(hs):
        raise DomainError("mesh sizes must be distinct")
    out = []
    for (h0, e0), (h1, e1) in zip(errors[:-1], errors[1:]):
        if e0 <= 0 or e1 <= 0:
            raise DomainError("zero error entry makes the order undefined")
        out.append(math.log(e1 / e0) / math.log(h1 / h0))
    return out


def boundary_errors(surface, ref, h=None):
    """L-inf, mesh-weighted l2 and continuous L2 distance to a reference curve.

    Errors are sampled at the reference times (tau = 0 excluded, where both
    curves equal rE/q).  The mesh-weighted norm is sqrt(h sum e_i^2) with h
    the spatial step of the PDE mesh; the continuous one integrates e^2 over
    tau with the trapezoid rule.
    """
    h = surface.h if h is None else h
    t = ref.tau[1:]
    e = np.interp(t, surface.tau, surface.rho) - ref.rho[1:]
    linf = float(np.max(np.abs(e)))
    l2_mesh = float(np.sqrt(h * np.sum(e * e)))
    l2_cont = float(np.sqrt(np.trapezoid(np.append(0.0, e) ** 2, ref.tau)))
    return linf, l2_mesh, l2_cont


def cfl_steps(params, h, cfl=0.5):
    k = cfl * h * h / params.sigma ** 2
    return max(2, int(round(params.T / k)))


def eoc_study(params, hs, ref, L=3.0, cfl=0.5, l2="mesh", micro_tol=1e-7):
    """Boundary errors and orders over a list of mesh sizes."""
    rows = []
    for h in hs:
        n = int(round(L / h))
        cfg = SolverConfig(n=n, m=cfl_steps(params, L / n, cfl), L=L, micro_tol=micro_tol,
                           snapshots=1)
        surf = solve_free_boundary(params, Constant(), cfg)
        linf, l2m, l2c = boundary_errors(surf, ref)
        rows.append({"h": h, "n": n, "m": cfg.m, "err_linf": linf,
                     "err_l2": l2m if l2 == "mesh" else l2c,
                     "err_l2_mesh": l2m, "err_l2_cont": l2c,
                     "rho_T": float(surf.rho[-1]), "wall_time": surf.wall_time})
    el = eoc([(r_["h"], r_["err_linf"]) for r_ in rows])
    e2 = eoc([(r_["h"], r_["err_l2"]) for r_ in rows])
    for i, r_ in enumerate(rows):
        r_["eoc_linf"] = el[i - 1] if i else float("nan")
        r_["eoc_l2"] = e2[i - 1] if i else float("nan")
    return rows


def deviation_norms(rho_a, rho_b, tau):
    d = np.abs(np.asarray(rho_a) - np.asarray(rho_b))
    return float(d.max()), float(np.sqrt(np.trapezoid(d * d, tau)))


def scaling_exponent(values, norms):
    """Least-squares slope of ln(norm) against ln(parameter)."""
    return float(np.polyfit(np.log(values), np.log(norms), 1)[0])


def thread_count(default=None):
    env = os.environ.get("FBOUND_THREADS")
    if env:
        try:
            v = int(env)
            if v > 0:
                return v
        except ValueError:
            pass
    return default or os.cpu_count() or 1
