"""Acceptance criteria, one reported line per criterion.

The full-mesh runs (n=750, m=225000) are shared between criteria 2, 5, 6
and 10 through a module-level cache.  They take roughly half an hour in
total on one core; select ``-m "not slow"`` to skip them.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from fbound.asian import AsianConfig, AsianParams, asian_solve
from fbound.core import (RAPM, BarlesSoner, Constant, MarketParams, parabolicity_margin, psi)
from fbound.gamma_eq import (GammaConfig, RapmParams, bid_ask, calibrate_rapm,
                             gamma_closed_form, solve_gamma_equation)
from fbound.integral_eq import (BoundaryFunctionH, IntegralConfig, lam,
                                price_call_semi_explicit, put_boundary_asymptotic,
                                solve_boundary)
from fbound.oracles import LatticeConfig, baw_price, binomial_critical_price, binomial_price
from fbound.pde_solver import (SolverConfig, boundary_errors, deviation_norms, eoc_study,
                               scaling_exponent, solve_free_boundary)

BENCH = MarketParams(r=0.1, q=0.05, E=10.0, T=1.0, sigma=0.2)
FULL = SolverConfig(n=750, m=225000, snapshots=2)
R_GRID = [1, 2, 5, 10, 15, 20, 30, 40, 50, 60, 70, 80, 90, 100]
A_GRID = [0.01, 0.02, 0.05, 0.07, 0.1, 0.11, 0.13, 0.15, 0.2, 0.25, 0.3, 0.35]

_results = {}
_runs = {}


def record(cid, title, ok, detail):
    """Collect a sub-check; the summary prints one line per criterion."""
    entry = _results.setdefault(cid, {"title": title, "checks": []})
    entry["checks"].append((bool(ok), detail))
    status = "PASS" if all(c[0] for c in entry["checks"]) else "FAIL"
    line = f"[{status}] {cid} {title}: " + "; ".join(
        ("" if c[0] else "FAILED ") + c[1] for c in entry["checks"])
    for i, old in enumerate(ACCEPTANCE):
        if old.split(" ", 2)[1] == cid:
            ACCEPTANCE[i] = line
            break
    else:
        ACCEPTANCE.append(line)
    print(line)
    return ok


def full_run(spec):
    key = (spec.name, spec.args())
    if key not in _runs:
        t0 = time.perf_counter()
        s = solve_free_boundary(BENCH, spec, FULL)
        s.total_time = time.perf_counter() - t0
        _runs[key] = s
    return _runs[key]


@pytest.fixture(scope="module")
def ie():
    t0 = time.perf_counter()
    H, curve = solve_boundary(BENCH, IntegralConfig(n=100))
    return H, curve, time.perf_counter() - t0


# ---------------------------------------------------------------------------

def test_c01_linear_benchmark(ie):
    H, curve, dt = ie
    rt = curve.rho[-1]
    ok = [record("C1", "integral-equation boundary", abs(rt / 22.375 - 1) <= 5e-3,
                 f"rho(T)={rt:.4f} (22.375 +-0.5%)"),
          record("C1", "integral-equation boundary", H.iterations <= 10,
                 f"{H.iterations} iterations (<=10)"),
          record("C1", "integral-equation boundary", dt < 10, f"{dt:.2f} s (<10 s)")]
    assert all(ok)


@pytest.mark.slow
def test_c02_pde_integral_agreement(ie):
    _, curve, _ = ie
    s = full_run(Constant())
    rt = s.rho[-1]
    dev = abs(rt - curve.rho[-1]) / curve.rho[-1]
    fast = solve_free_boundary(BENCH, Constant(), SolverConfig.fast())
    dfast = abs(fast.rho[-1] - curve.rho[-1]) / curve.rho[-1]
    ok = [record("C2", "PDE vs integral equation", abs(rt - 22.321) <= 0.05,
                 f"rho(T)={rt:.4f} (22.321 +-0.05)"),
          record("C2", "PDE vs integral equation", dev < 2.5e-3,
                 f"relative deviation {100 * dev:.3f}% (<0.25%)"),
          record("C2", "PDE vs integral equation", s.total_time <= 900,
                 f"{s.total_time:.0f} s (<=900 s)"),
          record("C2", "PDE vs integral equation", dfast < 1e-2,
                 f"CI profile rho(T)={fast.rho[-1]:.4f}, deviation {100 * dfast:.2f}% (<1%)")]
    assert all(ok)


def test_c03_table_prices(ie):
    _, curve, _ = ie
    semi_t = {18: 8.09, 20: 10.03, 21: 11.01, 22.3754: 12.37}
    baw_t = {15: 5.23, 18: 8.10, 20: 10.04, 21: 11.02, 22.3754: 12.38}
    ok = True
    for S, tgt in semi_t.items():
        v = price_call_semi_explicit(S, 1.0, curve, BENCH)
        ok &= record("C3", "benchmark prices", abs(v - tgt) <= 0.02,
                     f"semi S={S}: {v:.4f} vs {tgt}")
    for S in baw_t:
        v = price_call_semi_explicit(S, 1.0, curve, BENCH)
        b = binomial_price(S, BENCH, LatticeConfig(2000))[0]
        ok &= record("C3", "benchmark prices", abs(v - b) <= 0.02,
                     f"semi-binomial(2000) S={S}: {v - b:+.4f}")
    for S, tgt in baw_t.items():
        v = baw_price(S, BENCH)
        ok &= record("C3", "benchmark prices", abs(v - tgt) <= 0.02,
                     f"BAW S={S}: {v:.4f} vs {tgt}")
    assert ok


@pytest.mark.xfail(strict=True, reason="reference 5.15 lies below the European value 5.2289; "
                   "semi-explicit, binomial and early-exercise-premium all give 5.2311")
def test_c03_table_price_s15(ie):
    _, curve, _ = ie
    v = price_call_semi_explicit(15.0, 1.0, curve, BENCH)
    ok = record("C3", "benchmark prices", abs(v - 5.15) <= 0.02,
                f"semi S=15: {v:.4f} vs 5.15")
    assert ok


def test_c04_eoc(ie):
    _, curve, _ = ie
    t0 = time.perf_counter()
    hs = [0.03, 0.012, 0.006, 0.004, 0.003, 0.0024, 0.002]
    rows = eoc_study(BENCH, hs, curve)
    dt = time.perf_counter() - t0
    el = np.array([r["eoc_linf"] for r in rows[1:]])
    e2 = np.array([r["eoc_l2"] for r in rows[1:]])
    for r in rows:
        print(f"  h={r['h']:<7} err_linf={r['err_linf']:.4g} eoc_linf={r['eoc_linf']:.3f} "
              f"err_l2={r['err_l2']:.4g} eoc_l2={r['eoc_l2']:.3f}")
    ok = [record("C4", "EOC study", np.all((el >= 0.90) & (el <= 1.02)),
                 "eoc(Linf) " + ",".join(f"{v:.3f}" for v in el) + " in [0.90,1.02]"),
          record("C4", "EOC study", np.all((e2 >= 1.35) & (e2 <= 1.52)),
                 "eoc(L2) " + ",".join(f"{v:.3f}" for v in e2) + " in [1.35,1.52]"),
          record("C4", "EOC study", dt <= 1800, f"{dt:.0f} s (<=1800 s)")]
    assert all(ok)


@pytest.mark.slow
def test_c05_rapm_scaling():
    base = full_run(Constant())
    norms = []
    for R in R_GRID:
        s = full_run(RAPM.from_costs(0.01, R))
        linf, l2 = deviation_norms(s.rho, base.rho, s.tau)
        norms.append(linf)
        print(f"  R={R:<4} linf={linf:.4f} l2={l2:.4f}")
    slope = scaling_exponent(R_GRID, norms)
    ok = [record("C5", "RAPM scaling", abs(norms[0] / 0.0601 - 1) <= 0.1,
                 f"R=1: {norms[0]:.4f} (0.0601 +-10%)"),
          record("C5", "RAPM scaling", abs(norms[-1] / 0.268 - 1) <= 0.1,
                 f"R=100: {norms[-1]:.4f} (0.268 +-10%)"),
          record("C5", "RAPM scaling", abs(slope - 0.32) <= 0.04,
                 f"exponent {slope:.3f} (0.32 +-0.04)")]
    assert all(ok)


@pytest.mark.slow
def test_c06_barles_soner_scaling():
    base = full_run(Constant())
    norms = []
    for a in A_GRID:
        s = full_run(BarlesSoner(a))
        linf, l2 = deviation_norms(s.rho, base.rho, s.tau)
        norms.append(linf)
        print(f"  a={a:<5} linf={linf:.4f} l2={l2:.4f}")
    small = [i for i, a in enumerate(A_GRID) if a <= 0.1]
    slope = scaling_exponent([A_GRID[i] for i in small], [norms[i] for i in small])
    ok = [record("C6", "Barles-Soner scaling", abs(norms[0] / 0.156 - 1) <= 0.1,
                 f"a=0.01: {norms[0]:.4f} (0.156 +-10%)"),
          record("C6", "Barles-Soner scaling", abs(norms[-1] / 3.07 - 1) <= 0.1,
                 f"a=0.35: {norms[-1]:.4f} (3.07 +-10%)"),
          record("C6", "Barles-Soner scaling", abs(slope - 0.68) <= 0.08,
                 f"small-a exponent {slope:.3f} (0.68 +-0.08)")]
    assert all(ok)


def test_c07_long_time():
    p = MarketParams(r=0.1, q=0.05, E=10.0, T=50.0, sigma=0.35)
    t0 = time.perf_counter()
    s = solve_free_boundary(p, Constant(), SolverConfig(n=200, m=100000, snapshots=1))
    dt = time.perf_counter() - t0
    rel = s.rho[-1] / 36.8179 - 1
    ok = [record("C7", "long-time boundary", abs(rel) <= 0.02,
                 f"rho(T)={s.rho[-1]:.4f}, {100 * rel:+.2f}% of 36.8179 (+-2%)"),
          record("C7", "long-time boundary", dt <= 1200, f"{dt:.0f} s (<=1200 s)")]
    assert all(ok)


def test_c08_put_asymptotics():
    p = MarketParams(r=0.1, q=0.0, E=10.0, T=0.001, sigma=0.25)
    ra = put_boundary_asymptotic(0.001, p)
    rb = binomial_critical_price(p, 0.001, steps=5000, payoff="put")
    gap = abs(ra - rb)
    ok = record("C8", "put asymptotics", gap <= 0.005,
                f"asymptotic {ra:.5f}, binomial(5000) {rb:.5f}, gap {gap:.5f} (<=0.005)")
    assert ok


def test_c09_asian():
    p = AsianParams(r=0.06, q=0.04, sigma=0.2, T=50.0)
    s = asian_solve(p, AsianConfig(n=100, m=100000))
    _asian_cache["run"] = s
    ok = [record("C9", "Asian boundary", s.rho[0] == 4 / 3, f"rho(0)={float(s.rho[0])!r} (4/3)"),
          record("C9", "Asian boundary", s.rho.min() >= 1, f"min rho={s.rho.min():.6f} (>=1)"),
          record("C9", "Asian boundary", abs(s.rho[-1] - 1) <= 0.02,
                 f"final rho={s.rho[-1]:.6f} (1 +-2%)")]
    trend = asian_solve(p, AsianConfig(n=100, m=10000)).rho[-1]
    ok.append(record("C9", "Asian boundary", abs(s.rho[-1] - 1) < abs(trend - 1),
                     f"mesh trend |rho-1|: m=1e4 {abs(trend - 1):.2e} > m=1e5 "
                     f"{abs(s.rho[-1] - 1):.2e}"))
    assert all(ok)


_asian_cache = {}

# ---------------------------------------------------------------------------
# criterion 10: property suites
# ---------------------------------------------------------------------------

TITLE10 = "property suites"


def test_c10_maximum_principle():
    runs = list(_runs.values()) or [solve_free_boundary(BENCH, Constant(), SolverConfig.fast())]
    ok = True
    for s in runs:
        ok &= s.pi_min >= -BENCH.E - 1e-12 and s.pi_max <= 1e-12
    ok = record("C10", TITLE10, ok, f"-E<=Pi<=0 on {len(runs)} vanilla runs")
    a = _asian_cache.get("run") or asian_solve(AsianParams(0.06, 0.04, 0.2, 50.0), AsianConfig())
    ok2 = record("C10", TITLE10, a.pi_min >= -1 - 1e-12 and a.pi_max <= 1e-12,
                 f"Asian Pi in [{a.pi_min:.3g},{a.pi_max:.3g}]")
    assert ok and ok2


def test_c10_boundary_monotone():
    runs = list(_runs.values()) or [solve_free_boundary(BENCH, Constant(), SolverConfig.fast())]
    ok = all(np.all(s.rho >= BENCH.rho0) and np.all(np.diff(s.rho) >= 0) for s in runs)
    assert record("C10", TITLE10, ok, f"rho>=rE/q and nondecreasing on {len(runs)} runs")


def test_c10_integral_iterates_monotone():
    n = 100
    xi = np.linspace(0, 1, n + 1)
    H = BoundaryFunctionH(xi, np.zeros(n + 1), lam(BENCH))
    cfg = IntegralConfig(n=n, max_iters=1, tol=1e30)
    worst = np.inf
    for _ in range(3):
        Hn, _ = solve_boundary(BENCH, cfg, H)
        worst = min(worst, float(np.min(Hn.H - H.H)))
        H = Hn
    assert record("C10", TITLE10, worst >= -1e-9,
                  f"integral-eq sweeps from H=0 nondecreasing (min step {worst:.1e})")


def test_c10_gamma():
    p = MarketParams(r=0.011, q=0.0, E=25.0, T=1.0, sigma=0.3)
    drift = 0.0
    for mu in (0.0, 0.2):
        g = solve_gamma_equation(p, mu, GammaConfig(n=400))
        drift = max(drift, float(np.max(np.abs(g.mass - g.mass[0]))))
        if mu == 0.0:
            err = float(np.max(np.abs(g.H[-1] - gamma_closed_form(p, g.tau_star, g.x, p.T))))
    ok = [record("C10", TITLE10, drift < 1e-3, f"Gamma mass drift {drift:.1e}"),
          record("C10", TITLE10, err < 1e-3, f"Gamma mu=0 closed-form error {err:.1e}")]
    assert all(ok)


def test_c10_psi():
    xs = np.logspace(-8, -2, 40)
    ratio = psi(xs) / np.cbrt(xs)
    grid = np.concatenate([[0.0], np.logspace(-12, 8, 500)])
    ok = (psi(0.0) == 0 and np.all(np.diff(psi(grid)) >= 0)
          and np.all((ratio >= 1.0) & (ratio <= 1.6)))
    assert record("C10", TITLE10, ok,
                  f"Psi(0)=0, monotone, x^(1/3) ratio in [{ratio.min():.3f},{ratio.max():.3f}]")


def test_c10_calibration():
    p = MarketParams(r=0.011, q=0.0, E=25.0, T=1.0, sigma=0.3)
    _, mid, ask = bid_ask(p, RapmParams(0.01, 5.0), 25.0)
    sg, R, _ = calibrate_rapm(mid, ask, 0.01, p, 25.0)
    ok = abs(sg / 0.3 - 1) < 1e-3 and abs(R / 5 - 1) < 1e-3
    assert record("C10", TITLE10, ok, f"calibration round trip sigma={sg:.6f}, R={R:.5f}")


def test_c10_parabolicity():
    ps = np.concatenate([[0.0], np.logspace(-6, 3, 40)])
    worst = min(parabolicity_margin(spec, BENCH, p, S, 0.5)
                for spec in (RAPM(0.2), RAPM.from_costs(0.01, 100), BarlesSoner(0.1),
                             BarlesSoner(0.35))
                for p in ps for S in (5.0, 20.0, 40.0))
    assert record("C10", TITLE10, worst >= BENCH.sigma ** 2 - 1e-15,
                  f"min parabolicity margin {worst:.5f} (>= {BENCH.sigma ** 2})")
