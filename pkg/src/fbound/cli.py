"""``fbound`` command-line interface.

Every subcommand accepts ``--config FILE``: a flat ``key = value`` file
(``#`` starts a comment, keys use the long flag names with ``-`` or
``_``).  Explicit flags win over the config file, which wins over the
built-in defaults.  Each run writes its CSV output plus a JSON manifest
(``<out>.manifest.json`` unless ``--manifest`` is given).

Exit codes: 0 success, 1 solver failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, is_dataclass

import numpy as np

from .core import DomainError, FboundError, MarketParams, make_spec


class UsageError(Exception):
    pass


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).replace(" ", "").split(",") if v]


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def read_config(path):
    out = {}
    with open(path) as f:
        for ln, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


# ---------------------------------------------------------------------------
# option tables: name -> (type, default, help)
# ---------------------------------------------------------------------------

MARKET = {
    "E": (float, 10.0, "strike"),
    "r": (float, 0.1, "interest rate"),
    "q": (float, 0.05, "dividend yield"),
    "sigma": (float, 0.2, "volatility"),
    "T": (float, 1.0, "expiry"),
}
MODEL = {
    "model": (str, "constant", "constant | leland | rapm | barles-soner"),
    "Le": (float, 0.0, "Leland number"),
    "C": (float, 0.01, "transaction cost coefficient (rapm)"),
    "R": (float, 0.0, "risk premium coefficient (rapm)"),
    "mu": (float, None, "rapm mu, overrides C and R"),
    "a": (float, 0.0, "Barles-Soner risk aversion"),
}
PDE = {
    "n": (int, 200, "space steps"),
    "m": (int, 20000, "time steps"),
    "L": (float, 3.0, "domain length in x"),
    "micro_tol": (float, 1e-7, "micro-iteration tolerance"),
}

COMMANDS = {
    "solve-linear": ({**MARKET, "n": (int, 100, "nodes in sqrt(tau)"),
                      "tol": (float, 1e-8, "fixed-point tolerance")},
                     "integral-equation boundary (constant volatility)"),
    "price": ({**MARKET, "S": (_floats, [20.0], "spot list"),
               "tau": (float, None, "time to expiry, default T"),
               "method": (str, "semi", "semi | pde"),
               "n": (int, 100, "nodes (semi) or space steps (pde)"),
               "m": (int, 20000, "time steps (pde)")},
              "American call prices"),
    "solve-pde": ({**MARKET, **MODEL, **PDE,
                   "surface": (str, None, "optional CSV of stored Pi levels")},
                  "front-fixing solver with a volatility model"),
    "solve-asian": ({"r": (float, 0.06, "interest rate"), "q": (float, 0.04, "dividend yield"),
                     "sigma": (float, 0.2, "volatility"), "T": (float, 50.0, "expiry"),
                     "n": (int, 100, "space steps"), "m": (int, 10000, "time steps"),
                     "L": (float, 3.0, "domain length"),
                     "inv": (str, None, "optional CSV of (t, 1/x_f)")},
                    "floating-strike Asian call boundary"),
    "gamma-solve": ({**MARKET, "q": (float, 0.0, "dividend yield"),
                     "C": (float, 0.01, "transaction cost coefficient"),
                     "R": (float, 5.0, "risk premium coefficient"),
                     "mu": (float, None, "overrides C and R"),
                     "n": (int, 400, "space steps"), "m": (int, 2000, "time steps"),
                     "tau_star": (float, 0.005, "smoothing time"),
                     "save_every": (int, 200, "store every k-th level")},
                    "RAPM Gamma equation"),
    "rapm-price": ({**MARKET, "q": (float, 0.0, "dividend yield"),
                    "C": (float, 0.01, "transaction cost coefficient"),
                    "R": (float, 5.0, "risk premium coefficient"),
                    "tau": (float, None, "time to expiry, default T"),
                    "payoff": (str, "call", "call | put"),
                    "n": (int, 400, "space steps"), "m": (int, 200, "time steps")},
                   "European RAPM price curve"),
    "rapm-calibrate": ({**MARKET, "q": (float, 0.0, "dividend yield"),
                        "mid": (float, None, "observed mid price"),
                        "ask": (float, None, "observed ask price"),
                        "C": (float, 0.01, "transaction cost coefficient"),
                        "S0": (float, 10.0, "spot"), "t": (float, 0.0, "valuation time")},
                       "recover (sigma, R) from mid and ask"),
    "oracle": ({**MARKET, "method": (str, "binomial", "binomial | psor | baw | bs"),
                "S": (_floats, [20.0], "spot list"),
                "payoff": (str, "call", "call | put"),
                "style": (str, "american", "american | european (binomial)"),
                "steps": (int, 2000, "lattice depth"),
                "grid": (int, 800, "PSOR space and time steps")},
               "reference pricers"),
    "eoc": ({**MARKET, "ref": (str, "integral", "reference (integral)"),
             "meshes": (_floats, [0.03, 0.012, 0.006], "mesh sizes h"),
             "cfl": (float, 0.5, "sigma^2 k / h^2"),
             "ref_n": (int, 100, "reference nodes"),
             "l2": (str, "mesh", "mesh | cont")},
            "experimental order of convergence"),
    "sweep": ({**MARKET, **PDE, "model": (str, "rapm", "rapm | barles-soner"),
               "values": (_floats, [1.0, 10.0, 100.0], "R (rapm) or a (barles-soner) grid"),
               "C": (float, 0.01, "rapm transaction cost coefficient"),
               "workers": (int, None, "pool size, default FBOUND_THREADS or cores"),
               "run_dir": (str, None, "directory for per-run boundary CSVs")},
              "deviation norms over a parameter grid"),
    "put-asymptotic": ({"E": (float, 10.0, "strike"), "r": (float, 0.1, "interest rate"),
                        "sigma": (float, 0.25, "volatility"),
                        "tau": (_floats, [0.001], "times to expiry"),
                        "steps": (int, 0, "lattice depth for comparison, 0 = skip")},
                       "near-expiry put boundary"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="fbound", description="American free-boundary solvers")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (opts, helptext) in COMMANDS.items():
        sp = sub.add_parser(name, help=helptext, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="key = value file; flags win on conflict")
        sp.add_argument("--out", help="output CSV")
        sp.add_argument("--manifest", help="manifest path (default <out>.manifest.json)")
        for key, (typ, default, h) in opts.items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, type=typ if typ is not bool else _bool,
                            help=f"{h} (default {default})")
    return p


def resolve(ns):
    """defaults < config file < explicit flags."""
    opts = COMMANDS[ns.command][0]
    given = vars(ns)
    cfg = read_config(given["config"]) if given.get("config") else {}
    unknown = set(cfg) - set(opts) - {"out", "manifest"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, (typ, default, _) in opts.items():
        if key in given:
            out[key] = given[key]
        elif key in cfg:
            try:
                out[key] = typ(cfg[key])
            except ValueError as e:
                raise UsageError(f"config key {key}: {e}") from None
        else:
            out[key] = default
    for key in ("out", "manifest"):
        out[key] = given.get(key, cfg.get(key))
    return out


def _market(a, q=None):
    return MarketParams(a["r"], a["q"] if q is None else q, a["E"], a["T"], a["sigma"])


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, str):
        return v
    return format(float(v), ".12g")


def _jsonable(o):
    if is_dataclass(o):
        return asdict(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _spec(a):
    kw = {k: a.get(k) for k in ("Le", "C", "R", "mu", "a")}
    return make_spec(a["model"], **kw)


# ---------------------------------------------------------------------------
# commands; each returns (outputs, diagnostics, extra manifest fields)
# ---------------------------------------------------------------------------

def cmd_solve_linear(a):
    from .integral_eq import IntegralConfig, solve_boundary
    params = _market(a)
    cfg = IntegralConfig(n=a["n"], tol=a["tol"])
    H, curve = solve_boundary(params, cfg)
    curve.to_csv(a["out"])
    return [a["out"]], {"iterations": H.iterations, "residual": H.residual,
                        "rho_T": float(curve.rho[-1])}, {"params": params, "cfg": cfg}


def cmd_price(a):
    params = _market(a)
    tau = params.T if a["tau"] is None else a["tau"]
    from .core import ExerciseRegionError
    rows = []
    if a["method"] == "semi":
        from .integral_eq import IntegralConfig, price_call_semi_explicit, solve_boundary
        _, curve = solve_boundary(params, IntegralConfig(n=a["n"]))
        pricer = lambda S: price_call_semi_explicit(S, tau, curve, params)  # noqa: E731
    elif a["method"] == "pde":
        from .pde_solver import SolverConfig, recover_price, solve_free_boundary
        surf = solve_free_boundary(params, cfg=SolverConfig(n=a["n"], m=a["m"], snapshots=1))
        pricer = lambda S: recover_price(surf, S, tau)  # noqa: E731
    else:
        raise UsageError(f"unknown method {a['method']!r}")
    for S in a["S"]:
        try:
            rows.append((S, tau, pricer(S)))
        except ExerciseRegionError as e:
            rows.append((S, tau, e.value))
    _write_csv(a["out"], ["S", "tau", "price"], rows)
    return [a["out"]], {"prices": [r_[2] for r_ in rows]}, {"params": params}


def cmd_solve_pde(a):
    from .pde_solver import SolverConfig, solve_free_boundary
    params = _market(a)
    spec = _spec(a)
    cfg = SolverConfig(n=a["n"], m=a["m"], L=a["L"], micro_tol=a["micro_tol"])
    surf = solve_free_boundary(params, spec, cfg)
    surf.boundary().to_csv(a["out"])
    outs = [a["out"]]
    if a["surface"]:
        surf.surface_csv(a["surface"])
        outs.append(a["surface"])
    s = surf.summary()
    return outs, {"rho_T": s["rho_T"], "micro_iter_stats": s["micro_iter_stats"],
                  "pi_range": s["pi_range"], "offending_rows": surf.offending_rows}, \
        {"params": params, "spec": s["spec"], "cfg": cfg}


def cmd_solve_asian(a):
    from .asian import AsianConfig, AsianParams, asian_solve
    params = AsianParams(a["r"], a["q"], a["sigma"], a["T"])
    cfg = AsianConfig(n=a["n"], m=a["m"], L=a["L"])
    st = asian_solve(params, cfg)
    st.to_csv(a["out"])
    outs = [a["out"]]
    if a["inv"]:
        st.inv_csv(a["inv"])
        outs.append(a["inv"])
    return outs, {"rho_0": float(st.rho[0]), "rho_last": float(st.rho[-1]),
                  "pi_range": [st.pi_min, st.pi_max],
                  "micro_iters_max": int(st.micro_iters.max())}, {"params": params, "cfg": cfg}


def _rapm(a):
    from .gamma_eq import RapmParams
    return RapmParams(a["C"], a["R"])


def cmd_gamma_solve(a):
    from .gamma_eq import GammaConfig, solve_gamma_equation
    params = _market(a)
    cfg = GammaConfig(n=a["n"], m=a["m"], tau_star=a["tau_star"])
    mu = a["mu"] if a["mu"] is not None else _rapm(a).mu
    g = solve_gamma_equation(params, mu, cfg, save_every=a["save_every"])
    rows = ((x, t, h) for t, H in zip(g.tau, g.H) for x, h in zip(g.x, H))
    _write_csv(a["out"], ["x", "tau", "H"], rows)
    drift = float(np.max(np.abs(g.mass - g.mass[0])))
    return [a["out"]], {"mu": mu, "mass": g.mass.tolist(), "mass_drift": drift}, \
        {"params": params, "cfg": cfg}


def cmd_rapm_price(a):
    from .gamma_eq import EuroConfig, price_european_rapm
    params = _market(a)
    cfg = EuroConfig(n=a["n"], m=a["m"])
    rp = _rapm(a)
    S, V = price_european_rapm(params, rp, a["tau"], cfg, a["payoff"])
    _write_csv(a["out"], ["S", "V"], zip(S, V))
    return [a["out"]], {"mu": rp.mu}, {"params": params, "cfg": cfg, "rapm": rp}


def cmd_rapm_calibrate(a):
    from .gamma_eq import calibrate_rapm
    if a["mid"] is None or a["ask"] is None:
        raise UsageError("--mid and --ask are required")
    params = _market(a)
    sg, R, res = calibrate_rapm(a["mid"], a["ask"], a["C"], params, a["S0"], a["t"])
    _write_csv(a["out"], ["sigma", "R", "residual"], [(sg, R, res)])
    return [a["out"]], {"sigma": sg, "R": R, "residual": res}, {"params": params}


def cmd_oracle(a):
    from . import oracles as o
    params = _market(a)
    method, pay = a["method"], a["payoff"]
    diag = {}
    if method == "binomial":
        cfg = o.LatticeConfig(a["steps"], a["style"], pay)
        prices = [o.binomial_price(S, params, cfg)[0] for S in a["S"]]
    elif method == "psor":
        S, V, _, res = o.psor_price(params, o.PsorConfig(a["grid"], a["grid"], payoff=pay))
        prices = [float(np.interp(math.log(s), np.log(S), V)) for s in a["S"]]
        diag["complementarity_residual"] = res
    elif method == "baw":
        prices = [o.baw_price(S, params, payoff=pay) for S in a["S"]]
    elif method == "bs":
        prices = [o.bs_european_price(S, params, params.T, pay) for S in a["S"]]
    else:
        raise UsageError(f"unknown oracle {method!r}")
    _write_csv(a["out"], ["S", "price"], zip(a["S"], prices))
    diag["prices"] = prices
    return [a["out"]], diag, {"params": params}


def cmd_eoc(a):
    from .integral_eq import IntegralConfig, solve_boundary
    from .pde_solver import eoc_study
    if a["ref"] != "integral":
        raise UsageError("only --ref integral is supported")
    params = _market(a)
    _, ref = solve_boundary(params, IntegralConfig(n=a["ref_n"]))
    rows = eoc_study(params, a["meshes"], ref, cfl=a["cfl"], l2=a["l2"])
    keys = ["h", "err_linf", "eoc_linf", "err_l2", "eoc_l2"]
    _write_csv(a["out"], keys, ([r_[k] for k in keys] for r_ in rows))
    return [a["out"]], {"rows": rows}, {"params": params}


def _sweep_one(job):
    from .pde_solver import SolverConfig, solve_free_boundary
    params, spec, cfg = job
    s = solve_free_boundary(params, spec, cfg)
    return s.tau, s.rho, s.wall_time


def cmd_sweep(a):
    from .core import RAPM, BarlesSoner
    from .pde_solver import SolverConfig, deviation_norms, scaling_exponent, thread_count
    params = _market(a)
    cfg = SolverConfig(n=a["n"], m=a["m"], L=a["L"], micro_tol=a["micro_tol"], snapshots=1)
    if a["model"] == "rapm":
        mk = lambda v: RAPM.from_costs(a["C"], v)  # noqa: E731
    elif a["model"] in ("barles-soner", "barles_soner"):
        mk = BarlesSoner
    else:
        raise UsageError(f"sweep model must be rapm or barles-soner, got {a['model']!r}")
    vals = a["values"]
    if any(v <= 0 for v in vals):
        raise UsageError("sweep values must be positive")
    jobs = [(params, mk(0.0), cfg)] + [(params, mk(v), cfg) for v in vals]
    workers = a["workers"] or thread_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_sweep_one, jobs))
    else:
        res = [_sweep_one(j) for j in jobs]
    tau, base, _ = res[0]
    outs = []
    if a["run_dir"]:
        os.makedirs(a["run_dir"], exist_ok=True)
        for v, (t, rho, _) in zip([0.0] + vals, res):
            path = os.path.join(a["run_dir"], f"{a['model']}_{v:g}.csv")
            _write_csv(path, ["tau", "rho"], zip(t, rho))
            outs.append(path)
    rows = []
    for v, (_, rho, _) in zip(vals, res[1:]):
        linf, l2 = deviation_norms(rho, base, tau)
        rows.append((v, linf, l2))
    _write_csv(a["out"], ["value", "dev_linf", "dev_l2"], rows)
    diag = {"workers": workers, "run_wall_times": [r_[2] for r_ in res]}
    if len(vals) >= 2:
        diag["exponent_linf"] = scaling_exponent(vals, [r_[1] for r_ in rows])
    return [a["out"]] + outs, diag, {"params": params, "cfg": cfg}


def cmd_put_asymptotic(a):
    from .integral_eq import put_boundary_asymptotic
    from .oracles import binomial_critical_price
    rows = []
    for tau in a["tau"]:
        params = MarketParams(a["r"], 0.0, a["E"], max(tau, 1e-12), a["sigma"])
        rho = put_boundary_asymptotic(tau, params)
        row = [tau, rho]
        if a["steps"] > 0:
            row.append(binomial_critical_price(params, tau, a["steps"], "put"))
        rows.append(row)
    header = ["tau", "rho_asym"] + (["rho_binomial"] if a["steps"] > 0 else [])
    _write_csv(a["out"], header, rows)
    return [a["out"]], {"rows": rows}, {}


HANDLERS = {
    "solve-linear": cmd_solve_linear, "price": cmd_price, "solve-pde": cmd_solve_pde,
    "solve-asian": cmd_solve_asian, "gamma-solve": cmd_gamma_solve,
    "rapm-price": cmd_rapm_price, "rapm-calibrate": cmd_rapm_calibrate,
    "oracle": cmd_oracle, "eoc": cmd_eoc, "sweep": cmd_sweep,
    "put-asymptotic": cmd_put_asymptotic,
}


def run(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    t0 = time.perf_counter()
    try:
        a = resolve(ns)
        if not a["out"]:
            a["out"] = f"{ns.command}.csv"
        outs, diag, extra = HANDLERS[ns.command](a)
    except (UsageError, DomainError, OSError) as e:
        print(f"fbound {ns.command}: error: {e}", file=sys.stderr)
        return 2
    except FboundError as e:
        print(f"fbound {ns.command}: solver failure: {e}", file=sys.stderr)
        return 1
    manifest = {
        "command": ns.command,
        "args": {k: v for k, v in a.items() if k not in ("out", "manifest")},
        **extra,
        "outputs": outs,
        "wall_time": time.perf_counter() - t0,
        "diagnostics": diag,
    }
    mpath = a["manifest"] or a["out"] + ".manifest.json"
    with open(mpath, "w") as f:
        json.dump(manifest, f, indent=2, default=_jsonable)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
