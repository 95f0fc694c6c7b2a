# Early exercise boundary of an American call with constant volatility,
# three ways: integral equation, front-fixing PDE, and the lattice.
import numpy as np

from fbound.core import MarketParams, Constant, ExerciseRegionError
from fbound.integral_eq import solve_boundary, price_call_semi_explicit
from fbound.pde_solver import SolverConfig, solve_free_boundary, recover_price
from fbound.oracles import LatticeConfig, binomial_price, baw_price, bs_european_price

p = MarketParams(r=0.1, q=0.05, E=10.0, T=1.0, sigma=0.2)

# integral equation: a couple of forward sweeps suffice
H, curve = solve_boundary(p)
print("sweeps:", H.iterations, " rho(T) =", round(curve.rho[-1], 4))

# the PDE on the CI mesh lands a little below
surf = solve_free_boundary(p, Constant(), SolverConfig.fast())
print("PDE rho(T) =", round(surf.rho[-1], 4))

# boundary at a few times to expiry
for tau in (0.1, 0.25, 0.5, 1.0):
    print(f"tau={tau:<5} integral={curve.at(tau):.4f}  pde={np.interp(tau, surf.tau, surf.rho):.4f}")

# prices: semi-explicit formula vs PDE recovery vs lattice vs BAW
print(f"{'S':>8} {'semi':>8} {'pde':>8} {'CRR':>8} {'BAW':>8} {'euro':>8}")
for S in (15, 18, 20, 21, 22.3754):
    semi = price_call_semi_explicit(S, 1.0, curve, p)
    try:
        pde = recover_price(surf, S, 1.0)
    except ExerciseRegionError as e:   # the coarse PDE boundary sits below 22.3754
        pde = e.value
    crr = binomial_price(S, p, LatticeConfig(2000))[0]
    print(f"{S:>8} {semi:8.4f} {pde:8.4f} {crr:8.4f} {baw_price(S, p):8.4f} "
          f"{bs_european_price(S, p, 1.0):8.4f}")
# note the S=15 row: the American value sits just above the European one
