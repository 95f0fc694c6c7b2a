# How transaction costs and risk aversion push the call boundary up.
from fbound.core import MarketParams, Constant, RAPM, BarlesSoner, Leland
from fbound.pde_solver import SolverConfig, solve_free_boundary, deviation_norms, scaling_exponent

p = MarketParams(r=0.1, q=0.05, E=10.0, T=1.0, sigma=0.2)
cfg = SolverConfig.fast(snapshots=1)      # n=200, m=20000; use SolverConfig() for the fine mesh
base = solve_free_boundary(p, Constant(), cfg)

Rs = [1, 10, 100]
dev = []
for R in Rs:
    s = solve_free_boundary(p, RAPM.from_costs(0.01, R), cfg)
    linf, l2 = deviation_norms(s.rho, base.rho, s.tau)
    dev.append(linf)
    print(f"RAPM R={R:<4} rho(T)={s.rho[-1]:.4f}  |rho^R - rho^0|_inf={linf:.4f}")
print("fitted exponent in R:", round(scaling_exponent(Rs, dev), 3))

for a in (0.01, 0.05, 0.1):
    s = solve_free_boundary(p, BarlesSoner(a), cfg)
    print(f"Barles-Soner a={a:<5} rho(T)={s.rho[-1]:.4f}  micro-iterations max {s.micro_iters.max()}")

s = solve_free_boundary(p, Leland(0.1), cfg)
print("Leland Le=0.1  rho(T) =", round(s.rho[-1], 4))
