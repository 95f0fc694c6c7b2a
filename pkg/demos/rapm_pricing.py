# Risk-adjusted pricing: hedging interval, the Gamma equation,
# bid/ask quotes and recovering (sigma, R) from two prices.
import numpy as np

from fbound.core import MarketParams
from fbound.gamma_eq import (RapmParams, optimal_hedging_interval, solve_gamma_equation,
                             GammaConfig, gamma_closed_form, bid_ask, calibrate_rapm)

rp = RapmParams(C=0.01, R=5.0)
dt, rmin = optimal_hedging_interval(rp, sigma_hat=0.3, S=25.0, Gamma=0.05)
print(f"mu={rp.mu:.4f}  dt_opt={dt:.5f}  minimal premium={rmin:.5f}")

p = MarketParams(r=0.011, q=0.0, E=25.0, T=1.0, sigma=0.3)
lin = solve_gamma_equation(p, 0.0, GammaConfig())
nl = solve_gamma_equation(p, rp, GammaConfig())
exact = gamma_closed_form(p, lin.tau_star, lin.x, p.T)
print("mu=0 error vs closed form:", f"{np.max(np.abs(lin.H[-1] - exact)):.2e}")
print("peak H at T:  linear", round(lin.H[-1].max(), 4), "  RAPM", round(nl.H[-1].max(), 4))
print("mass drift:", f"{np.max(np.abs(nl.mass - 1)):.1e}")

bid, mid, ask = bid_ask(p, rp, S0=25.0)
print(f"bid={bid:.4f} mid={mid:.4f} ask={ask:.4f}")

# start from a wrong volatility and let Newton find both parameters
guess = MarketParams(r=0.011, q=0.0, E=25.0, T=1.0, sigma=0.2)
sigma, R, res = calibrate_rapm(mid, ask, 0.01, guess, 25.0)
print(f"recovered sigma={sigma:.5f} R={R:.4f} (residual {res:.1e})")
