# Floating-strike Asian call: the boundary in x = S/A starts at (1+rT)/(1+qT)
# and decays towards 1 as the horizon approaches.
import numpy as np

from fbound.asian import AsianParams, AsianConfig, asian_solve

p = AsianParams(r=0.06, q=0.04, sigma=0.2, T=50.0)
for m in (10_000, 100_000):
    st = asian_solve(p, AsianConfig(n=100, m=m))
    print(f"m={m:<7} rho(0)={st.rho[0]:.6f} rho(T/2)={np.interp(25, st.tau, st.rho):.4f} "
          f"last level={st.rho[-1]:.6f}  ({st.wall_time:.1f} s)")

t, inv = st.inv_xf()
for ti in (0, 10, 25, 40, 49):
    print(f"t={ti:<3} 1/x_f = {np.interp(ti, t[::-1], inv[::-1]):.4f}")
