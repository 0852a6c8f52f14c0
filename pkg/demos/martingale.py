"""Zero generators and wide barriers: the solution is the terminal martingale.

With f = g = h = 0 and barriers that are never touched, Y_t = E[xi | F_t].
On the binomial tree with xi = B_T this is exactly B_t, and the reflecting
measures stay at zero.
"""

import numpy as np

from grbsde import CoefficientSet, build_grid, simulate_ensemble, solve_zero_generator

ens = simulate_ensemble(build_grid(1.0, 64), "tree")
c = CoefficientSet.build(ens, xi=ens.B[-1] / 10.0, L=-1.0, U=1.0)
rep = solve_zero_generator(c)
sol = rep.solution

err = np.abs(sol.Y.right - ens.B / 10.0)[ens.valid].max()
print(f"Y0 = {rep.Y0:+.3e}")
print(f"max |Y - B/10| over the tree = {err:.2e}")
print(f"K+ mass = {np.abs(sol.Kplus.values()).max():.1e}, K- mass = {np.abs(sol.Kminus.values()).max():.1e}")
