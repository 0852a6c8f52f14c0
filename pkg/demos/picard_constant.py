"""Constant generator under Picard iteration.

For f = -0.5, xi = 0 and barriers [-1, 0] the solution is the deterministic
line Y_t = -0.5 (1 - t), which never touches the barriers.
"""

import numpy as np

from grbsde import CoefficientSet, build_grid, simulate_ensemble, solve_lipschitz_picard
from grbsde.generators import make

ens = simulate_ensemble(build_grid(1.0, 100), "tree")
f = make("f", "constant", ens, value=-0.5)
c = CoefficientSet.build(ens, xi=0.0, L=-1.0, U=0.0, f=f, lipschitz=0.0)
rep = solve_lipschitz_picard(c)

t = ens.grid.nodes[:, None]
exact = np.broadcast_to(-0.5 * (1.0 - t), ens.valid.shape)
err = np.abs(rep.solution.Y.right - exact)[ens.valid].max()
print(f"Y0 = {rep.Y0:.6f} (exact -0.5), sup error = {err:.1e}")
