"""Monotone ladder for a quadratic generator with one jump mark.

Each level replaces f by its sup-convolution of order n, which is Lipschitz
and lies above f.  The level solutions decrease in n towards the minimal
solution of the quadratic problem.
"""

from grbsde import CoefficientSet, build_grid, simulate_ensemble, solve_general
from grbsde.generators import make

ens = simulate_ensemble(build_grid(1.0, 12, jump_times=(0.5,)), "tree")
f = make("f", "quadratic_z", ens, C=2.0, eta=0.1)
h = make("h", "affine", ens, a=0.1, c=-0.2)
L = make("barrier", "brownian", ens, offset=-0.6, scale=0.5, lo=-1.0, hi=-0.2)
U = make("barrier", "brownian", ens, offset=0.6, scale=0.5, lo=0.2, hi=1.0)
c = CoefficientSet.build(ens, xi=0.0, L=L, U=U, f=f, h=h)

rep = solve_general(c, N_max=6, min_levels=6)
print(" n        Y0")
for n, lvl in enumerate(rep.levels):
    print(f"{n:2d}  {lvl.Y0:+.6f}")
print(f"final Y0 = {rep.Y0:+.6f}")
