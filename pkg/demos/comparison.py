"""Comparison of two constant-generator problems.

f1 = -0.5 sits below f2 = -0.2 with the same terminal value and barriers, so
Y1 <= Y2 everywhere and the reflecting measures are ordered.
"""

from grbsde import CoefficientSet, build_grid, simulate_ensemble
from grbsde.comparison import ComparisonCase, check_comparison
from grbsde.generators import make

ens = simulate_ensemble(build_grid(1.0, 32), "tree")
c1, c2 = (CoefficientSet.build(ens, xi=0.0, L=-1.0, U=0.0, f=make("f", "constant", ens, value=v),
                               lipschitz=0.0) for v in (-0.5, -0.2))
rep = check_comparison(ComparisonCase(c1, c2))

print(f"hypotheses passed: {rep.hypotheses.passed}")
for k, v in sorted(rep.hypotheses.margins.items()):
    print(f"  margin {k:10s} {v:+.3e}")
print(f"Y violations {rep.y_violations}/{rep.y_pairs}, measure violations {rep.measure_violations}/{rep.measure_atoms}")
print(f"Y1(0) = {rep.sol1.Y0:+.4f}, Y2(0) = {rep.sol2.Y0:+.4f}, passed = {rep.passed}")
