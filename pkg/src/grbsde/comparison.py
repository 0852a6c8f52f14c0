"""Comparison harness: hypothesis margins, ordered solutions and ordered
reflecting measures for a pair of coefficient sets.

Set 1 is the one expected to be smaller.  Two hypothesis bundles exist:

* ``"appendix"``: the ordering assumptions D.1 - D.5 between two
  solutions, with ``f2``, ``g2`` Lipschitz and ``h2`` supported on marks;
* ``"maximal"``: set 2 is solved as a maximal solution (ladder) and set 1
  is any solution whose data are dominated along its own path.

Margins are worst cases over reachable nodes; a margin ``>= -tol`` passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AdmissibilityError, CoefficientSet, Solution, is_zero
from .reflection import jump_reflect_rows

__all__ = [
    "ComparisonCase",
    "HypothesisReport",
    "ComparisonReport",
    "validate_hypotheses",
    "check_comparison",
    "ladder_cases",
    "EQ_TOL",
]

EQ_TOL = 1e-12


@dataclass
class ComparisonCase:
    c1: CoefficientSet
    c2: CoefficientSet
    hypotheses: str = "appendix"
    regime1: str = "auto"
    regime2: str = "auto"
    options1: dict = field(default_factory=dict)
    options2: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.c1.ensemble is not self.c2.ensemble:
            raise ValueError("both coefficient sets must share one ensemble")
        if self.hypotheses not in ("appendix", "maximal"):
            raise ValueError(f"unknown hypothesis bundle {self.hypotheses!r}")


@dataclass
class HypothesisReport:
    margins: dict
    tol: float = 1e-12

    @property
    def passed(self) -> bool:
        return all(m >= -self.tol for m in self.margins.values())

    @property
    def failed(self) -> list[str]:
        return sorted(k for k, m in self.margins.items() if m < -self.tol)

    def as_dict(self) -> dict:
        return {"margins": {k: float(v) for k, v in sorted(self.margins.items())},
                "passed": self.passed, "failed": self.failed}


def _min(x, mask=None) -> float:
    x = np.asarray(x, dtype=float)
    if mask is not None:
        x = x[np.broadcast_to(mask, x.shape)]
    return float(x.min()) if x.size else np.inf


def _lipschitz_declared(c: CoefficientSet, which: str) -> bool:
    fn = getattr(c, which)
    return is_zero(fn) or c.lipschitz is not None or getattr(fn, "lipschitz", None) is not None


def _mark_nodes(c: CoefficientSet) -> list[int]:
    if is_zero(c.h):
        return []
    if isinstance(c.marks, np.ndarray):
        m = np.atleast_2d(c.marks)
        return sorted({int(v) for v in m.ravel() if v > 0})
    return sorted(int(m) for m in c.marks)


def _h_at(c: CoefficientSet, i: int, x, y):
    k = np.arange(c.width)
    act = c.h_active(i, k)
    if not act.any():
        return np.zeros(c.width)
    return np.where(act, c.h(i, k, x, y), 0.0)


def validate_hypotheses(case: ComparisonCase, sol1: Solution, sol2: Solution,
                        n_samples: int = 33, tol: float = 1e-12) -> HypothesisReport:
    """Worst margin of every hypothesis of the case's bundle."""
    c1, c2 = case.c1, case.c2
    v = c1.ensemble.valid
    vr = v[:-1]
    N = c1.grid.N
    k = np.arange(c1.width)
    Y1, Y2 = sol1.Y, sol2.Y
    marks = sorted(set(_mark_nodes(c1)) | set(_mark_nodes(c2)))
    m = {}

    # generators along the path of solution 1
    fdiff = np.array([c2.f(i, k, Y1.right[i], sol1.Z[i]) - c1.f(i, k, Y1.right[i], sol1.Z[i])
                      for i in range(N)])
    gdiff = np.array([c2.g(i, k, Y1.right[i]) * c2.A.continuous[i] - c1.g(i, k, Y1.right[i]) * c1.A.continuous[i]
                      for i in range(N)])
    hdiff = [(_h_at(c2, i, Y1.left[i], Y1.right[i]) - _h_at(c1, i, Y1.left[i], Y1.right[i]))[v[i]]
             for i in marks]
    h_margin = min((float(d.min()) for d in hdiff if d.size), default=np.inf)
    dR = min(_min(c2.R.continuous - c1.R.continuous, vr), _min(c2.R.jumps - c1.R.jumps, v))

    if case.hypotheses == "appendix":
        m["xi"] = _min(c2.xi - c1.xi)
        m["D.1.lower"] = _min(Y2.right[:-1] - c1.L.right[:-1], vr)
        m["D.1.upper"] = _min(c2.U.right[:-1] - Y1.right[:-1], vr)
        gap = np.minimum(c1.U.right, c2.U.right) - np.maximum(c1.L.right, c2.L.right)
        m["D.1.gap"] = _min(2.0 - gap[:-1], vr)
        A2T = c2.A.values()[-1]
        m["D.2.A_upper"] = _min(1.0 - A2T)
        m["D.2.A_lower"] = _min(A2T)
        m["D.2.R"] = dR
        m["D.3a"] = _min(fdiff, vr)
        m["D.3b"] = 0.0 if _lipschitz_declared(c2, "f") else -np.inf
        m["D.4a"] = _min(gdiff, vr)
        m["D.4b"] = 0.0 if _lipschitz_declared(c2, "g") else -np.inf
        m["D.5a"] = h_margin
        m["D.5b"] = _monotone_margin(c2, n_samples)
        m["D.5c"] = _fixed_point_margin(c2, sol2)
    else:
        m["1.xi"] = _min(c2.xi - c1.xi)
        m["2.upper"] = _min(c2.U.right[:-1] - Y1.right[:-1], vr)
        m["3.lower"] = _min(Y2.right[:-1] - c1.L.right[:-1], vr)
        m["4.f"] = _min(fdiff, vr)
        m["5.g"] = _min(gdiff, vr)
        m["6.h"] = h_margin
        m["R"] = dR
    return HypothesisReport(m, tol)


def _monotone_margin(c: CoefficientSet, n_samples: int) -> float:
    """Sampled worst decrement of ``y -> y + h(x clipped, y clipped)`` at the marks."""
    worst = np.inf
    k = np.arange(c.width)
    v = c.ensemble.valid
    for i in _mark_nodes(c):
        act = c.h_active(i, k) & v[i]
        if not act.any():
            continue
        cols = k[act]
        lo, hi = c.L.right[i, cols], c.U.right[i, cols]
        llo, lhi = c.L.left[i, cols], c.U.left[i, cols]
        u = np.linspace(0.0, 1.0, n_samples)
        ys = lo[:, None] - 0.5 + (hi - lo + 1.0)[:, None] * u[None, :]
        for xf in u:
            x = llo + (lhi - llo) * xf
            val = ys + c.h(i, cols[:, None], x[:, None], np.clip(ys, lo[:, None], hi[:, None]))
            worst = min(worst, float(np.diff(val, axis=1).min()))
    return worst


def _fixed_point_margin(c: CoefficientSet, sol: Solution) -> float:
    """``-max |Y_- - maximal fixed point|`` at the marks of ``c``, recomputed from scratch."""
    worst = 0.0
    k = np.arange(c.width)
    v = c.ensemble.valid
    for i in _mark_nodes(c):
        act = c.h_active(i, k)
        Y = sol.Y.right[i]

        def hx(cols, xx, i=i, Y=Y):
            return c.h(i, cols[:, None], xx, Y[cols][:, None])

        x, *_ = jump_reflect_rows(Y, hx, c.R.jumps[i], c.L.left[i], c.U.left[i], tol=1e-9,
                                  active=act)
        d = np.abs(sol.Y.left[i] - x)[v[i]]
        worst = max(worst, float(d.max(initial=0.0)))
    return -worst


@dataclass
class ComparisonReport:
    hypotheses: HypothesisReport
    y_tol: float
    y_violations: int
    y_pairs: int
    y_max_excess: float
    y_witness: tuple | None
    measure_violations: int
    measure_atoms: int
    measure_witness: tuple | None
    lsmc: bool
    sol1: Solution = None
    sol2: Solution = None

    @property
    def y_violation_fraction(self) -> float:
        return self.y_violations / max(self.y_pairs, 1)

    @property
    def measure_violation_fraction(self) -> float:
        return self.measure_violations / max(self.measure_atoms, 1)

    @property
    def passed(self) -> bool:
        if not self.hypotheses.passed:
            return False
        if self.lsmc:
            return self.y_violation_fraction < 0.01 and self.measure_violation_fraction < 0.01
        return self.y_violations == 0 and self.measure_violations == 0

    def as_dict(self) -> dict:
        return {
            "hypotheses": self.hypotheses.as_dict(),
            "y_tol": self.y_tol,
            "y_violations": self.y_violations,
            "y_pairs": self.y_pairs,
            "y_violation_fraction": self.y_violation_fraction,
            "y_max_excess": self.y_max_excess,
            "y_witness": None if self.y_witness is None else list(self.y_witness),
            "measure_violations": self.measure_violations,
            "measure_atoms": self.measure_atoms,
            "measure_witness": None if self.measure_witness is None else list(self.measure_witness),
            "passed": self.passed,
        }


def _solve(c, backend, regime, opts, maximal=False):
    from .solver import solve, solve_general

    if maximal:
        return solve_general(c, backend, **{"raw": True, **opts}).solution
    return solve(c, backend, regime, **opts).solution


def check_comparison(case: ComparisonCase, backend=None, tol: float | None = None,
                     measure_tol: float | None = None, sol1: Solution | None = None,
                     sol2: Solution | None = None) -> ComparisonReport:
    """Solve both sets and check ``Y1 <= Y2`` and the barrier-restricted measure ordering.

    Continuous pushes at node ``i`` are compared where the barriers agree at
    ``t_i``; jump pushes where their left limits agree (within ``EQ_TOL``).
    Tree tolerance defaults to ``1e-10``; with regression the fraction of
    violating node-path pairs is reported and must stay below 1%.
    """
    c1, c2 = case.c1, case.c2
    lsmc = not c1.ensemble.is_tree
    if tol is None:
        tol = 1e-10 if not lsmc else 0.0
    if measure_tol is None:
        measure_tol = tol
    if sol2 is None:
        sol2 = _solve(c2, backend, case.regime2, case.options2, case.hypotheses == "maximal")
    if sol1 is None:
        sol1 = _solve(c1, backend, case.regime1, case.options1)
    hyp = validate_hypotheses(case, sol1, sol2)

    v = c1.ensemble.valid
    ex_r = np.where(v, sol1.Y.right - sol2.Y.right, -np.inf)
    ex_l = np.where(v, sol1.Y.left - sol2.Y.left, -np.inf)
    bad = (ex_r > tol) | (ex_l > tol)
    witness = tuple(int(a) for a in np.argwhere(bad)[0]) if bad.any() else None
    max_ex = float(max(ex_r.max(), ex_l.max()))

    K1p, K1m, K2p, K2m = sol1.Kplus, sol1.Kminus, sol2.Kplus, sol2.Kminus
    vr = v[:-1]
    Ueq_c = (np.abs(c1.U.right - c2.U.right) <= EQ_TOL)[:-1] & vr
    Leq_c = (np.abs(c1.L.right - c2.L.right) <= EQ_TOL)[:-1] & vr
    Ueq_j = (np.abs(c1.U.left - c2.U.left) <= EQ_TOL) & v
    Leq_j = (np.abs(c1.L.left - c2.L.left) <= EQ_TOL) & v
    Ueq_j[0] = Leq_j[0] = False
    viol = [
        Ueq_c & (K1m.continuous > K2m.continuous + measure_tol),
        Leq_c & (K2p.continuous > K1p.continuous + measure_tol),
    ]
    viol_j = [
        Ueq_j & (K1m.jumps > K2m.jumps + measure_tol),
        Leq_j & (K2p.jumps > K1p.jumps + measure_tol),
    ]
    n_viol = int(sum(x.sum() for x in viol) + sum(x.sum() for x in viol_j))
    n_atoms = int(Ueq_c.sum() + Leq_c.sum() + Ueq_j.sum() + Leq_j.sum())
    mw = None
    for kind, arrs in (("continuous", viol), ("jump", viol_j)):
        for a in arrs:
            if mw is None and a.any():
                i, col = np.argwhere(a)[0]
                mw = (kind, int(i), int(col))
    return ComparisonReport(hyp, tol, int(bad.sum()), int(2 * v.sum()), max_ex, witness, n_viol, n_atoms,
                            mw, lsmc, sol1, sol2)


def ladder_cases(c: CoefficientSet, n_max: int, enforce_order: bool = True) -> list[ComparisonCase]:
    """Adjacent ladder levels as comparison cases (level ``n + 1`` below level ``n``)."""
    from .approx import build_level, level_coefficients

    if is_zero(c.f) and is_zero(c.g) and is_zero(c.h):
        raise AdmissibilityError("the ladder of a zero-generator set is trivial")
    sets = [level_coefficients(c, build_level(c, n, enforce_order)) for n in range(n_max + 1)]
    return [ComparisonCase(sets[n + 1], sets[n], "appendix", "concatenated", "concatenated",
                           {"method": "direct"}, {"method": "direct"}) for n in range(n_max)]
