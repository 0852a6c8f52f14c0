"""Backward-induction solvers for the discretised equation.

The discrete scheme on node ``i`` (interval ``(t_i, t_{i+1}]``) is

    E_i  = E[Y_{(i+1)-} | F_i],          Z_i = E[Y_{(i+1)-} dB_i | F_i] / dt_i
    Yt_i = E_i + f(i, E_i, Z_i) dt_i + g(i, E_i) dA_i + dR^c_i
    Y_i  = L_i v Yt_i ^ U_i                                  (continuous pushes)
    Y_i- = max fixed point of x -> L_i- v [Y_i + h(i, x, Y_i) + dR^d_i] ^ U_i-

with ``Y_N = xi``.  ``Y_{0-} = Y_0``.  Conditional expectations come from
a recombining tree (exact) or a least-squares regression on Hermite
polynomials of ``B_{t_i}``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermevander

from .core import (AdmissibilityError, BrownianEnsemble, CoefficientSet, FiniteVariationPath, RcllPath,
                   Solution, is_zero)
from .reflection import check_minimality, check_singularity, jump_reflect_rows, project_rows, total_mass

__all__ = [
    "BackendSpec",
    "TreeBackend",
    "LSMCBackend",
    "make_backend",
    "RankDeficiency",
    "ConvergenceError",
    "MonotonicityError",
    "SolveReport",
    "step_backward",
    "solve_zero_generator",
    "solve_lipschitz_picard",
    "solve_concatenated",
    "solve_general",
    "solve",
    "rescale_to_box",
    "dynkin_value_bruteforce",
]


class RankDeficiency(RuntimeError):
    """The regression design matrix is (numerically) rank deficient."""


class ConvergenceError(RuntimeError):
    """An iteration did not reach its tolerance within the budget."""


class MonotonicityError(RuntimeError):
    """A ladder level rose above its predecessor beyond the noise budget."""


# ---------------------------------------------------------------------------
# conditional-expectation backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "tree"
    degree: int = 3
    M: int | None = None

    def __post_init__(self):
        if self.kind not in ("tree", "lsmc"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.degree < 0:
            raise ValueError("basis degree must be >= 0")
        if self.kind == "lsmc" and self.M is not None and self.M < 10 * (self.degree + 1):
            raise ValueError(f"lsmc needs M >= 10 x basis dimension = {10 * (self.degree + 1)}")


class TreeBackend:
    kind = "tree"

    def __init__(self, ens: BrownianEnsemble):
        if not ens.is_tree:
            raise ValueError("tree backend needs a tree ensemble")
        self.ens = ens
        self.sq = np.sqrt(ens.grid.dt[0])
        W = ens.width
        self.up = np.minimum(np.arange(W) + 1, W - 1)
        self.calls = 0

    def cond(self, i: int, X: np.ndarray):
        """``E[X | node]`` and ``E[X dB | node] / dt`` for a row ``X`` at node ``i + 1``."""
        self.calls += 1
        up, dn = X[self.up], X
        return 0.5 * (up + dn), (up - dn) / (2.0 * self.sq)


class LSMCBackend:
    kind = "lsmc"

    def __init__(self, ens: BrownianEnsemble, degree: int = 3):
        if ens.is_tree:
            raise ValueError("lsmc backend needs a monte_carlo ensemble")
        BackendSpec("lsmc", degree, ens.width)
        self.ens = ens
        self.degree = degree
        self._q = {}
        self.calls = 0

    def _basis(self, i: int) -> np.ndarray:
        if i not in self._q:
            t = self.ens.grid.nodes[i]
            x = self.ens.B[i] / np.sqrt(t) if t > 0 else np.zeros(self.ens.width)
            deg = self.degree if i > 0 else 0
            V = hermevander(x, deg)
            q, r = np.linalg.qr(V)
            d = np.abs(np.diag(r))
            if d.size and d.min() <= 1e-10 * d.max():
                raise RankDeficiency(f"regression basis is rank deficient at node {i}")
            self._q[i] = q
        return self._q[i]

    def cond(self, i: int, X: np.ndarray):
        self.calls += 1
        q = self._basis(i)
        dt = self.ens.grid.dt[i]
        E = q @ (q.T @ X)
        Z = q @ (q.T @ (X * self.ens.dB[i])) / dt
        return E, Z


def make_backend(spec: BackendSpec | str, ens: BrownianEnsemble):
    spec = BackendSpec(spec) if isinstance(spec, str) else spec
    if spec.kind == "tree":
        return TreeBackend(ens)
    return LSMCBackend(ens, spec.degree)


# ---------------------------------------------------------------------------
# one backward step
# ---------------------------------------------------------------------------


def step_backward(backend, i: int, Y_next, f=None, g=None, dt: float | None = None, dA=0.0,
                  dRc=0.0, k=None, implicit: bool = False, frozen=None, sweeps: int = 3):
    """``(Y_tilde, Z, E)`` at node ``i`` from the row ``Y_next`` at node ``i + 1``.

    ``frozen = (y, z)`` evaluates the generators at the given arguments
    (Picard); otherwise at ``(E, Z)`` (explicit) or, with ``implicit``, at
    the ``sweeps``-fold fixed-point iterate in ``y``.
    """
    E, Z = backend.cond(i, np.asarray(Y_next, dtype=float))
    dt = backend.ens.grid.dt[i] if dt is None else dt
    k = np.arange(E.size) if k is None else k
    ya, za = (E, Z) if frozen is None else frozen

    def drift(y):
        out = np.zeros_like(E)
        if f is not None and not is_zero(f):
            out = out + f(i, k, y, za) * dt
        if g is not None and not is_zero(g):
            out = out + g(i, k, y) * dA
        return out

    Yt = E + drift(ya) + dRc
    if implicit and frozen is None:
        for _ in range(sweeps):
            Yt = E + drift(Yt) + dRc
    return Yt, Z, E


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class SolveReport:
    solution: Solution
    regime: str
    history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    levels: list = field(default_factory=list)

    @property
    def Y0(self) -> float:
        return self.solution.Y0


def _diagnose(c: CoefficientSet, sol: Solution) -> dict:
    """Skorokhod residuals, singularity and sandwich checks on reachable nodes."""
    ens = c.ensemble
    v = ens.valid
    w = ens.weights
    lo, hi = check_minimality(sol, c.L, c.U)
    Y = sol.Y
    sandwich = max(
        float(np.max(np.where(v[:-1], c.L.right[:-1] - Y.right[:-1], -np.inf), initial=0.0)),
        float(np.max(np.where(v[:-1], Y.right[:-1] - c.U.right[:-1], -np.inf), initial=0.0)),
        float(np.max(np.where(v[1:], c.L.left[1:] - Y.left[1:], -np.inf), initial=0.0)),
        float(np.max(np.where(v[1:], Y.left[1:] - c.U.left[1:], -np.inf), initial=0.0)),
    )
    ident = 0.0
    if sol.Ytilde is not None:
        step = Y.right[:-1] - (sol.Ytilde + sol.Kplus.continuous - sol.Kminus.continuous)
        ident = float(np.max(np.abs(np.where(v[:-1], step, 0.0)), initial=0.0))
    jump_res = 0.0
    if sol.jump_input is not None:
        jr = Y.left[1:] - (sol.jump_input[1:] + sol.Kplus.jumps[1:] - sol.Kminus.jumps[1:])
        jump_res = float(np.max(np.abs(np.where(v[1:], jr, 0.0)), initial=0.0))
    mass = total_mass(sol.Kplus, w) + total_mass(sol.Kminus, w)
    dt = float(c.grid.dt.max())
    return {
        "minimality_lower": lo,
        "minimality_upper": hi,
        "minimality_budget": 10.0 * dt * mass,
        "minimality_ok": bool(lo <= 10.0 * dt * mass and hi <= 10.0 * dt * mass),
        "singularity_max": check_singularity(sol),
        "sandwich_violation": sandwich,
        "step_identity_residual": ident,
        "jump_identity_residual": jump_res,
        "expected_K_mass": mass,
    }


# ---------------------------------------------------------------------------
# backward engine
# ---------------------------------------------------------------------------


class _Work:
    """Mutable arrays of one backward solve."""

    def __init__(self, c: CoefficientSet):
        N, W = c.grid.N, c.width
        self.Yr = np.zeros((N + 1, W))
        self.Yl = np.zeros((N + 1, W))
        self.Z = np.zeros((N, W))
        self.E = np.zeros((N, W))
        self.Yt = np.zeros((N, W))
        self.kpc = np.zeros((N, W))
        self.kmc = np.zeros((N, W))
        self.kpj = np.zeros((N + 1, W))
        self.kmj = np.zeros((N + 1, W))
        self.arg = np.zeros((N + 1, W))
        self.jres = np.zeros((N + 1, W))


def _jump(c: CoefficientSet, work: _Work, i: int, h, n_marks, tol: float):
    """Jump reflection at node ``i`` (``h`` active only where marked)."""
    k = np.arange(c.width)
    Y = work.Yr[i]
    active = c.h_active(i, k, n_marks) if h is not None and not is_zero(h) else np.zeros(c.width, bool)
    hx = None
    if active.any():
        def hx(cols, xx):
            return h(i, cols[:, None], xx, Y[cols][:, None])
    x, p, m, res = jump_reflect_rows(Y, hx, c.R.jumps[i], c.L.left[i], c.U.left[i], tol=tol,
                                     active=active if active.any() else None)
    hv = np.zeros(c.width)
    if active.any():
        cols = np.flatnonzero(active)
        hv[cols] = h(i, cols, x[cols], Y[cols])
    work.Yl[i] = x
    work.kpj[i] = p
    work.kmj[i] = m
    work.arg[i] = Y + hv + c.R.jumps[i]
    work.jres[i] = res


def _segment(c: CoefficientSet, backend, work: _Work, a: int, b: int, f, g, frozen, implicit,
             tol: float):
    """Fill nodes ``b-1 .. a`` from ``work.Yl[b]``; jump-reflect (without ``h``) strictly inside."""
    k = np.arange(c.width)
    dt = c.grid.dt
    for i in range(b - 1, a - 1, -1):
        fr = None if frozen is None else (frozen[0][i], frozen[1][i])
        Yt, Z, E = step_backward(backend, i, work.Yl[i + 1], f, g, dt[i], c.A.continuous[i],
                                 c.R.continuous[i], k, implicit, fr)
        work.Yt[i], work.Z[i], work.E[i] = Yt, Z, E
        work.Yr[i], work.kpc[i], work.kmc[i] = project_rows(Yt, c.L.right[i], c.U.right[i])
        if a < i:
            _jump(c, work, i, None, None, tol)


def _boundaries(c: CoefficientSet, h, n_marks) -> list[int]:
    """Nodes where ``h`` may act for the first ``n_marks`` marks (union over columns)."""
    if h is None or is_zero(h):
        return []
    N = c.grid.N
    if isinstance(c.marks, np.ndarray):
        m = np.atleast_2d(c.marks)
        m = m if n_marks is None else m[:n_marks]
        return sorted({int(v) for v in m.ravel() if 0 < v <= N})
    marks = c.marks if n_marks is None else c.marks[:n_marks]
    return sorted(int(v) for v in marks)


def _finish(c: CoefficientSet, work: _Work, extra: dict | None = None) -> Solution:
    g = c.grid
    work.Yl[0] = work.Yr[0]
    sol = Solution(
        ensemble=c.ensemble,
        Y=RcllPath(g, work.Yr, work.Yl),
        Z=work.Z,
        Kplus=FiniteVariationPath(g, work.kpc, work.kpj),
        Kminus=FiniteVariationPath(g, work.kmc, work.kmj),
        Ytilde=work.Yt,
        jump_input=work.arg,
        diagnostics=dict(extra or {}),
    )
    sol.diagnostics["fixed_point_residual"] = float(work.jres.max(initial=0.0))
    return sol


def _gap(a: np.ndarray, b: np.ndarray, valid: np.ndarray) -> float:
    return float(np.max(np.abs(np.where(valid, a - b, 0.0)), initial=0.0))


def _concatenate(c: CoefficientSet, backend, f, g, h, n_marks, method: str, implicit: bool,
                 tol: float, max_iter: int | None, jump_tol: float):
    """Segment-by-segment backward solve; returns ``(work, history)``."""
    N = c.grid.N
    valid = c.ensemble.valid
    work = _Work(c)
    work.Yr[N] = c.xi
    marks = _boundaries(c, h, n_marks)
    _jump(c, work, N, h, n_marks, jump_tol)
    cuts = [0] + [m for m in marks if m < N] + [N]
    history = []
    drivers = not (is_zero(f) and is_zero(g))
    for s in range(len(cuts) - 1, 0, -1):
        a, b = cuts[s - 1], cuts[s]
        if method == "picard" and drivers:
            budget = max_iter if max_iter is not None else (b - a) + 10
            frozen = (np.zeros_like(work.E), np.zeros_like(work.Z))
            prev = None
            gaps = []
            for it in range(1, budget + 1):
                _segment(c, backend, work, a, b, f, g, frozen, False, jump_tol)
                cur = np.vstack([work.Yr[a:b], work.Yl[a + 1:b]])
                if prev is not None:
                    vm = np.vstack([valid[a:b], valid[a + 1:b]])
                    gaps.append(_gap(cur, prev, vm))
                    if gaps[-1] <= tol:
                        break
                prev = cur.copy()
                frozen = (work.E.copy(), work.Z.copy())
            else:
                raise ConvergenceError(f"Picard did not converge on segment [{a}, {b}] within "
                                       f"{budget} iterations; last gap {gaps[-1] if gaps else float('nan'):.3e}")
            history.append({"segment": [a, b], "iterations": it, "gaps": gaps})
        else:
            _segment(c, backend, work, a, b, f, g, None, implicit, jump_tol)
            history.append({"segment": [a, b], "iterations": 1, "gaps": []})
        if a > 0:
            _jump(c, work, a, h, n_marks, jump_tol)
    return work, history


def _report(c, backend, work, regime, history, extra=None) -> SolveReport:
    sol = _finish(c, work, extra)
    rep = SolveReport(sol, regime, history)
    rep.diagnostics = _diagnose(c, sol)
    rep.diagnostics["fixed_point_residual"] = sol.diagnostics["fixed_point_residual"]
    rep.counters = {"conditional_expectations": backend.calls}
    return rep


def _backend_for(c: CoefficientSet, backend):
    if isinstance(backend, (TreeBackend, LSMCBackend)):
        if backend.ens is not c.ensemble:
            raise ValueError("backend and coefficient set use different ensembles")
        return backend
    if backend is None:
        backend = BackendSpec("tree" if c.ensemble.is_tree else "lsmc")
    return make_backend(backend, c.ensemble)


# ---------------------------------------------------------------------------
# regimes
# ---------------------------------------------------------------------------


def solve_zero_generator(c: CoefficientSet, backend=None, jump_tol: float = 1e-12) -> SolveReport:
    """Zero generators: one backward sweep of projections and jump clips.

    The terminal left value is ``L_{T-} v (xi + dR_T) ^ U_{T-}`` with the
    matching terminal pushes.
    """
    if not (is_zero(c.f) and is_zero(c.g) and is_zero(c.h)):
        raise AdmissibilityError("solve_zero_generator needs f = g = h = 0")
    be = _backend_for(c, backend)
    work, hist = _concatenate(c, be, c.f, c.g, None, None, "direct", False, 0.0, None, jump_tol)
    return _report(c, be, work, "zero", hist)


def solve_lipschitz_picard(c: CoefficientSet, backend=None, max_iter: int | None = None,
                           tol: float = 1e-12, implicit: bool = False,
                           jump_tol: float = 1e-12) -> SolveReport:
    """Picard iteration with frozen generator arguments (``h = 0``).

    Iterate ``n`` freezes ``f`` and ``g`` at the conditional expectation and
    ``Z`` of iterate ``n - 1`` (starting from zero) and solves the
    resulting zero-generator problem with drift.  On an ``N``-step grid the
    iteration is exact after at most ``N + 1`` steps.
    """
    if not is_zero(c.h):
        raise AdmissibilityError("Picard regime needs h = 0; use solve_concatenated")
    if c.lipschitz is None and not (is_zero(c.f) and is_zero(c.g)):
        raise AdmissibilityError("Picard regime needs declared Lipschitz constants")
    be = _backend_for(c, backend)
    work, hist = _concatenate(c, be, c.f, c.g, None, None, "picard", implicit, tol, max_iter, jump_tol)
    rep = _report(c, be, work, "picard", hist)
    gaps = hist[0]["gaps"] if hist else []
    rep.diagnostics["picard_iterations"] = hist[0]["iterations"] if hist else 0
    rep.diagnostics["picard_gap_ratios"] = [b / a for a, b in zip(gaps, gaps[1:]) if a > 0]
    return rep


def solve_concatenated(c: CoefficientSet, backend=None, method: str = "picard", level=None,
                       tol: float = 1e-12, max_iter: int | None = None, implicit: bool = False,
                       jump_tol: float = 1e-12) -> SolveReport:
    """Solve between consecutive marks and glue with the maximal fixed point.

    With ``level`` (a :class:`LadderLevel`) the level generators and the
    first ``level.n`` marks are used instead of ``c``'s own data.
    """
    if level is None:
        f, g, h, n_marks = c.f, c.g, c.h, None
        if c.lipschitz is None and not (is_zero(c.f) and is_zero(c.g)):
            raise AdmissibilityError("concatenation needs declared Lipschitz constants")
    else:
        f, g, h, n_marks = level.f_n, level.g_n, c.h, level.n
    be = _backend_for(c, backend)
    work, hist = _concatenate(c, be, f, g, h, n_marks, method, implicit, tol, max_iter, jump_tol)
    rep = _report(c, be, work, "concatenated", hist)
    rep.diagnostics["marks"] = _boundaries(c, h, n_marks)
    return rep


def solve_general(c: CoefficientSet, backend=None, N_max: int = 6, tol: float = 1e-10,
                  enforce_order: bool = True, min_levels: int | None = None,
                  mono_tol: float | None = None, raw: bool = False,
                  grid_points: int = 64, method: str = "direct") -> SolveReport:
    """Monotone ladder of Lipschitz approximations.

    Level ``n`` uses sup-convolutions ``f_n``, ``g_n`` and the first ``n``
    marks of ``h``; levels must decrease.  Stops once ``n`` covers every
    mark and the sup-norm decrement is at most ``tol``.  The returned
    solution is the last level, with its own reflecting measures.  Levels
    are solved by one explicit sweep per segment (``method='direct'``),
    which is the limit of the frozen-argument Picard iteration.
    """
    from .approx import build_level

    if not raw and not c.in_box:
        raise AdmissibilityError("barriers leave the [-1, 1] box; rescale or pass raw=True")
    if float(c.A.values()[-1].max()) > 1.0 + 1e-12:
        raise AdmissibilityError("A_T must be at most 1")
    be = _backend_for(c, backend)
    if mono_tol is None:
        mono_tol = 1e-10 if be.kind == "tree" else 5.0 / np.sqrt(c.width)
    n_marks_total = len(_boundaries(c, c.h, None)) if not isinstance(c.marks, np.ndarray) \
        else np.atleast_2d(c.marks).shape[0]
    if min_levels is None:
        min_levels = n_marks_total
    valid = c.ensemble.valid
    history = []
    prev = None
    rep = None
    levels = []
    for n in range(N_max + 1):
        level = build_level(c, n, enforce_order, grid_points)
        rep = solve_concatenated(c, be, method, level)
        _check_h_sign(c, rep.solution, n)
        Y = rep.solution.Y
        row = {"n": n, "Y0": rep.Y0, "sup_gap": None, "monotone": True, "max_increase": 0.0}
        if prev is not None:
            inc = max(float(np.max(np.where(valid, Y.right - prev.right, -np.inf))),
                      float(np.max(np.where(valid, Y.left - prev.left, -np.inf))))
            gap = max(_gap(Y.right, prev.right, valid), _gap(Y.left, prev.left, valid))
            row.update(sup_gap=gap, max_increase=max(inc, 0.0), monotone=bool(inc <= mono_tol))
            history.append(row)
            levels.append(rep)
            if inc > mono_tol:
                raise MonotonicityError(f"level {n} exceeds level {n - 1} by {inc:.3e} "
                                        f"(budget {mono_tol:.1e})")
            if n >= min_levels and gap <= tol:
                break
        else:
            history.append(row)
            levels.append(rep)
        prev = Y
    out = SolveReport(rep.solution, "general", history, rep.diagnostics, rep.counters)
    out.levels = levels
    out.diagnostics["levels_used"] = history[-1]["n"]
    out.diagnostics["ladder_monotone"] = all(r["monotone"] for r in history)
    gaps = [r["sup_gap"] for r in history if r["sup_gap"] is not None]
    out.diagnostics["sup_gaps_nonincreasing"] = all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    return out


def _check_h_sign(c: CoefficientSet, sol: Solution, n: int):
    """The ladder needs ``h <= 0`` where it acts (evaluated along the solution)."""
    if is_zero(c.h):
        return
    for i in _boundaries(c, c.h, n):
        k = np.arange(c.width)
        act = c.h_active(i, k, n)
        if act.any():
            hv = c.h(i, k[act], sol.Y.left[i][act], sol.Y.right[i][act])
            if np.any(np.asarray(hv) > 0):
                raise AdmissibilityError(f"jump coefficient is positive at node {i}; the ladder needs h <= 0")


def solve(c: CoefficientSet, backend=None, regime: str = "auto", **kw) -> SolveReport:
    """Dispatch to a regime; ``auto`` picks the simplest one that applies."""
    if regime == "auto":
        if is_zero(c.f) and is_zero(c.g) and is_zero(c.h):
            regime = "zero"
        elif c.lipschitz is not None:
            regime = "picard" if is_zero(c.h) else "concatenated"
        else:
            regime = "general"
    fn = {"zero": solve_zero_generator, "picard": solve_lipschitz_picard,
          "concatenated": solve_concatenated, "general": solve_general}.get(regime)
    if fn is None:
        raise ValueError(f"unknown regime {regime!r}")
    return fn(c, backend, **kw)


# ---------------------------------------------------------------------------
# affine rescale into the [-1, 1] box
# ---------------------------------------------------------------------------


@dataclass
class Rescale:
    """``Y = kappa * Y' + S`` and its inverse on solutions."""

    kappa: float
    S: RcllPath
    gamma: np.ndarray

    def undo(self, sol: Solution) -> Solution:
        k = self.kappa
        Y = RcllPath(sol.grid, k * sol.Y.right + self.S.right, k * sol.Y.left + self.S.left)
        return Solution(sol.ensemble, Y, k * sol.Z + self.gamma[:-1], sol.Kplus.scaled(k),
                        sol.Kminus.scaled(k),
                        None if sol.Ytilde is None else k * sol.Ytilde + self.S.right[:-1],
                        None if sol.jump_input is None else k * sol.jump_input + self.S.left,
                        dict(sol.diagnostics, rescaled=True, kappa=k))


def _drift_of(c: CoefficientSet, S: RcllPath) -> FiniteVariationPath:
    """Finite-variation part of the witness: ``S - S0 - int gamma dB``."""
    from .core import semimartingale

    gam = c.gamma
    if c.ensemble.is_tree:
        gam = float(gam[0, 0])
    mart = semimartingale(c.ensemble, 0.0, None, gam)
    return FiniteVariationPath.from_values(c.grid, S.right - mart.right - S.right[0],
                                           S.left - mart.left - S.right[0])


def rescale_to_box(c: CoefficientSet, tol: float = 1e-12) -> tuple[CoefficientSet, Rescale]:
    """Affine map ``Y' = (Y - S) / kappa`` putting the barriers in ``[-1, 0] x [0, 1]``.

    ``S`` is the coefficient set's witness (zero if none); ``kappa`` is the
    largest distance from ``S`` to a barrier.  On the tree the discrete
    scheme commutes exactly with this map; under regression it holds up to
    the projection of ``S`` on the basis.
    """
    ens = c.ensemble
    W = c.width
    g = c.grid
    S = c.S if c.S is not None else RcllPath(g, np.zeros((g.N + 1, W)))
    v = ens.valid
    lo = np.concatenate([(c.L.right - S.right)[v], (c.L.left - S.left)[v]])
    hi = np.concatenate([(c.U.right - S.right)[v], (c.U.left - S.left)[v]])
    if lo.max() > tol or hi.min() < -tol:
        raise AdmissibilityError("the witness S does not lie between the barriers; "
                                 "no admissible rescale")
    kappa = float(max(-lo.min(), hi.max(), 1e-300))
    V = c.V.on(W) if c.V is not None else _drift_of(c, S)
    Sr, Sl, gam = S.right, S.left, c.gamma
    vc = V.continuous
    f0, g0, h0 = c.f, c.g, c.h

    def at(i, k, arr):
        return arr[i, k]

    if is_zero(f0):
        f1 = f0
    else:
        def f1(i, k, y, z):
            base = at(i, k, Sr) + at(i, k, vc)
            return f0(i, k, kappa * y + base, kappa * z + at(i, k, gam)) / kappa
        f1.depends_on_z = getattr(f0, "depends_on_z", True)
    if is_zero(g0):
        g1 = g0
    else:
        def g1(i, k, y):
            return g0(i, k, kappa * y + at(i, k, Sr) + at(i, k, vc)) / kappa
    if is_zero(h0):
        h1 = h0
    else:
        def h1(i, k, x, y):
            return h0(i, k, kappa * x + at(i, k, Sl), kappa * y + at(i, k, Sr)) / kappa
    R1 = (c.R + V).scaled(1.0 / kappa)
    c1 = dataclasses.replace(
        c,
        xi=(c.xi - Sr[-1]) / kappa,
        L=RcllPath(g, (c.L.right - Sr) / kappa, (c.L.left - Sl) / kappa),
        U=RcllPath(g, (c.U.right - Sr) / kappa, (c.U.left - Sl) / kappa),
        f=f1, g=g1, h=h1, R=R1, S=None, V=None,
        gamma=np.zeros_like(c.gamma),
        eta=c.eta / kappa, C=c.C * kappa, beta=c.beta / kappa, l=c.l / kappa,
        meta=dict(c.meta, rescaled_from=c.name, kappa=kappa),
    )
    L1, U1 = c1.L.right.copy(), c1.U.right.copy()
    L1[-1] = U1[-1] = c1.xi
    c1 = dataclasses.replace(c1, L=RcllPath(g, L1, c1.L.left), U=RcllPath(g, U1, c1.U.left))
    return c1, Rescale(kappa, S, c.gamma)


# ---------------------------------------------------------------------------
# Dynkin game oracle
# ---------------------------------------------------------------------------

_ENUM_BUDGET = 5e7


def _stages(c: CoefficientSet) -> list[tuple[int, str]]:
    """Decision stages ``(node, 'left' | 'right')`` in time order; the last is terminal."""
    N = c.grid.N
    v = c.ensemble.valid
    out = [(0, "right")]
    for i in range(1, N + 1):
        jumpy = (np.any((c.L.left[i] != c.L.right[i]) & v[i]) or np.any((c.U.left[i] != c.U.right[i]) & v[i])
                 or np.any((c.R.jumps[i] != 0) & v[i]))
        if jumpy or i == N:
            out.append((i, "left"))
        if i < N:
            out.append((i, "right"))
    out.append((N, "terminal"))
    return out


def dynkin_value_bruteforce(c: CoefficientSet, max_depth: int = 6, method: str = "auto") -> float:
    """Value of the discrete Dynkin game, by exhaustive search on the non-recombining tree.

    The maximiser stops at ``L`` and the minimiser at ``U`` (simultaneous
    stops pay ``L``); the payoff adds every ``R`` increment crossed before
    stopping, and ``xi`` is paid if nobody stops.  ``method='enumerate'``
    evaluates every pair of pure stopping rules; ``'tree'`` solves the game
    stage by stage on all ``2^N`` histories, checking that the pure max-min
    and min-max agree.  ``auto`` enumerates whenever that is affordable.
    """
    ens = c.ensemble
    if not ens.is_tree:
        raise ValueError("the Dynkin oracle needs a tree ensemble")
    if not (is_zero(c.f) and is_zero(c.g) and is_zero(c.h)):
        raise AdmissibilityError("the Dynkin oracle needs zero generators")
    N = c.grid.N
    if N > max_depth or N > 6:
        raise ValueError(f"depth {N} exceeds the oracle limit of {min(max_depth, 6)}")
    stages = _stages(c)
    P = 2 ** N
    bits = (np.arange(P)[:, None] >> (N - 1 - np.arange(N))[None, :]) & 1  # move at step i
    state = np.zeros((P, N + 1), dtype=int)
    state[:, 1:] = np.cumsum(bits, axis=1)
    S = len(stages)
    acc = np.zeros((P, S))
    lo = np.zeros((P, S))
    hi = np.zeros((P, S))
    run = np.zeros(P)
    prev_node = 0
    prev_kind = None
    for s, (i, kind) in enumerate(stages):
        if prev_kind is not None:
            if kind == "left" or (kind == "right" and prev_kind == "right"):
                # crossing interval prev_node -> i, then possibly the jump at i
                run = run + c.R.continuous[prev_node, state[:, prev_node]]
                if kind == "right":
                    run = run + c.R.jumps[i, state[:, i]]
            elif kind == "right" and prev_kind == "left":
                run = run + c.R.jumps[i, state[:, i]]
            elif kind == "terminal" and prev_kind == "left":
                run = run + c.R.jumps[i, state[:, i]]
        acc[:, s] = run
        j = state[:, i]
        if kind == "right":
            lo[:, s], hi[:, s] = c.L.right[i, j], c.U.right[i, j]
        elif kind == "left":
            lo[:, s], hi[:, s] = c.L.left[i, j], c.U.left[i, j]
        else:
            lo[:, s] = hi[:, s] = c.xi[j]
        prev_node, prev_kind = i, kind
    pay_lo = acc + lo
    pay_hi = acc + hi

    n_rules = _count_rules(stages, N)
    if method == "auto":
        method = "enumerate" if float(n_rules) ** 2 * P <= _ENUM_BUDGET else "tree"
    if method == "enumerate":
        if float(n_rules) ** 2 * P > _ENUM_BUDGET:
            raise ValueError(f"{n_rules} stopping rules per player: too many to enumerate")
        return _enumerate(stages, N, pay_lo, pay_hi)
    if method == "tree":
        return _game_tree(stages, N, pay_lo, pay_hi)
    raise ValueError(f"unknown method {method!r}")


def _count_rules(stages, N) -> int:
    count = 1
    for s in range(len(stages) - 2, -1, -1):
        i, kind = stages[s]
        nxt = stages[s + 1]
        branching = kind == "right" and nxt[0] == i + 1
        count = 1 + (count * count if branching else count)
    return count


def _rules(stages, N, s: int, block: int) -> list[np.ndarray]:
    """All stopping rules from stage ``s`` on a block of ``block`` paths."""
    i, kind = stages[s]
    if kind == "terminal":
        return [np.full(block, s)]
    nxt = stages[s + 1]
    stop = [np.full(block, s)]
    if kind == "right" and nxt[0] == i + 1:
        sub = _rules(stages, N, s + 1, block // 2)
        return stop + [np.concatenate([a, b]) for a in sub for b in sub]
    return stop + _rules(stages, N, s + 1, block)


def _enumerate(stages, N, pay_lo, pay_hi) -> float:
    P = pay_lo.shape[0]
    rules = np.array(_rules(stages, N, 0, P))  # (n_rules, P)
    rows = np.arange(P)
    vlo = pay_lo[rows[None, :], rules]  # maximiser stopping payoffs
    vhi = pay_hi[rows[None, :], rules]
    n = rules.shape[0]
    payoff = np.empty((n, n))
    for a in range(n):
        tau = rules[a]
        payoff[a] = np.where(tau[None, :] <= rules, vlo[a][None, :], vhi).mean(axis=1)
    maxmin = float(payoff.min(axis=1).max())
    minmax = float(payoff.max(axis=0).min())
    if abs(maxmin - minmax) > 1e-12 * max(1.0, abs(maxmin)):
        raise RuntimeError(f"no pure saddle point: maxmin {maxmin} != minmax {minmax}")
    return maxmin


def _game_tree(stages, N, pay_lo, pay_hi) -> float:
    P = pay_lo.shape[0]
    S = len(stages)
    val = pay_lo[:, S - 1].copy()  # terminal payoff per path (lo == hi there)
    for s in range(S - 2, -1, -1):
        i, kind = stages[s]
        nxt = stages[s + 1]
        if kind == "right" and nxt[0] == i + 1:
            # average the two children: paths sharing the first i moves form blocks of 2^(N-i)
            blk = 2 ** (N - i)
            v = val.reshape(-1, blk)
            cont = np.repeat(v.mean(axis=1), blk)
        else:
            cont = val
        L, U = pay_lo[:, s], pay_hi[:, s]
        maxmin = np.maximum(L, np.minimum(U, cont))
        minmax = np.minimum(np.maximum(L, U), np.maximum(L, cont))
        if np.any(np.abs(maxmin - minmax) > 1e-12):
            raise RuntimeError(f"stage game without pure saddle at stage {s}")
        val = maxmin
    return float(val.mean())
