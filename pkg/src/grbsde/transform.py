"""Exponential change of variables mapping general data to bounded data.

With the dominating process ``m`` built from the witnesses, barred values
are ``xbar = exp(m (x - S - m)) - exp(-m^2)``.  Barred values are of order
``exp(-m^2)`` (``m >= 4``), so every formula below is written to avoid
subtracting two such numbers: ``xbar = exp(-m^2) * expm1(m (x - S))`` and
the inverse ``x = log1p(xbar * exp(m^2)) / m + S``.  Internally a barred
state is carried as the pair (original value, ``w = xbar + exp(-m^2)``).

Terms such as ``exp(3 m^2) dm`` overflow float64 once ``m > 15.4``; the
jump part of ``Rbar`` is therefore stored through its logarithm, and bound
margins that involve these factors are evaluated in a cancellation-free
form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AdmissibilityError, CoefficientSet, FiniteVariationPath, RcllPath, Solution, is_zero

__all__ = [
    "TransformError",
    "TransformContext",
    "TransformedSet",
    "build_m",
    "forward_transform",
    "forward_map_solution",
    "inverse_transform",
    "verify_bounds",
    "BoundReport",
]


M_MAX = float(np.sqrt(np.log(np.finfo(float).max)))


class TransformError(ValueError):
    """Ill-posed transform input (density x/0, log of a nonpositive number)."""


def _ratio(num, den, what):
    """Increment ratio with ``0/0 -> 0`` and a hard error for ``x/0``."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    num, den = np.broadcast_arrays(num, den)
    zero = den == 0
    if np.any(zero & (num != 0)):
        i = np.argwhere(zero & (num != 0))[0]
        raise TransformError(f"{what}: nonzero increment against a null Abar increment at interval {tuple(i)}")
    out = np.zeros(num.shape)
    np.divide(num, den, out=out, where=~zero)
    return out


@dataclass(eq=False)
class TransformContext:
    """Dominating process ``m`` and the derived ``eta_bar``, ``Abar``, ``Rbar``.

    Arrays are ``(N + 1, W)`` node arrays or ``(N, W)`` interval arrays.
    ``Rbar`` holds only the continuous part; its jumps are
    ``exp(log_Rbar_jump)`` (``-inf`` where ``m`` does not jump).
    """

    coeffs: CoefficientSet
    m: FiniteVariationPath
    m_right: np.ndarray
    m_left: np.ndarray
    S: RcllPath
    eta_bar: np.ndarray
    int_eta_bar: np.ndarray
    Abar: FiniteVariationPath
    Rbar: FiniteVariationPath
    log_Rbar_jump: np.ndarray
    dA_dAbar: np.ndarray
    dVc_dAbar: np.ndarray
    dmc_dAbar: np.ndarray

    @property
    def grid(self):
        return self.coeffs.grid

    @property
    def Abar_T(self) -> np.ndarray:
        return self.Abar.continuous.sum(axis=0)

    @property
    def int_eta_bar_T(self) -> np.ndarray:
        return self.int_eta_bar.sum(axis=0)


def _state_free(ens, arr, what):
    """On a tree, path functionals are only node functions for state-free inputs."""
    if not ens.is_tree:
        return
    a = np.asarray(arr)
    if a.ndim < 2:
        return
    rows = a.shape[0]
    valid = ens.valid[:rows]
    first = a[:, :1]
    if np.any((np.abs(a - first) > 0) & valid):
        raise AdmissibilityError(f"{what} varies across tree states; the running sup in m is then "
                                 "path dependent (use monte_carlo mode)")


def build_m(c: CoefficientSet, grid=None) -> TransformContext:
    """Construct ``m``, ``eta_bar``, ``Abar`` and ``Rbar`` on the ensemble.

    Continuous increments of ``m`` over ``(t_i, t_{i+1}]`` collect the
    integral terms (integrands frozen at ``t_i``), the growth of the running
    supremum through the next left limit, and ``|dV^c|``; jumps collect the
    remaining growth of the supremum, ``|dV|`` at the node and ``l``.
    """
    if grid is not None and not grid.same_as(c.grid):
        raise AdmissibilityError("context grid differs from the coefficient grid")
    if c.S is None:
        raise AdmissibilityError("the transform needs the semimartingale witness S")
    c.check_witness()
    ens = c.ensemble
    g = c.grid
    W = c.width
    N = g.N
    dt = g.dt[:, None]
    absC = np.abs(c.C)
    Qr = np.abs(c.U.right) + absC + np.abs(c.L.right)
    Ql = np.abs(c.U.left) + absC + np.abs(c.L.left)
    V = FiniteVariationPath.zeros(g, W) if c.V is None else c.V.on(W)
    for arr, what in ((Qr, "barriers/C"), (Ql, "barriers/C"), (V.continuous, "V"), (V.jumps, "V"),
                      (c.l, "l"), (c.eta, "eta"), (c.gamma, "gamma"), (c.beta, "beta"),
                      (c.A.continuous, "A")):
        _state_free(ens, arr, what)
    for arr, what in ((Qr, "barriers"), (Ql, "barriers"), (c.eta, "eta"), (c.gamma, "gamma"),
                      (c.beta, "beta"), (c.l, "l")):
        if not np.all(np.isfinite(arr)):
            raise AdmissibilityError(f"{what} must be finite on the grid")
    if np.any(c.eta < 0) or np.any(c.beta < 0) or np.any(c.l < 0) or np.any(c.C < 0):
        raise AdmissibilityError("witnesses eta, C, beta, l must be nonnegative")

    run = np.empty((N + 1, W))
    run_left = np.empty((N + 1, W))
    run[0] = run_left[0] = Qr[0]
    for i in range(1, N + 1):
        run_left[i] = np.maximum(run[i - 1], Ql[i])
        run[i] = np.maximum(run_left[i], Qr[i])
    eg = c.eta + c.gamma ** 2
    cont = 4.0 * ((run_left[1:] - run[:-1]) + np.abs(V.continuous)
                  + (1.0 + eg[:-1]) * dt + (1.0 + c.beta[:-1]) * c.A.continuous)
    jump = np.zeros((N + 1, W))
    # l bounds |h|, which only acts at the marks
    nodes = np.arange(N + 1)[:, None]
    l_eff = np.where(c.h_active(nodes, np.arange(W)[None, :]), c.l, 0.0)
    jump[1:] = 4.0 * ((run[1:] - run_left[1:]) + np.abs(V.jumps[1:]) + l_eff[1:])
    m0 = 4.0 * (run[0] + 1.0)
    m = FiniteVariationPath(g, cont, jump)
    m_right = m0 + m.values()
    m_left = m_right - jump
    top = float(m_right[ens.valid].max())
    if top > M_MAX:
        raise TransformError(f"m reaches {top:.3g}; exp(m^2) overflows double precision beyond m = {M_MAX:.3g}")

    em = np.exp(-m_right[:-1])
    dAbar = 2.0 * em * (-np.expm1(-cont))
    # eta_bar integrated exactly with m interpolated linearly inside each interval
    shrink = np.where(cont > 0, -np.expm1(-cont) / np.where(cont > 0, cont, 1.0), 1.0)
    int_eta = 2.0 * eg[:-1] * dt * em * shrink
    eta_bar = 2.0 * np.exp(-m_right) * eg
    Abar = FiniteVariationPath(g, dAbar)
    Rbar = FiniteVariationPath(g, 0.5 * dAbar + 0.5 * int_eta)
    with np.errstate(divide="ignore"):
        log_jump = np.where(jump > 0, 3.0 * m_right ** 2 + np.log(np.where(jump > 0, jump, 1.0)), -np.inf)
    return TransformContext(
        coeffs=c, m=m, m_right=m_right, m_left=m_left, S=c.S.on(W), eta_bar=eta_bar,
        int_eta_bar=int_eta, Abar=Abar, Rbar=Rbar, log_Rbar_jump=log_jump,
        dA_dAbar=_ratio(c.A.continuous, dAbar, "dA/dAbar"),
        dVc_dAbar=_ratio(V.continuous, dAbar, "dV^c/dAbar"),
        dmc_dAbar=_ratio(cont, dAbar, "dm^c/dAbar"),
    )


def _bar(x, S, m):
    """``exp(m (x - S - m)) - exp(-m^2)`` without cancellation."""
    return np.exp(-m * m) * np.expm1(m * (x - S))


@dataclass(eq=False)
class TransformedSet:
    """Barred data with vectorised coefficient evaluators.

    Evaluators take a node index ``i``, column indices ``k`` and barred
    arguments, all broadcasting together.  ``fbar`` / ``gbar`` use the
    interval starting at node ``i`` (``i < N``); ``hbar`` is defined at
    nodes ``i >= 1`` and is zero away from the jump-coefficient marks.
    """

    ctx: TransformContext
    xibar: np.ndarray
    Lbar: RcllPath
    Ubar: RcllPath
    meta: dict = field(default_factory=dict)

    @property
    def coeffs(self) -> CoefficientSet:
        return self.ctx.coeffs

    # barred state -> (original value, w, log w)
    def _state(self, i, k, ybar, left=False):
        c = self.coeffs
        m = (self.ctx.m_left if left else self.ctx.m_right)[i, k]
        S = (self.ctx.S.left if left else self.ctx.S.right)[i, k]
        L = (c.L.left if left else c.L.right)[i, k]
        U = (c.U.left if left else c.U.right)[i, k]
        Lb = (self.Lbar.left if left else self.Lbar.right)[i, k]
        Ub = (self.Ubar.left if left else self.Ubar.right)[i, k]
        ybar = np.asarray(ybar, dtype=float)
        m, S, L, U, Lb, Ub, ybar = np.broadcast_arrays(m, S, L, U, Lb, Ub, ybar)
        lo, hi = ybar <= Lb, ybar >= Ub
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.log1p(np.clip(ybar, Lb, Ub) * np.exp(m * m)) / m
        Y = np.where(lo, L, np.where(hi, U, u + S))
        logw = m * (Y - S - m)
        return Y, np.exp(logw), logw, m, S

    def ftilde(self, i, k, ybar, zbar):
        c = self.coeffs
        Y, w, _, m, _ = self._state(i, k, ybar)
        gam = c.gamma[i, k]
        zbar = np.asarray(zbar, dtype=float)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            z = zbar / (m * w) + gam
            fv = c.f(i, k, Y, z)
            out = m * w * fv - zbar ** 2 / (2.0 * w)
        return out

    def fbar(self, i, k, ybar, zbar):
        return self.ftilde(i, k, ybar, zbar) - 0.5 * self.ctx.eta_bar[i, k]

    def gtilde(self, i, k, ybar):
        c, x = self.coeffs, self.ctx
        Y, w, logw, m, S = self._state(i, k, ybar)
        rA, rV, rm = x.dA_dAbar[i, k], x.dVc_dAbar[i, k], x.dmc_dAbar[i, k]
        gv = c.g(i, k, Y)
        return (m * w * (gv * rA + rV + rm) - 2.0 * m * np.exp(-m * m) * rm
                - w * (logw / m) * rm)

    def gbar(self, i, k, ybar):
        return self.gtilde(i, k, ybar) - 0.5

    def _log_hh(self, i, k, xbar, ybar):
        """``log`` of the double-barred jump term and ``log w_y``."""
        c = self.coeffs
        X, _, _, _, _ = self._state(i, k, xbar, left=True)
        Y, w, logw, _, _ = self._state(i, k, ybar)
        mm = self.ctx.m_left[i, k]
        Sm = self.ctx.S.left[i, k]
        active = c.h_active(i, k)
        hv = np.where(active, c.h(i, k, X, Y), 0.0)
        return mm * (Y + hv - Sm - mm), logw, w

    def htilde(self, i, k, xbar, ybar):
        lhh, logw, w = self._log_hh(i, k, xbar, ybar)
        m, mm = self.ctx.m_right[i, k], self.ctx.m_left[i, k]
        return np.exp(lhh) - w + (np.exp(-m * m) - np.exp(-mm * mm))

    def hbar(self, i, k, xbar, ybar):
        with np.errstate(over="ignore"):
            dm = self.ctx.m.jumps[i, k]
            big = np.where(dm > 0, np.exp(np.where(dm > 0, self.ctx.log_Rbar_jump[i, k], 0.0)), 0.0)
        return self.htilde(i, k, xbar, ybar) - big


def forward_transform(c: CoefficientSet, ctx: TransformContext) -> TransformedSet:
    """Barred terminal value, barriers and coefficient evaluators."""
    if ctx.coeffs is not c:
        raise AdmissibilityError("context was built for a different coefficient set")
    if np.any(c.R.continuous != 0) or np.any(c.R.jumps != 0):
        raise AdmissibilityError("the exponential transform applies to data with R = 0")
    S, mr, ml = ctx.S, ctx.m_right, ctx.m_left
    Lbar = RcllPath(c.grid, _bar(c.L.right, S.right, mr), _bar(c.L.left, S.left, ml))
    Ubar = RcllPath(c.grid, _bar(c.U.right, S.right, mr), _bar(c.U.left, S.left, ml))
    xibar = _bar(c.xi, S.right[-1], mr[-1])
    return TransformedSet(ctx, xibar, Lbar, Ubar)


def _h_rows(c: CoefficientSet, i, Yl, Yr):
    """Active jump coefficient at node ``i`` along full rows."""
    k = np.arange(c.width)
    act = c.h_mask(i)
    if not act.any():
        return np.zeros(c.width)
    return np.where(act, c.h(i, k, Yl, Yr), 0.0)


def forward_map_solution(sol: Solution, ctx: TransformContext) -> Solution:
    """Map an original-scale solution to barred coordinates."""
    c = ctx.coeffs
    S, mr, ml = ctx.S, ctx.m_right, ctx.m_left
    Y = sol.Y
    Yb = RcllPath(c.grid, _bar(Y.right, S.right, mr), _bar(Y.left, S.left, ml))
    w = np.exp(mr * (Y.right - S.right - mr))
    Zb = mr[:-1] * w[:-1] * (sol.Z - c.gamma[:-1])
    Kp_c = mr[:-1] * w[:-1] * sol.Kplus.continuous
    Km_c = mr[:-1] * w[:-1] * sol.Kminus.continuous
    jp = np.zeros_like(Y.right)
    jm = np.zeros_like(Y.right)
    for i in range(1, c.grid.N + 1):
        hv = _h_rows(c, i, Y.left[i], Y.right[i])
        hh = np.exp(ml[i] * (Y.right[i] + hv - S.left[i] - ml[i]))
        jp[i] = np.maximum(np.exp(ml[i] * (c.L.left[i] - S.left[i] - ml[i])) - hh, 0.0)
        jm[i] = np.maximum(hh - np.exp(ml[i] * (c.U.left[i] - S.left[i] - ml[i])), 0.0)
    return Solution(sol.ensemble, Yb, Zb, FiniteVariationPath(c.grid, Kp_c, jp),
                    FiniteVariationPath(c.grid, Km_c, jm), diagnostics={"barred": True})


def _unbar(xbar, S, m):
    u = xbar * np.exp(m * m)
    if np.any(u <= -1):
        raise TransformError("barred value at or below -exp(-m^2): the barred solution left its barrier")
    return np.log1p(u) / m + S, -m * m + np.log1p(u)


def inverse_transform(barred_solution: Solution, ctx: TransformContext) -> Solution:
    """Map a barred solution back to the original scale.

    ``K`` continuous parts are divided by ``m w``; jump parts are rebuilt
    from the original jump identities.
    """
    c = ctx.coeffs
    S, mr, ml = ctx.S, ctx.m_right, ctx.m_left
    Yb = barred_solution.Y
    Yr, logw = _unbar(Yb.right, S.right, mr)
    Yl, _ = _unbar(Yb.left, S.left, ml)
    scale = mr[:-1] * np.exp(logw[:-1])
    Z = barred_solution.Z / scale + c.gamma[:-1]
    Kp_c = barred_solution.Kplus.continuous / scale
    Km_c = barred_solution.Kminus.continuous / scale
    jp = np.zeros_like(Yr)
    jm = np.zeros_like(Yr)
    for i in range(1, c.grid.N + 1):
        arg = Yr[i] + _h_rows(c, i, Yl[i], Yr[i]) + c.R.jumps[i]
        jp[i] = np.maximum(c.L.left[i] - arg, 0.0)
        jm[i] = np.maximum(arg - c.U.left[i], 0.0)
    return Solution(barred_solution.ensemble, RcllPath(c.grid, Yr, Yl), Z,
                    FiniteVariationPath(c.grid, Kp_c, jp), FiniteVariationPath(c.grid, Km_c, jm))


# ---------------------------------------------------------------------------
# bound verification
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    records: list
    passed: bool

    def as_dict(self) -> dict:
        return {"passed": self.passed, "records": self.records}

    def margin(self, ident: str) -> float:
        for r in self.records:
            if r["id"] == ident:
                return r["worst_margin"]
        raise KeyError(ident)


def _record(ident, margin, scale, where, abs_tol, rel_tol):
    margin = np.asarray(margin, dtype=float)
    scale = np.asarray(scale, dtype=float)
    margin, scale = np.broadcast_arrays(margin, scale)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(np.isinf(margin), np.sign(margin),
                       margin / np.where(scale > 0, scale, 1.0))
    bad = np.isnan(margin)
    key = np.where(bad, -np.inf, margin)
    j = int(np.argmin(key)) if margin.size else 0
    worst = float(margin.flat[j]) if margin.size else 0.0
    worst_rel = float(np.nanmin(rel)) if margin.size else 0.0
    ok = (not bad.any()) and worst >= -abs_tol and worst_rel >= -rel_tol
    wit = {k: (v.flat[j].item() if isinstance(v, np.ndarray) else v) for k, v in where.items()} if margin.size else {}
    return {"id": ident, "worst_margin": worst, "worst_relative": worst_rel,
            "passed": bool(ok), "witness": wit}


def verify_bounds(ts: TransformedSet, ctx: TransformContext | None = None, samples: int = 10_000,
                  seed: int = 0, y_margin: float = 0.5, z_box=(-10.0, 10.0),
                  abs_tol: float = 1e-12, rel_tol: float = 1e-9) -> BoundReport:
    """Sample ``(s, y, z)`` and report the worst margin of each bound.

    States are drawn on the original scale, up to ``y_margin`` outside the
    barriers (so the clipping is exercised), with ``z`` in ``z_box``, and
    mapped to barred coordinates; raw barred draws would sit astronomically
    far from any reachable barred state.

    A bound ``a <= b`` has margin ``b - a``.  Besides the absolute margin a
    relative one (margin over ``|a| + |b|``) is reported, since barred
    quantities are tiny and an absolute tolerance alone is uninformative.
    """
    ctx = ts.ctx if ctx is None else ctx
    c = ts.coeffs
    ens = c.ensemble
    N, W = c.grid.N, c.width
    rng = np.random.default_rng(seed)
    recs = []

    def add(ident, margin, scale, where):
        recs.append(_record(ident, margin, scale, where, abs_tol, rel_tol))

    # nodes and columns: only reachable tree states
    valid = ens.valid

    def to_bar(i, k, n, left):
        """Original-scale states up to ``y_margin`` outside the barriers, and their barred images."""
        P = "left" if left else "right"
        lo = getattr(c.L, P)[i, k] - y_margin
        hi = getattr(c.U, P)[i, k] + y_margin
        yo = lo + (hi - lo) * rng.random(n)
        mm = (ctx.m_left if left else ctx.m_right)[i, k]
        return _bar(yo, getattr(ctx.S, P)[i, k], mm), yo

    def draw_nodes(lo, hi, n):
        i = rng.integers(lo, hi, n)
        k = rng.integers(0, W, n)
        if ens.is_tree:
            k = np.minimum(k, i)
        return i, k

    i, k = draw_nodes(0, N, samples)
    y, yo = to_bar(i, k, samples, left=False)
    zo = rng.uniform(*z_box, samples)
    z = ctx.m_right[i, k] * np.exp(ctx.m_right[i, k] * (np.clip(yo, c.L.right[i, k], c.U.right[i, k])
                                                       - ctx.S.right[i, k] - ctx.m_right[i, k])) \
        * (zo - c.gamma[i, k])
    fb = ts.fbar(i, k, y, z)
    eb = ctx.eta_bar[i, k]
    m = ctx.m_right[i, k]
    with np.errstate(over="ignore", invalid="ignore"):
        quad = np.where(z == 0, 0.0, np.exp(2.0 * m * m) * z * z)
        low = fb + eb + quad
    low = np.where(np.isinf(quad) & ~np.isnan(fb), np.inf, low)
    add("1.lower", low, np.abs(fb) + eb + quad, {"node": i, "column": k, "y": y, "z": z})
    add("1.upper", -fb, np.abs(fb), {"node": i, "column": k, "y": y, "z": z})

    AT, IE = ctx.Abar_T, ctx.int_eta_bar_T
    add("2.eta_bar", AT - IE, AT + IE, {"column": np.arange(W)})
    add("2.Abar", 1.0 - AT, 1.0 + AT, {"column": np.arange(W)})

    gb = ts.gbar(i, k, y)
    add("3.lower", gb + 1.0, np.abs(gb) + 1.0, {"node": i, "column": k, "y": y})
    add("3.upper", -gb, np.abs(gb), {"node": i, "column": k, "y": y})

    for name, P, lo, hi in (("L", ts.Lbar, -1.0, 0.0), ("U", ts.Ubar, 0.0, 1.0)):
        for side in ("right", "left"):
            arr = getattr(P, side)
            v = valid
            ii, kk = np.nonzero(v)
            vals = arr[ii, kk]
            add(f"4.{name}.{side}.lower", vals - lo, np.abs(vals) + abs(lo), {"node": ii, "column": kk})
            add(f"4.{name}.{side}.upper", hi - vals, np.abs(vals) + abs(hi), {"node": ii, "column": kk})

    i, k = draw_nodes(1, N + 1, samples)
    x, _ = to_bar(i, k, samples, left=True)
    _, a = to_bar(i, k, samples, left=False)
    _, b = to_bar(i, k, samples, left=False)
    mr, Sr = ctx.m_right[i, k], ctx.S.right[i, k]
    y1, y2 = _bar(np.minimum(a, b), Sr, mr), _bar(np.maximum(a, b), Sr, mr)
    h1 = ts.htilde(i, k, x, y1)
    h2 = ts.htilde(i, k, x, y2)
    add("5a", (y2 - y1) + (h2 - h1), np.abs(y2) + np.abs(y1) + np.abs(h1) + np.abs(h2),
        {"node": i, "column": k, "x": x, "y1": y1, "y2": y2})

    y = y1
    lhh, logw, w = ts._log_hh(i, k, x, y)
    rel_low = np.expm1(lhh - logw)
    add("5c.lower", w * rel_low, w * (1.0 + np.exp(lhh - logw)), {"node": i, "column": k, "x": x, "y": y})
    ht = ts.htilde(i, k, x, y)
    dm = ctx.m.jumps[i, k]
    with np.errstate(over="ignore"):
        big = np.where(dm > 0, np.exp(np.where(dm > 0, ctx.log_Rbar_jump[i, k], 0.0)), 0.0)
    up = np.where(dm > 0, big - ht, -w * rel_low)
    add("5c.upper", up, big + np.abs(ht) + w * (1.0 + np.exp(lhh - logw)),
        {"node": i, "column": k, "x": x, "y": y})

    return BoundReport(recs, all(r["passed"] for r in recs))
