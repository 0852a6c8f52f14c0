"""Pointwise reflection: two-sided projection, jump reflection through the
maximal fixed point, and the minimality / singularity checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AdmissibilityError, FiniteVariationPath, RcllPath, Solution, integrate_against

__all__ = [
    "FixedPointError",
    "ProjectionResult",
    "JumpResult",
    "skorokhod_project",
    "project_rows",
    "jump_reflect",
    "jump_reflect_rows",
    "check_minimality",
    "check_singularity",
    "total_mass",
]

N_SCAN = 256
N_BISECT = 64


class FixedPointError(RuntimeError):
    """The jump-reflection map has no fixed point within tolerance."""


@dataclass(frozen=True)
class ProjectionResult:
    value: float
    dKplus: float
    dKminus: float


@dataclass(frozen=True)
class JumpResult:
    value: float
    dKplus: float
    dKminus: float
    residual: float


def skorokhod_project(ytilde: float, L: float, U: float) -> ProjectionResult:
    """Clip ``ytilde`` into ``[L, U]`` and report the pushes from each side."""
    if L > U:
        raise AdmissibilityError(f"lower barrier {L} exceeds upper barrier {U}")
    value = min(max(ytilde, L), U)
    return ProjectionResult(value, max(L - ytilde, 0.0), max(ytilde - U, 0.0))


def project_rows(ytilde, L, U):
    """Vectorised :func:`skorokhod_project`; returns ``(value, dKplus, dKminus)``."""
    ytilde = np.asarray(ytilde, dtype=float)
    value = np.minimum(np.maximum(ytilde, L), U)
    return value, np.maximum(L - ytilde, 0.0), np.maximum(ytilde - U, 0.0)


def jump_reflect_rows(Y, hx, dR, L_left, U_left, tol: float = 1e-12, n_scan: int = N_SCAN,
                      active=None):
    """Maximal fixed point of ``x -> L_left v [Y + h(x) + dR] ^ U_left``, column by column.

    ``hx`` is ``None`` (no jump coefficient) or a callable ``hx(cols, xx)``
    where ``cols`` are the active column indices and ``xx`` an array of
    candidate ``x`` of shape ``(len(cols), G)``; it returns ``h`` at those
    candidates, row ``r`` being evaluated at ``Y[cols[r]]``.  ``active``
    optionally masks the columns where ``hx`` is consulted.  Returns
    ``(x, dKplus, dKminus, residual)`` with the pushes recomputed from the
    closed-form jump identities at the accepted ``x``.
    """
    Y, dR, Lm, Um = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (Y, dR, L_left, U_left)))
    W = Y.shape[0]
    if np.any(Lm > Um):
        k = int(np.argmax(Lm > Um))
        raise AdmissibilityError(f"left barriers cross in column {k}: {Lm[k]} > {Um[k]}")
    base = Y + dR
    x = np.minimum(np.maximum(base, Lm), Um)
    hval = np.zeros(W)
    cols = np.arange(W) if active is None else np.flatnonzero(active)
    if hx is not None and cols.size:
        b_c, lo_b, hi_b = base[cols], Lm[cols], Um[cols]

        def phi(xx):
            hv = np.broadcast_to(hx(cols, xx), xx.shape)
            return np.minimum(np.maximum(b_c[:, None] + hv, lo_b[:, None]), hi_b[:, None])

        frac = np.linspace(0.0, 1.0, n_scan)
        grid = hi_b[:, None] - (hi_b - lo_b)[:, None] * frac[None, :]
        grid[:, 0], grid[:, -1] = hi_b, lo_b
        D = phi(grid) - grid
        top = D[:, 0] >= 0
        first = np.argmax(D >= 0, axis=1)
        found = top | (D >= 0).any(axis=1)
        if not found.all():
            raise FixedPointError("no sign change of Phi(x) - x on [L_left, U_left]")
        idx = np.arange(cols.size)
        lo = grid[idx, np.maximum(first, 1)]
        hi = grid[idx, np.maximum(first, 1) - 1]
        for _ in range(N_BISECT):
            mid = 0.5 * (lo + hi)
            ok = (phi(mid[:, None])[:, 0] - mid) >= 0
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        xs = np.where(top, hi_b, lo)
        xs = np.where(lo_b == hi_b, lo_b, xs)
        res = np.abs(phi(xs[:, None])[:, 0] - xs)
        if np.any(res > tol):
            k = int(np.argmax(res))
            raise FixedPointError(f"fixed-point residual {res[k]:.3e} exceeds tolerance in column {cols[k]}")
        x[cols] = xs
        hval[cols] = np.broadcast_to(hx(cols, xs[:, None]), (cols.size, 1))[:, 0]
    arg = base + hval
    dkp = np.maximum(Lm - arg, 0.0)
    dkm = np.maximum(arg - Um, 0.0)
    degenerate = Lm == Um
    x = np.where(degenerate, Lm, x)
    residual = np.abs(x - (arg + dkp - dkm))
    return x, dkp, dkm, residual


def jump_reflect(Y_t: float, h=None, dR: float = 0.0, L_left: float = -np.inf,
                 U_left: float = np.inf, tol: float = 1e-12) -> JumpResult:
    """Left limit at a jump time as the maximal fixed point of the clipped jump map.

    ``h`` is ``None``, a constant, or a callable ``x -> h(t, x, Y_t)``.
    Infinite barriers are only allowed when ``h`` does not depend on ``x``.
    """
    if callable(h):
        if not (np.isfinite(L_left) and np.isfinite(U_left)):
            raise AdmissibilityError("an x-dependent jump coefficient needs finite left barriers")

        def hx(cols, xx):
            return np.vectorize(h, otypes=[float])(xx)

        x, p, m, r = jump_reflect_rows([Y_t], hx, [dR], [L_left], [U_left], tol)
    else:
        shift = 0.0 if h is None else float(h)
        x, p, m, r = jump_reflect_rows([Y_t + shift], None, [dR], [L_left], [U_left], tol)
    return JumpResult(float(x[0]), float(p[0]), float(m[0]), float(r[0]))


def check_minimality(sol: Solution, L: RcllPath, U: RcllPath) -> tuple[float, float]:
    """Expected ``int (Y_- - L_-) dK+`` and ``int (U_- - Y_-) dK-``.

    Continuous pushes are paired with node values, jump pushes with left
    limits; both residuals vanish for an exact Skorokhod solution.
    """
    w = sol.ensemble.weights
    W = sol.ensemble.width
    lo = sol.Y - L.on(W)
    hi = U.on(W) - sol.Y
    return (max(integrate_against(lo, sol.Kplus, w), 0.0),
            max(integrate_against(hi, sol.Kminus, w), 0.0))


def check_singularity(sol: Solution) -> float:
    """Largest simultaneous push ``min(dK+, dK-)`` over all atoms (0 means pass)."""
    valid = sol.ensemble.valid
    c = np.minimum(sol.Kplus.continuous, sol.Kminus.continuous)
    d = np.minimum(sol.Kplus.jumps, sol.Kminus.jumps)
    c = np.where(_mask(valid[:-1], c), c, 0.0)
    d = np.where(_mask(valid, d), d, 0.0)
    return float(max(c.max(initial=0.0), d.max(initial=0.0)))


def _mask(valid, arr):
    return valid if arr.ndim == 2 else np.ones(arr.shape, dtype=bool)


def total_mass(K: FiniteVariationPath, weights) -> float:
    """Expected total mass of a nondecreasing path."""
    w = np.asarray(weights)
    c = K.on(w.shape[1])
    return float((c.continuous * w[:-1]).sum() + (c.jumps * w).sum())
