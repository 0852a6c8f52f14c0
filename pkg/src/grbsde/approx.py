"""Lipschitz approximation ladder: sup-convolutions of the generators and
truncation of the jump coefficient to finitely many marks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import AdmissibilityError, CoefficientSet, is_zero

__all__ = [
    "LadderLevel",
    "sup_convolution",
    "truncate_h",
    "order_jump_times",
    "first_passage_mark",
    "build_level",
    "level_coefficients",
]

GRID_POINTS = 64
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_ITERS = 60
_CHUNK = 2_000_000


def _objective(f, n, y, z, p, q, has_z):
    """``f(p, q) - n|p - y| - n|q - z|`` with ``y`` / ``z`` broadcast over trailing axes."""
    pen = n * np.abs(p - y)
    if has_z:
        dq = q - z
        pen = pen + n * (np.sqrt((dq * dq).sum(axis=-1)) if dq.ndim > p.ndim else np.abs(dq))
    return f(p, q) - pen


def sup_convolution(f: Callable, n: int, y, z=None, eta=None, C=None,
                    grid_points: int = GRID_POINTS, depends_on_z: bool | None = None) -> np.ndarray:
    """``sup_{p, q} { f(p, q) - n|p - y| - n|q - z| }`` for ``f <= 0``.

    ``f`` is vectorised in ``(p, q)``; ``q`` has a trailing axis of length
    ``d`` when ``z`` has shape ``(P, d)``.  Any maximiser lies within
    ``|p - y| + |q - z| <= -f(y, z) / n`` (the penalty outgrows the gain
    beyond it); when ``eta`` and ``C`` are given the radius is additionally
    capped by ``(eta + C |z|^2) / n``.  The box is searched on a
    ``(grid_points + 1)``-point product grid and every coordinate of the
    best point is then refined by golden-section search.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if n == 0:
        return np.zeros(y.shape)
    if n < 0:
        raise ValueError("level n must be nonnegative")
    has_z = z is not None and depends_on_z is not False
    if z is None:
        z = np.zeros(y.shape)
    z = np.asarray(z, dtype=float)
    d = 1 if z.ndim == y.ndim else z.shape[-1]
    if d > 3:
        raise ValueError("sup-convolution supports z-dimension d <= 3")
    z = np.broadcast_to(z, y.shape + (() if z.ndim == y.ndim else (d,)))
    vector_z = z.ndim > y.ndim
    f0 = np.asarray(f(y, z), dtype=float)
    f0 = np.broadcast_to(f0, y.shape)
    if np.any(f0 > 0):
        raise AdmissibilityError("sup-convolution needs f <= 0")
    r = -f0 / n
    if eta is not None and C is not None:
        zz = (z * z).sum(axis=-1) if vector_z else z * z
        r = np.minimum(r, (np.asarray(eta) + np.asarray(C) * zz) / n)
    flat_y = y.reshape(-1)
    flat_z = z.reshape((-1, d)) if vector_z else z.reshape(-1)
    flat_r = np.broadcast_to(r, y.shape).reshape(-1)
    out = f0.reshape(-1).copy()
    ndim = 1 + (d if has_z else 0)
    u = np.linspace(-1.0, 1.0, grid_points + 1)
    per_point = (grid_points + 1) ** ndim
    step = max(1, _CHUNK // per_point)
    for s in range(0, flat_y.size, step):
        sl = slice(s, s + step)
        out[sl] = np.maximum(out[sl], _search(f, n, flat_y[sl], flat_z[sl], flat_r[sl], u, has_z,
                                              vector_z, d))
    return out.reshape(y.shape)


def _search(f, n, y, z, r, u, has_z, vector_z, d):
    P = y.size
    G = u.size
    if not has_z:
        offs = u[None, :]
        p = y[:, None] + r[:, None] * offs
        q = z[:, None, :] if vector_z else z[:, None]
        q = np.broadcast_to(q, p.shape + ((d,) if vector_z else ()))
        val = _objective(f, n, y[:, None], _zx(z, vector_z, 1), p, q, False)
        best = np.argmax(val, axis=1)
        coords = [p[np.arange(P), best]]
        qc = z.copy()
    else:
        axes = np.meshgrid(*([u] * (1 + d)), indexing="ij")
        offs = np.stack([a.reshape(-1) for a in axes], axis=-1)  # (G^(1+d), 1+d)
        p = y[:, None] + r[:, None] * offs[None, :, 0]
        if vector_z:
            q = z[:, None, :] + r[:, None, None] * offs[None, :, 1:]
        else:
            q = z[:, None] + r[:, None] * offs[None, :, 1]
        val = _objective(f, n, y[:, None], _zx(z, vector_z, 1), p, q, True)
        best = np.argmax(val, axis=1)
        idx = np.arange(P)
        coords = [p[idx, best]]
        qc = q[idx, best]
    grid_best = val[np.arange(P), best]
    h = r * (u[1] - u[0])
    pc = coords[0]

    def ev(pp, qq):
        return _objective(f, n, y, z, pp, qq, has_z)

    pc = _golden(lambda t: ev(t, qc), pc - h, pc + h)
    if has_z:
        if vector_z:
            for j in range(d):
                def along(t, j=j):
                    qq = qc.copy()
                    qq[:, j] = t
                    return ev(pc, qq)
                t = _golden(along, qc[:, j] - h, qc[:, j] + h)
                qc = qc.copy()
                qc[:, j] = t
        else:
            qc = _golden(lambda t: ev(pc, t), qc - h, qc + h)
    refined = ev(pc, qc)
    return np.maximum(grid_best, refined)


def _blocks(size: int, per_point: int):
    """Slices small enough that :func:`sup_convolution` evaluates each in one pass."""
    step = max(1, _CHUNK // per_point)
    return [slice(s, s + step) for s in range(0, size, step)]


def _zx(z, vector_z, axis):
    return z[:, None, :] if vector_z else z[:, None]


def _golden(fun, a, b):
    """Vectorised golden-section maximisation on ``[a, b]``; returns the argmax estimate."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(_GOLDEN_ITERS):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc, fd = fun(c), fun(d)
    return np.where(fc >= fd, c, d)


def truncate_h(h: Callable, jump_marks, n: int, t, x, y):
    """``h(t, x, y)`` if ``t`` is one of the first ``n`` enumerated marks, else 0."""
    active = t in tuple(jump_marks)[:n] if np.ndim(t) == 0 else np.isin(t, tuple(jump_marks)[:n])
    return np.where(active, h(t, x, y), 0.0)


def order_jump_times(marks, T: float | None = None):
    """Sort enumerated jump times into ``S_0 = 0 < S_1 < ... < S_n <= S_{n+1} = T``.

    ``marks`` is either a sequence of times (``T`` required) or an integer
    array ``(n_marks, W)`` of per-path node indices with ``-1`` for "never";
    in the latter case the result is ``(n_marks + 2, W)`` node indices with
    sentinels ``0`` and ``T`` as the last node index (passed as ``T``).
    """
    if isinstance(marks, np.ndarray) and marks.ndim == 2:
        if T is None:
            raise ValueError("pass the terminal node index as T for per-path marks")
        end = int(T)
        mm = np.where(marks < 0, end, marks)
        for col in range(mm.shape[1]):
            real = mm[:, col][mm[:, col] < end]
            if len(set(real.tolist())) != real.size:
                raise AdmissibilityError(f"duplicate marks on path {col}")
        s = np.sort(mm, axis=0)
        return np.vstack([np.zeros((1, mm.shape[1]), dtype=int), s,
                          np.full((1, mm.shape[1]), end, dtype=int)])
    marks = [float(m) for m in marks]
    if len(set(marks)) != len(marks):
        raise AdmissibilityError("jump marks must be pairwise distinct")
    if T is None:
        raise ValueError("T is required")
    return (0.0, *sorted(marks), float(T))


def first_passage_mark(ens, level: float) -> np.ndarray:
    """Per-path node of the first time ``|B| >= level`` (``-1`` if never), shape ``(1, M)``."""
    hit = np.abs(ens.B) >= level
    hit[0] = False
    first = np.where(hit.any(axis=0), hit.argmax(axis=0), -1)
    return first[None, :].astype(int)


@dataclass
class LadderLevel:
    """Generators of level ``n``: ``f_n``, ``g_n`` (solver signatures) and truncated ``h_n``."""

    n: int
    f_n: Callable
    g_n: Callable
    h_n: Callable
    active_jump_times: tuple
    lipschitz: float

    def h_active(self, c: CoefficientSet, i, k):
        return c.h_active(i, k, self.n)


def _zero_level(i, k, y, z=None):
    return np.zeros(np.broadcast(k, y).shape)


def build_level(c: CoefficientSet, n: int, enforce_order: bool = True,
                grid_points: int = GRID_POINTS) -> LadderLevel:
    """Level ``n`` of the ladder for ``c``.

    With ``enforce_order`` the generators are ``min_{1 <= j <= n}`` of the
    level-``j`` sup-convolutions, which equals the exact ladder and makes
    ``f_n >= f_{n+1}`` hold exactly despite search error.
    """
    grid = c.grid
    marks = tuple(c.marks) if not isinstance(c.marks, np.ndarray) else ()
    times = tuple(float(grid.nodes[m]) for m in marks[:n])
    if n == 0:
        def f0(i, k, y, z):
            return np.zeros(np.broadcast(k, y, z).shape)

        def g0(i, k, y):
            return np.zeros(np.broadcast(k, y).shape)

        def h0(i, k, x, y):
            return np.zeros(np.broadcast(k, x, y).shape)

        f0.is_zero = g0.is_zero = h0.is_zero = True
        f0.depends_on_z = False
        return LadderLevel(0, f0, g0, h0, (), 0.0)

    levels = range(1, n + 1) if enforce_order else (n,)
    dz = getattr(c.f, "depends_on_z", True)

    if is_zero(c.f):
        f_n = c.f
    else:
        def f_n(i, k, y, z):
            y, z, kk, ii = np.broadcast_arrays(np.asarray(y, float), np.asarray(z, float),
                                               np.asarray(k), np.asarray(i))
            kk, ii, yy, zz = kk.reshape(-1), ii.reshape(-1), y.reshape(-1), z.reshape(-1)
            out = np.empty(yy.size)
            for sl in _blocks(yy.size, (grid_points + 1) ** (2 if dz else 1)):
                ib, kb = ii[sl], kk[sl]

                def base(p, q, ib=ib, kb=kb):
                    nd = np.broadcast(p, q).ndim
                    return c.f(ib.reshape(ib.shape + (1,) * (nd - 1)), kb.reshape(kb.shape + (1,) * (nd - 1)),
                               p, q)

                out[sl] = np.min([sup_convolution(base, j, yy[sl], zz[sl], grid_points=grid_points,
                                                  depends_on_z=dz) for j in levels], axis=0)
            return out.reshape(y.shape)

        f_n.depends_on_z = dz

    if is_zero(c.g):
        g_n = c.g
    else:
        def g_n(i, k, y):
            y, kk, ii = np.broadcast_arrays(np.asarray(y, float), np.asarray(k), np.asarray(i))
            kk, ii, yy = kk.reshape(-1), ii.reshape(-1), y.reshape(-1)
            out = np.empty(yy.size)
            for sl in _blocks(yy.size, grid_points + 1):
                ib, kb = ii[sl], kk[sl]

                def base(p, q, ib=ib, kb=kb):
                    return c.g(ib.reshape(ib.shape + (1,) * (p.ndim - 1)),
                               kb.reshape(kb.shape + (1,) * (p.ndim - 1)), p)

                out[sl] = np.min([sup_convolution(base, j, yy[sl], None, grid_points=grid_points)
                                  for j in levels], axis=0)
            return out.reshape(y.shape)

    def h_n(i, k, x, y):
        act = c.h_active(i, k, n)
        return np.where(act, c.h(i, k, x, y), 0.0)

    if is_zero(c.h):
        h_n = c.h
    return LadderLevel(n, f_n, g_n, h_n, times, float(n))


def level_coefficients(c: CoefficientSet, level: LadderLevel) -> CoefficientSet:
    """``c`` with the generators of ``level`` and its Lipschitz constant declared."""
    return c.replace(f=level.f_n, g=level.g_n, h=level.h_n, lipschitz=level.lipschitz,
                     name=f"{c.name}[n={level.n}]")
