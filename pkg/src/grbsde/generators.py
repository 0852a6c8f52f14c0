"""Named built-in coefficient families used by scenarios and tests.

Every family has a kind (``f``, ``g``, ``h``, ``barrier``, ``terminal``,
``forcing``, ``integrator``, ``witness``), a parameter schema with
defaults, and a factory taking the ensemble.  Generators carry a
``lipschitz`` attribute when they are globally Lipschitz.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import AdmissibilityError, BrownianEnsemble, FiniteVariationPath, RcllPath, semimartingale

__all__ = ["Family", "CATALOG", "catalog", "make"]


@dataclass(frozen=True)
class Family:
    kind: str
    name: str
    params: dict
    factory: Callable
    doc: str = ""

    def resolve(self, given: dict) -> dict:
        unknown = set(given) - set(self.params)
        if unknown:
            raise ValueError(f"{self.kind} generator {self.name!r} has no parameter(s) {sorted(unknown)}")
        return {**self.params, **given}


CATALOG: dict[tuple[str, str], Family] = {}


def _register(kind, name, doc="", **params):
    def deco(fn):
        CATALOG[(kind, name)] = Family(kind, name, params, fn, doc)
        return fn
    return deco


def catalog() -> list[Family]:
    """All families sorted by ``(kind, name)``."""
    return [CATALOG[k] for k in sorted(CATALOG)]


def make(kind: str, name: str, ens: BrownianEnsemble, **params):
    try:
        fam = CATALOG[(kind, name)]
    except KeyError:
        raise ValueError(f"unknown {kind} generator {name!r}") from None
    return fam.factory(ens, **fam.resolve(params))


def _shape(*args):
    return np.broadcast(*args).shape


# ---------------------------------------------------------------------------
# f
# ---------------------------------------------------------------------------


@_register("f", "zero", "f = 0")
def _f_zero(ens):
    from .core import _zero_f
    return _zero_f


@_register("f", "constant", "f = value", value=-0.5)
def _f_constant(ens, value):
    value = float(value)

    def f(i, k, y, z):
        return np.full(_shape(k, y, z), value)

    f.depends_on_z = False
    f.lipschitz = 0.0
    return f


@_register("f", "clipped_linear", "f = slope * clip(y, lo, hi) + intercept",
           slope=-0.1, intercept=-0.1, lo=-1.0, hi=1.0)
def _f_clipped_linear(ens, slope, intercept, lo, hi):
    phi = _clipped_linear(slope, intercept, lo, hi)

    def f(i, k, y, z):
        return np.broadcast_to(phi(np.asarray(y, dtype=float)), _shape(k, y, z)).copy()

    f.depends_on_z = False
    f.lipschitz = abs(float(slope))
    return f


@_register("f", "quadratic_z", "f = -eta - C z^2 (quadratic growth in z)", C=0.5, eta=0.0)
def _f_quadratic_z(ens, C, eta):
    C, eta = float(C), float(eta)
    if C < 0 or eta < 0:
        raise AdmissibilityError("quadratic_z needs C >= 0 and eta >= 0")

    def f(i, k, y, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(-eta - C * z * z, _shape(k, y, z)).copy()

    f.depends_on_z = True
    f.lipschitz = None if C > 0 else 0.0
    f.growth = (eta, C)
    return f


@_register("f", "quadratic_y", "f = -C y^2", C=1.0)
def _f_quadratic_y(ens, C):
    C = float(C)

    def f(i, k, y, z):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(-C * y * y, _shape(k, y, z)).copy()

    f.depends_on_z = False
    f.lipschitz = None
    return f


@_register("f", "linear", "f = a + b y + c z", a=0.0, b=0.0, c=0.0)
def _f_linear(ens, a, b, c):
    def f(i, k, y, z):
        return np.broadcast_to(a + b * np.asarray(y, float) + c * np.asarray(z, float), _shape(k, y, z)).copy()

    f.depends_on_z = c != 0
    f.lipschitz = max(abs(b), abs(c))
    return f


def _clipped_linear(slope, intercept, lo, hi):
    def phi(y):
        return slope * np.clip(y, lo, hi) + intercept
    return phi


# ---------------------------------------------------------------------------
# g
# ---------------------------------------------------------------------------


@_register("g", "zero", "g = 0")
def _g_zero(ens):
    from .core import _zero_g
    return _zero_g


@_register("g", "constant", "g = value", value=-0.5)
def _g_constant(ens, value):
    value = float(value)

    def g(i, k, y):
        return np.full(_shape(k, y), value)

    g.lipschitz = 0.0
    return g


@_register("g", "clipped_linear", "g = slope * clip(y, lo, hi) + intercept",
           slope=-0.1, intercept=-0.1, lo=-1.0, hi=1.0)
def _g_clipped_linear(ens, slope, intercept, lo, hi):
    phi = _clipped_linear(slope, intercept, lo, hi)

    def g(i, k, y):
        return np.broadcast_to(phi(np.asarray(y, dtype=float)), _shape(k, y)).copy()

    g.lipschitz = abs(float(slope))
    return g


# ---------------------------------------------------------------------------
# h (consulted only at the marks)
# ---------------------------------------------------------------------------


@_register("h", "zero", "h = 0")
def _h_zero(ens):
    from .core import _zero_h
    return _zero_h


@_register("h", "constant", "h = value", value=-0.2)
def _h_constant(ens, value):
    value = float(value)

    def h(i, k, x, y):
        return np.full(_shape(k, x, y), value)

    return h


@_register("h", "affine", "h = a clip(x, lo, hi) + b clip(y, lo, hi) + c  (needs b >= -1)",
           a=0.0, b=0.0, c=-0.2, lo=-1.0, hi=1.0)
def _h_affine(ens, a, b, c, lo, hi):
    if b < -1:
        raise AdmissibilityError("y + h must be nondecreasing in y: need b >= -1")

    def h(i, k, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(a * np.clip(x, lo, hi) + b * np.clip(y, lo, hi) + c, _shape(k, x, y)).copy()

    return h


# ---------------------------------------------------------------------------
# barriers (RcllPath), terminal values, forcing, integrator, witness
# ---------------------------------------------------------------------------


def _path(ens, right, left=None) -> RcllPath:
    return RcllPath(ens.grid, ens.rows(right), None if left is None else ens.rows(left))


@_register("barrier", "constant", "barrier = value", value=1.0)
def _b_constant(ens, value):
    return _path(ens, float(value))


@_register("barrier", "brownian", "barrier = clip(offset + scale * B_t, lo, hi)",
           offset=0.5, scale=1.0, lo=-1.0, hi=1.0)
def _b_brownian(ens, offset, scale, lo, hi):
    return _path(ens, np.clip(offset + scale * ens.B, lo, hi))


@_register("barrier", "pinch", "barrier = value, except the left limit at t_star equals at",
           t_star=0.5, value=1.0, at=0.0)
def _b_pinch(ens, t_star, value, at):
    grid = ens.grid
    i = grid.index_of(float(t_star), tol=1e-9 * grid.T)
    right = np.full((grid.N + 1, ens.width), float(value))
    left = right.copy()
    left[i] = float(at)
    return RcllPath(grid, right, left)


@_register("barrier", "table", "deterministic barrier from node values (right) and optional left limits",
           right=(), left=())
def _b_table(ens, right, left):
    n = ens.grid.N + 1
    r = np.asarray(right, dtype=float)
    if r.shape != (n,):
        raise ValueError(f"tabulated barrier needs {n} right values, got {r.size}")
    l = np.asarray(left, dtype=float) if len(left) else None
    if l is not None and l.shape != (n,):
        raise ValueError(f"tabulated barrier needs {n} left values, got {l.size}")
    return _path(ens, r, l)


@_register("terminal", "constant", "xi = value", value=0.0)
def _xi_constant(ens, value):
    return np.full(ens.width, float(value))


@_register("terminal", "brownian", "xi = clip(offset + scale * B_T, lo, hi)",
           offset=0.0, scale=1.0, lo=-np.inf, hi=np.inf)
def _xi_brownian(ens, offset, scale, lo, hi):
    return np.clip(offset + scale * ens.B[-1], lo, hi)


@_register("forcing", "zero", "R = 0")
def _r_zero(ens):
    return FiniteVariationPath(ens.grid)


@_register("forcing", "deterministic", "R with drift rate and jumps of given sizes at given times",
           rate=0.0, jump_times=(), jump_sizes=())
def _r_det(ens, rate, jump_times, jump_sizes):
    grid = ens.grid
    if len(jump_times) != len(jump_sizes):
        raise ValueError("jump_times and jump_sizes differ in length")
    cont = float(rate) * grid.dt
    jumps = np.zeros(grid.N + 1)
    for t, s in zip(jump_times, jump_sizes):
        i = grid.index_of(float(t), tol=1e-9 * grid.T)
        if i == 0:
            raise ValueError("forcing jumps must occur after time 0")
        jumps[i] += float(s)
    return FiniteVariationPath(grid, cont, jumps)


@_register("integrator", "zero", "A = 0")
def _a_zero(ens):
    return FiniteVariationPath(ens.grid)


@_register("integrator", "linear", "A_t = rate * t", rate=1.0)
def _a_linear(ens, rate):
    if rate < 0:
        raise AdmissibilityError("A must be nondecreasing")
    return FiniteVariationPath(ens.grid, float(rate) * ens.grid.dt)


@_register("witness", "none", "no semimartingale witness")
def _s_none(ens):
    return None


@_register("witness", "brownian", "S = S0 + rate * t + gamma * B_t", S0=0.0, rate=0.0, gamma=1.0)
def _s_brownian(ens, S0, rate, gamma):
    V = FiniteVariationPath(ens.grid, float(rate) * ens.grid.dt)
    return {"S0": float(S0), "V": V, "gamma": float(gamma)}
