"""Grids, rcll / finite-variation path containers, Brownian ensembles and
the coefficient bundle consumed by every solver.

Array conventions
-----------------
A grid has ``N + 1`` nodes ``t_0 = 0 < ... < t_N = T`` and ``N`` intervals
``(t_i, t_{i+1}]``.  Random quantities live on an ensemble of width ``W``:
for a recombining tree ``W = N + 1`` and column ``j`` of row ``i`` is the
node with ``j`` up-moves (only ``j <= i`` is reachable); for Monte Carlo
``W = M`` and column ``k`` is path ``k``.  Node-indexed processes are
therefore ``(N + 1, W)`` arrays and interval-indexed ones ``(N, W)``.
Deterministic processes may be given as ``(N + 1,)`` / ``(N,)`` arrays or
scalars and are broadcast on demand.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "GridError",
    "AdmissibilityError",
    "TimeGrid",
    "build_grid",
    "RcllPath",
    "FiniteVariationPath",
    "BrownianEnsemble",
    "simulate_ensemble",
    "total_variation",
    "truncation_time",
    "integrate_against",
    "CoefficientSet",
    "Solution",
    "semimartingale",
]

_CHUNK = 4096


class GridError(ValueError):
    """Raised for malformed grids, off-grid times and grid mismatches."""


class AdmissibilityError(ValueError):
    """Raised when coefficient data violate the standing assumptions."""


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray
    jump_marks: tuple[int, ...] = ()

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise GridError("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise GridError("grid must start at 0")
        if np.any(np.diff(nodes) <= 0):
            raise GridError("grid nodes must be strictly increasing")
        marks = tuple(int(m) for m in self.jump_marks)
        if len(set(marks)) != len(marks):
            raise GridError("jump marks must be pairwise distinct")
        if any(m <= 0 or m > nodes.size - 1 for m in marks):
            raise GridError("jump marks must be nodes in (0, T]")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "jump_marks", tuple(sorted(marks)))

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def is_uniform(self) -> bool:
        dt = self.dt
        return bool(np.allclose(dt, dt[0], rtol=1e-12, atol=0.0))

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        """Index of the node equal to ``t`` (within ``tol * T``)."""
        i = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[i] - t) > tol * max(self.T, 1.0):
            raise GridError(f"time {t!r} is not a grid node")
        return i

    def same_as(self, other: "TimeGrid") -> bool:
        return self is other or (
            self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
        )


def build_grid(T: float = 1.0, N: int = 1, jump_times=(), snap_tol: float = 1e-9) -> TimeGrid:
    """Uniform grid on ``[0, T]`` with jump marks.

    A jump time within ``snap_tol * T`` of an unmarked node marks that node;
    otherwise a node is inserted at the jump time itself.  Two jump times
    landing on the same node are rejected.
    """
    if N < 1:
        raise GridError("N must be >= 1")
    if T <= 0:
        raise GridError("T must be positive")
    base = np.linspace(0.0, T, N + 1)
    marked: list[float] = []
    inserted: list[float] = []
    for t in jump_times:
        t = float(t)
        if not 0.0 < t <= T * (1 + snap_tol):
            raise GridError(f"jump time {t} outside (0, T]")
        i = int(np.argmin(np.abs(base - t)))
        if abs(base[i] - t) <= snap_tol * T and i > 0:
            node = float(base[i])
        else:
            node = t
            inserted.append(t)
        if any(abs(node - m) <= snap_tol * T for m in marked):
            raise GridError(f"jump time {t} collides with another mark after snapping")
        marked.append(node)
    nodes = np.unique(np.concatenate([base, np.asarray(inserted, dtype=float)]))
    marks = [int(np.argmin(np.abs(nodes - m))) for m in marked]
    return TimeGrid(nodes, tuple(marks))


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


def _rows(x, n_rows: int, width: int | None = None) -> np.ndarray:
    """Broadcast scalars, ``(n_rows,)`` or ``(n_rows, W)`` data to a float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = np.full(n_rows, float(a))
    if a.shape[0] != n_rows:
        raise GridError(f"expected {n_rows} rows, got shape {a.shape}")
    if width is not None:
        if a.ndim == 1:
            a = np.repeat(a[:, None], width, axis=1)
        elif a.shape[1] != width:
            raise GridError(f"expected width {width}, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class RcllPath:
    """Right values ``Y_{t_i}`` and left limits ``Y_{t_i-}`` at each node."""

    grid: TimeGrid
    right: np.ndarray
    left: np.ndarray = None

    def __post_init__(self):
        n = self.grid.N + 1
        right = _rows(self.right, n)
        left = right.copy() if self.left is None else _rows(self.left, n)
        if left.shape != right.shape:
            left, right = np.broadcast_arrays(left, right)
            left, right = left.copy(), right.copy()
        left[0] = right[0]
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "left", left)

    def on(self, width: int) -> "RcllPath":
        return RcllPath(self.grid, _rows(self.right, self.grid.N + 1, width),
                        _rows(self.left, self.grid.N + 1, width))

    def __sub__(self, other: "RcllPath") -> "RcllPath":
        if not self.grid.same_as(other.grid):
            raise GridError("grid mismatch")
        return RcllPath(self.grid, self.right - other.right, self.left - other.left)

    @property
    def jumps(self) -> np.ndarray:
        return self.right - self.left


@dataclass(frozen=True, eq=False)
class FiniteVariationPath:
    """Signed finite-variation process stored through its increments.

    ``continuous[i]`` is the increment of the continuous part over interval
    ``i``; ``jumps[i]`` the jump at node ``i`` (``jumps[0] == 0``).  Right
    values are ``V_i = sum_{k<i} continuous[k] + sum_{k<=i} jumps[k]``.
    """

    grid: TimeGrid
    continuous: np.ndarray = None
    jumps: np.ndarray = None

    def __post_init__(self):
        N = self.grid.N
        c = np.zeros(N) if self.continuous is None else _rows(self.continuous, N)
        d = np.zeros(N + 1) if self.jumps is None else _rows(self.jumps, N + 1)
        if c.ndim == 2 and d.ndim == 1:
            d = np.repeat(d[:, None], c.shape[1], axis=1)
        elif d.ndim == 2 and c.ndim == 1:
            c = np.repeat(c[:, None], d.shape[1], axis=1)
        elif c.ndim == 2 and c.shape[1] != d.shape[1]:
            raise GridError("continuous and jump parts have different widths")
        d = d.copy()
        if np.any(d[0] != 0):
            raise GridError("a finite-variation path cannot jump at t = 0")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(d))):
            raise GridError("increments must be finite")
        object.__setattr__(self, "continuous", c)
        object.__setattr__(self, "jumps", d)

    @classmethod
    def zeros(cls, grid: TimeGrid, width: int | None = None) -> "FiniteVariationPath":
        if width is None:
            return cls(grid)
        return cls(grid, np.zeros((grid.N, width)), np.zeros((grid.N + 1, width)))

    @classmethod
    def from_values(cls, grid: TimeGrid, right, left=None) -> "FiniteVariationPath":
        """Build from right values (and optional left limits); ``V_0`` is dropped."""
        right = _rows(right, grid.N + 1)
        left = right if left is None else _rows(left, grid.N + 1)
        c = left[1:] - right[:-1]
        d = right - left
        d[0] = 0.0
        return cls(grid, c, d)

    @property
    def width(self) -> int | None:
        return None if self.continuous.ndim == 1 else self.continuous.shape[1]

    def values(self) -> np.ndarray:
        out = np.zeros_like(self.jumps)
        out[1:] = np.cumsum(self.continuous, axis=0)
        return out + np.cumsum(self.jumps, axis=0)

    def left_values(self) -> np.ndarray:
        return self.values() - self.jumps

    def positive_part(self) -> "FiniteVariationPath":
        return FiniteVariationPath(self.grid, np.maximum(self.continuous, 0.0),
                                   np.maximum(self.jumps, 0.0))

    def negative_part(self) -> "FiniteVariationPath":
        return FiniteVariationPath(self.grid, np.maximum(-self.continuous, 0.0),
                                   np.maximum(-self.jumps, 0.0))

    def continuous_part(self) -> "FiniteVariationPath":
        return FiniteVariationPath(self.grid, self.continuous, np.zeros_like(self.jumps))

    def jump_part(self) -> "FiniteVariationPath":
        return FiniteVariationPath(self.grid, np.zeros_like(self.continuous), self.jumps)

    def variation(self) -> "FiniteVariationPath":
        """The total-variation process ``|V|`` as a nondecreasing path."""
        return FiniteVariationPath(self.grid, np.abs(self.continuous), np.abs(self.jumps))

    def is_nondecreasing(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.continuous >= -tol) and np.all(self.jumps >= -tol))

    def on(self, width: int) -> "FiniteVariationPath":
        if self.width == width:
            return self
        return FiniteVariationPath(self.grid, _rows(self.continuous, self.grid.N, width),
                                   _rows(self.jumps, self.grid.N + 1, width))

    def __add__(self, other: "FiniteVariationPath") -> "FiniteVariationPath":
        if not self.grid.same_as(other.grid):
            raise GridError("grid mismatch")
        return FiniteVariationPath(self.grid, self.continuous + other.continuous,
                                   self.jumps + other.jumps)

    def __neg__(self) -> "FiniteVariationPath":
        return FiniteVariationPath(self.grid, -self.continuous, -self.jumps)

    def __sub__(self, other: "FiniteVariationPath") -> "FiniteVariationPath":
        return self + (-other)

    def scaled(self, c) -> "FiniteVariationPath":
        return FiniteVariationPath(self.grid, self.continuous * c, self.jumps * c)


def total_variation(p: FiniteVariationPath, t: float):
    """``|V|_t``: absolute continuous increments plus absolute jumps on ``(0, t]``."""
    i = p.grid.index_of(t)
    return np.abs(p.continuous[:i]).sum(axis=0) + np.abs(p.jumps[1:i + 1]).sum(axis=0)


def truncation_time(grid: TimeGrid, j: float, l=0.0, C=0.0, R: FiniteVariationPath | None = None):
    """First node where ``sum_{r<=s} l_r + C_s + |R|_s >= j``, else ``T``.

    ``l`` holds point masses at nodes, ``C`` node values; either may be a
    scalar, ``(N+1,)`` or ``(N+1, W)``.  Returns a float or one time per
    state.
    """
    n = grid.N + 1
    total = np.cumsum(_rows(l, n), axis=0) + _rows(C, n)
    if R is not None:
        rv = R.variation().values()
        total, rv = np.broadcast_arrays(total, rv)
        total = total + rv
    hit = total >= j
    first = np.where(hit.any(axis=0), hit.argmax(axis=0), grid.N)
    out = grid.nodes[first]
    return float(out) if np.ndim(out) == 0 else out


def integrate_against(phi: RcllPath, K: FiniteVariationPath, weights: np.ndarray | None = None):
    """``int phi_{s-} dK_s`` on the grid.

    Continuous increments over ``(t_i, t_{i+1}]`` are paired with the node
    value ``phi(t_i)``, jumps at ``t_i`` with the left limit ``phi(t_i-)``.
    Without ``weights`` the sum is taken along each column (pathwise); with
    node weights of shape ``(N + 1, W)`` the weighted total (an expectation
    for probability weights) is returned.
    """
    if not phi.grid.same_as(K.grid):
        raise GridError("phi and K live on different grids")
    cont = phi.right[:-1] * (K.continuous if K.continuous.ndim == phi.right.ndim
                             else np.reshape(K.continuous, K.continuous.shape + (1,) * (phi.right.ndim - K.continuous.ndim)))
    jump = phi.left * (K.jumps if K.jumps.ndim == phi.left.ndim
                       else np.reshape(K.jumps, K.jumps.shape + (1,) * (phi.left.ndim - K.jumps.ndim)))
    if weights is None:
        return cont.sum(axis=0) + jump.sum(axis=0)
    w = np.asarray(weights, dtype=float)
    return float((cont * w[:-1]).sum() + (jump * w).sum())


# ---------------------------------------------------------------------------
# Brownian ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BrownianEnsemble:
    grid: TimeGrid
    mode: str
    B: np.ndarray
    dB: np.ndarray | None = None
    M: int | None = None
    seed: int | None = None

    @property
    def width(self) -> int:
        return self.B.shape[1]

    @property
    def is_tree(self) -> bool:
        return self.mode == "tree"

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.width)

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of reachable (row, column) pairs."""
        if self.is_tree:
            i = np.arange(self.grid.N + 1)[:, None]
            return self.states[None, :] <= i
        return np.ones(self.B.shape, dtype=bool)

    @property
    def weights(self) -> np.ndarray:
        """Node probabilities (tree) or ``1/M`` per path, shape ``(N + 1, W)``."""
        if self.is_tree:
            from scipy.stats import binom

            i = np.arange(self.grid.N + 1)[:, None]
            return binom.pmf(self.states[None, :], i, 0.5) * self.valid
        return np.full(self.B.shape, 1.0 / self.width)

    def rows(self, x, n_rows: int | None = None) -> np.ndarray:
        """Broadcast process data onto this ensemble."""
        return _rows(x, self.grid.N + 1 if n_rows is None else n_rows, self.width)


def simulate_ensemble(grid: TimeGrid, mode: str = "tree", M: int | None = None,
                      seed: int = 0, threads: int = 1) -> BrownianEnsemble:
    """Recombining binomial tree or seeded Monte Carlo Brownian paths.

    Monte Carlo paths are drawn in fixed blocks of 4096, each block from its
    own Philox stream keyed by ``(seed, block)``; the worker count only
    changes which thread fills a block, never the numbers.
    """
    N = grid.N
    if mode == "tree":
        if not grid.is_uniform:
            raise GridError("tree mode needs a uniform grid (jump marks must sit on nodes)")
        sq = np.sqrt(grid.dt[0])
        i = np.arange(N + 1)[:, None]
        j = np.arange(N + 1)[None, :]
        B = (2 * j - i) * sq
        return BrownianEnsemble(grid, "tree", B.astype(float), None, None, None)
    if mode != "monte_carlo":
        raise ValueError(f"unknown ensemble mode {mode!r}")
    if M is None or M < 1:
        raise ValueError("monte_carlo mode needs M >= 1")
    seed = int(seed) & (2**64 - 1)
    sq = np.sqrt(grid.dt)
    blocks = [(b, min(_CHUNK, M - b * _CHUNK)) for b in range((M + _CHUNK - 1) // _CHUNK)]

    def draw(block):
        b, size = block
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, b])))
        return rng.standard_normal((size, N)) * sq

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(draw, blocks))
    else:
        parts = [draw(b) for b in blocks]
    dB = np.concatenate(parts, axis=0).T.copy()
    B = np.zeros((N + 1, M))
    B[1:] = np.cumsum(dB, axis=0)
    return BrownianEnsemble(grid, "monte_carlo", B, dB, M, seed)


def semimartingale(ens: BrownianEnsemble, S0: float = 0.0, V: FiniteVariationPath | None = None,
                   gamma=0.0) -> RcllPath:
    """``S = S0 + V + int gamma dB`` on the ensemble (Ito left-point sums).

    On a recombining tree the stochastic integral is only a node function
    when ``gamma`` is a constant, which is the only case accepted there.
    """
    grid = ens.grid
    W = ens.width
    Vr = np.zeros((grid.N + 1, W)) if V is None else _rows(V.values(), grid.N + 1, W)
    Vl = np.zeros((grid.N + 1, W)) if V is None else _rows(V.left_values(), grid.N + 1, W)
    if ens.is_tree:
        g = np.asarray(gamma, dtype=float)
        if g.ndim != 0:
            raise AdmissibilityError("on a tree the volatility witness must be a constant")
        mart = float(g) * ens.B
    else:
        g = ens.rows(gamma)
        mart = np.zeros_like(ens.B)
        mart[1:] = np.cumsum(g[:-1] * ens.dB, axis=0)
    return RcllPath(grid, S0 + Vr + mart, S0 + Vl + mart)


# ---------------------------------------------------------------------------
# coefficient bundle and solutions
# ---------------------------------------------------------------------------

Generator = Callable[..., np.ndarray]


def _zero_f(i, k, y, z):
    return np.zeros(np.broadcast(k, y, z).shape)


def _zero_g(i, k, y):
    return np.zeros(np.broadcast(k, y).shape)


def _zero_h(i, k, x, y):
    return np.zeros(np.broadcast(k, x, y).shape)


_zero_f.is_zero = _zero_g.is_zero = _zero_h.is_zero = True
_zero_f.depends_on_z = False


def is_zero(fn) -> bool:
    return fn is None or getattr(fn, "is_zero", False)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Data ``(xi, f, g, h, A, R, L, U)`` bound to an ensemble, plus witnesses.

    Generators are vectorised callables ``f(i, k, y, z)``, ``g(i, k, y)`` and
    ``h(i, k, x, y)`` where ``i`` is the node index, ``k`` an integer array
    of ensemble columns and all array arguments broadcast together.  ``h`` is
    only consulted at its enumerated marks (``marks``: node indices in
    enumeration order, or an ``(n_marks, W)`` array of per-path node indices
    with ``-1`` for "never").

    Use :meth:`build`; it broadcasts every input onto the ensemble and
    enforces ``L_T = xi = U_T`` by overwriting the terminal right values.
    """

    ensemble: BrownianEnsemble
    xi: np.ndarray
    L: RcllPath
    U: RcllPath
    f: Generator = _zero_f
    g: Generator = _zero_g
    h: Generator = _zero_h
    A: FiniteVariationPath = None
    R: FiniteVariationPath = None
    eta: np.ndarray = None
    C: np.ndarray = None
    beta: np.ndarray = None
    l: np.ndarray = None
    S: RcllPath | None = None
    S0: float = 0.0
    V: FiniteVariationPath | None = None
    gamma: np.ndarray = None
    marks: tuple | np.ndarray = ()
    lipschitz: float | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, ensemble: BrownianEnsemble, xi=0.0, L=-1.0, U=1.0, f=None, g=None, h=None,
              A=None, R=None, eta=0.0, C=0.0, beta=0.0, l=0.0, S0=None, V=None, gamma=0.0,
              S=None, marks=None, lipschitz=None, name="", check=True, **meta) -> "CoefficientSet":
        grid = ensemble.grid
        W = ensemble.width
        n = grid.N + 1
        xi_arr = np.asarray(xi, dtype=float)
        xi_arr = np.broadcast_to(xi_arr, (W,)).astype(float) if xi_arr.ndim <= 1 else xi_arr
        Lp = L.on(W) if isinstance(L, RcllPath) else RcllPath(grid, _rows(L, n, W))
        Up = U.on(W) if isinstance(U, RcllPath) else RcllPath(grid, _rows(U, n, W))
        Lr, Ur = Lp.right.copy(), Up.right.copy()
        Lr[-1] = xi_arr
        Ur[-1] = xi_arr
        Lp = RcllPath(grid, Lr, Lp.left)
        Up = RcllPath(grid, Ur, Up.left)
        A = FiniteVariationPath(grid) if A is None else A
        if np.any(A.jumps != 0) or not A.is_nondecreasing():
            raise AdmissibilityError("A must be continuous and nondecreasing")
        R = FiniteVariationPath(grid) if R is None else R
        if S is None and (S0 is not None or V is not None):
            S = semimartingale(ensemble, 0.0 if S0 is None else S0, V, gamma)
        if marks is None:
            marks = grid.jump_marks
        if not isinstance(marks, np.ndarray):
            marks = tuple(int(m) for m in marks)
            if len(set(marks)) != len(marks):
                raise AdmissibilityError("jump-coefficient marks must be pairwise distinct")
        cs = cls(ensemble, xi_arr, Lp, Up, f or _zero_f, g or _zero_g, h or _zero_h,
                 A.on(W), R.on(W), ensemble.rows(eta), ensemble.rows(C), ensemble.rows(beta),
                 ensemble.rows(l), S.on(W) if S is not None else None,
                 0.0 if S0 is None else float(S0), V, ensemble.rows(gamma), marks, lipschitz,
                 name, dict(meta))
        if check:
            cs.check_barriers()
        return cs

    @property
    def grid(self) -> TimeGrid:
        return self.ensemble.grid

    @property
    def width(self) -> int:
        return self.ensemble.width

    def replace(self, **changes) -> "CoefficientSet":
        import dataclasses

        return dataclasses.replace(self, **changes)

    def check_barriers(self, tol: float = 0.0) -> None:
        """Reject ``L > U`` at any reachable node (right values before T, left values after 0)."""
        valid = self.ensemble.valid
        bad_r = (self.L.right[:-1] > self.U.right[:-1] + tol) & valid[:-1]
        bad_l = (self.L.left[1:] > self.U.left[1:] + tol) & valid[1:]
        for bad, kind, off in ((bad_r, "right", 0), (bad_l, "left", 1)):
            if bad.any():
                i, k = np.argwhere(bad)[0]
                raise AdmissibilityError(
                    f"L > U at node {i + off} (t={self.grid.nodes[i + off]:.6g}, column {k}, {kind} values)")

    def check_witness(self, tol: float = 1e-12) -> None:
        if self.S is None:
            raise AdmissibilityError("no semimartingale witness S supplied")
        valid = self.ensemble.valid
        for side, (lo, hi) in (("right", (self.L.right, self.U.right)),
                               ("left", (self.L.left, self.U.left))):
            s = getattr(self.S, side)
            bad = ((s < lo - tol) | (s > hi + tol)) & valid
            if bad.any():
                i, k = np.argwhere(bad)[0]
                raise AdmissibilityError(f"witness S leaves [L, U] at node {i} ({side} values)")

    def mark_rows(self) -> list[tuple[int, np.ndarray]]:
        """``(node, active-columns mask)`` for every node where ``h`` may act, in enumeration order."""
        W = self.width
        if isinstance(self.marks, np.ndarray):
            out = []
            for row in np.atleast_2d(self.marks):
                for node in np.unique(row[row > 0]):
                    out.append((int(node), row == node))
            return out
        return [(m, np.ones(W, dtype=bool)) for m in self.marks]

    def h_active(self, i, k, n: int | None = None) -> np.ndarray:
        """Whether ``h`` acts at node(s) ``i`` in column(s) ``k`` (broadcasting)."""
        i, k = np.broadcast_arrays(np.asarray(i), np.asarray(k))
        if is_zero(self.h):
            return np.zeros(i.shape, dtype=bool)
        if isinstance(self.marks, np.ndarray):
            m = np.atleast_2d(self.marks)
            m = m if n is None else m[:n]
            return np.any(m[:, k] == i, axis=0)
        marks = self.marks if n is None else self.marks[:n]
        return np.isin(i, np.asarray(marks, dtype=int))

    def h_mask(self, i: int, n: int | None = None) -> np.ndarray:
        """Columns in which ``h`` is active at node ``i`` (first ``n`` marks only)."""
        W = self.width
        if is_zero(self.h):
            return np.zeros(W, dtype=bool)
        if isinstance(self.marks, np.ndarray):
            m = np.atleast_2d(self.marks)
            m = m if n is None else m[:n]
            return (m == i).any(axis=0)
        marks = self.marks if n is None else self.marks[:n]
        return np.full(W, i in marks)

    @property
    def in_box(self) -> bool:
        """Whether the barriers satisfy ``-1 <= L <= 0 <= U <= 1`` at reachable nodes."""
        v = self.ensemble.valid
        ok = True
        for arr, lo, hi in ((self.L.right, -1, 0), (self.L.left, -1, 0),
                            (self.U.right, 0, 1), (self.U.left, 0, 1)):
            ok &= bool(np.all(((arr >= lo) & (arr <= hi)) | ~v))
        return ok


@dataclass(eq=False)
class Solution:
    """Discrete quadruple ``(Y, Z, K+, K-)``.

    ``Kplus.continuous[i]`` is the push applied by the projection at node
    ``i`` (paired with ``Y_{t_i}``), ``Kplus.jumps[i]`` the push of the jump
    reflection at node ``i`` (paired with ``Y_{t_i-}``).
    """

    ensemble: BrownianEnsemble
    Y: RcllPath
    Z: np.ndarray
    Kplus: FiniteVariationPath
    Kminus: FiniteVariationPath
    Ytilde: np.ndarray | None = None
    jump_input: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.ensemble.grid

    @property
    def Y0(self) -> float:
        return float(self.Y.right[0, 0])
