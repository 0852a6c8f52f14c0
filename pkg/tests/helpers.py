"""Oracles and random scenario builders shared by the tests."""

import numpy as np

from grbsde.core import (
    CoefficientSet,
    FiniteVariationPath,
    RcllPath,
    Solution,
    build_grid,
    semimartingale,
    simulate_ensemble,
)
from grbsde.generators import make
from grbsde.reflection import check_minimality, check_singularity, total_mass

# acceptance outcomes, printed in the terminal summary by conftest.py
ACCEPTANCE: dict = {}


def record(n, title, ok, detail=""):
    ACCEPTANCE[n] = (title, bool(ok), detail)


def skorokhod_audit(c, sol):
    """``(lower residual, upper residual, 10 dt mass budget, singularity max)`` of a solution."""
    lo, hi = check_minimality(sol, c.L, c.U)
    w = c.ensemble.weights
    mass = total_mass(sol.Kplus, w) + total_mass(sol.Kminus, w)
    return lo, hi, 10.0 * float(c.grid.dt.max()) * mass, check_singularity(sol)


# ---------------------------------------------------------------------------
# closed-form envelopes (test oracles only)
# ---------------------------------------------------------------------------


def envelope_square(C, n, x):
    """``sup_p {-C p^2 - n |p - x|}``."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return np.where(ax <= n / (2.0 * C), -C * x * x, -n * ax + n * n / (4.0 * C))


def envelope_piecewise_linear(phi, kinks, n, x):
    """``sup_p {phi(p) - n |p - x|}`` for piecewise-linear ``phi`` with the given kinks."""
    x = np.asarray(x, dtype=float)
    best = phi(x)
    for q in kinks:
        best = np.maximum(best, phi(np.full_like(x, q)) - n * np.abs(x - q))
    return best


def brute_sup_convolution(f, n, y, radius=None, points=200_001):
    """Dense-grid sup over ``p`` of ``f(p) - n |p - y|`` for scalar ``y``."""
    if n == 0:
        return 0.0
    r = -f(y) / n if radius is None else radius
    p = y + np.linspace(-r, r, points)
    return float(np.max(f(p) - n * np.abs(p - y)))


def dense_max_fixed_point(phi, lo, hi, points=2_000_001):
    """Largest ``x`` in ``[lo, hi]`` with ``phi(x) = x``, from a dense descending scan and bisection."""
    x = np.linspace(hi, lo, points)
    d = phi(x) - x
    j = int(np.argmax(d >= 0))
    if j == 0:
        return hi
    a, b = x[j], x[j - 1]
    for _ in range(200):
        mid = 0.5 * (a + b)
        if phi(np.array([mid]))[0] - mid >= 0:
            a = mid
        else:
            b = mid
    return a


# ---------------------------------------------------------------------------
# random scenarios
# ---------------------------------------------------------------------------


def tree(N, T=1.0, jumps=()):
    return simulate_ensemble(build_grid(T, N, jumps), "tree")


def random_rcll_barriers(rng, ens, lo=-1.0, hi=1.0, jump_prob=0.3):
    """Random ordered barriers in ``[lo, hi]`` with occasional distinct left limits."""
    n, W = ens.grid.N + 1, ens.width
    a = rng.uniform(lo, hi, (n, W))
    b = rng.uniform(lo, hi, (n, W))
    Lr, Ur = np.minimum(a, b), np.maximum(a, b)
    a = rng.uniform(lo, hi, (n, W))
    b = rng.uniform(lo, hi, (n, W))
    jumpy = rng.random((n, 1)) < jump_prob
    Ll = np.where(jumpy, np.minimum(a, b), Lr)
    Ul = np.where(jumpy, np.maximum(a, b), Ur)
    Ll[0], Ul[0] = Lr[0], Ur[0]
    return RcllPath(ens.grid, Lr, Ll), RcllPath(ens.grid, Ur, Ul)


def random_R(rng, ens, max_jumps=2, scale=0.3):
    """Random state-dependent forcing with small drift and at most ``max_jumps`` jump times."""
    N, W = ens.grid.N, ens.width
    cont = rng.uniform(-scale, scale, (N, W)) * ens.grid.dt[:, None]
    jumps = np.zeros((N + 1, W))
    times = rng.choice(np.arange(1, N + 1), size=rng.integers(0, max_jumps + 1), replace=False)
    for t in times:
        jumps[t] = rng.uniform(-scale, scale, W)
    return FiniteVariationPath(ens.grid, cont, jumps)


def random_zero_set(rng, N=4):
    """Zero-generator set on a depth-``N`` tree with random rcll barriers and forcing."""
    ens = tree(N)
    L, U = random_rcll_barriers(rng, ens)
    xi = rng.uniform(L.right[-1], U.right[-1])
    return CoefficientSet.build(ens, xi=xi, L=L, U=U, R=random_R(rng, ens))


_F_CHOICES = ("quadratic_z", "quadratic_z", "clipped_linear", "constant")


def random_general_set(rng, N=10, mark=0.5):
    """Random admissible set in the box for the general regime (non-Lipschitz allowed)."""
    ens = tree(N, jumps=(mark,))
    kind = _F_CHOICES[rng.integers(len(_F_CHOICES))]
    if kind == "quadratic_z":
        f = make("f", kind, ens, C=rng.uniform(1.0, 10.0), eta=rng.uniform(0.0, 0.3))
    elif kind == "clipped_linear":
        f = make("f", kind, ens, slope=rng.uniform(-0.5, 0.5), intercept=-0.5)
    else:
        f = make("f", kind, ens, value=-rng.uniform(0.0, 1.0))
    g = make("g", "clipped_linear", ens, slope=rng.uniform(-0.5, 0.5), intercept=-0.5) \
        if rng.random() < 0.5 else None
    A = make("integrator", "linear", ens, rate=rng.uniform(0.2, 1.0)) if g is not None else None
    # -0.9 <= h <= 0 and y + h nondecreasing
    h = make("h", "affine", ens, a=rng.uniform(-0.1, 0.1), b=rng.uniform(-0.2, 0.2),
             c=-rng.uniform(0.3, 0.6))
    L = make("barrier", "brownian", ens, offset=-rng.uniform(0.2, 0.8), scale=rng.uniform(0, 1), lo=-1.0, hi=0.0)
    U = make("barrier", "brownian", ens, offset=rng.uniform(0.2, 0.8), scale=rng.uniform(0, 1), lo=0.0, hi=1.0)
    # the box forces L_T = xi = U_T = 0
    return CoefficientSet.build(ens, xi=0.0, L=L, U=U, f=f, g=g, A=A, h=h,
                                name=f"random-{kind}")


def random_comparison_pair(rng, ens, mark):
    """Ordered pair ``(c1, c2)`` satisfying the appendix hypotheses by construction.

    Set 2 has Lipschitz generators and an affine jump coefficient at the
    mark; set 1 lowers the generator, the jump coefficient, the forcing, the
    terminal value and (on part of the horizon) the barriers.
    """
    W, n = ens.width, ens.grid.N + 1
    slope = rng.uniform(-0.5, 0.5)
    f2 = make("f", "clipped_linear", ens, slope=slope, intercept=-0.1)
    shift = rng.uniform(0.0, 0.5)
    f1 = make("f", "clipped_linear", ens, slope=slope, intercept=-0.1 - shift)
    c_h = -rng.uniform(0.0, 0.3)
    h2 = make("h", "affine", ens, a=rng.uniform(-0.2, 0.2), b=rng.uniform(-0.5, 0.5), c=c_h)
    h1 = make("h", "affine", ens, a=0.0, b=0.0, c=c_h - 0.7 - rng.uniform(0.0, 0.2))
    L2, U2 = random_rcll_barriers(rng, ens, jump_prob=0.2)
    # set 1 shares the barriers on a random subset of nodes so measure ordering is exercised
    share = rng.random((n, 1)) < 0.5
    dL = np.where(share, 0.0, rng.uniform(0.0, 0.3, (n, W)))
    dU = np.where(share, 0.0, rng.uniform(0.0, 0.3, (n, W)))
    L1 = RcllPath(ens.grid, L2.right - dL, L2.left - dL)
    U1 = RcllPath(ens.grid, np.maximum(U2.right - dU, L1.right), np.maximum(U2.left - dU, L1.left))
    xi2 = rng.uniform(L2.right[-1], U2.right[-1])
    xi1 = xi2 - rng.uniform(0.0, 0.2, W)
    R2 = random_R(rng, ens, scale=0.2)
    R1 = R2 - FiniteVariationPath(ens.grid, rng.uniform(0, 0.1, (n - 1, W)) * ens.grid.dt[:, None],
                                  np.zeros((n, W)))
    lip = max(abs(slope), 0.5)
    c2 = CoefficientSet.build(ens, xi=xi2, L=L2, U=U2, f=f2, h=h2, R=R2, lipschitz=lip, name="c2")
    c1 = CoefficientSet.build(ens, xi=xi1, L=L1, U=U1, f=f1, h=h1, R=R1, lipschitz=lip, name="c1")
    return c1, c2


def random_transform_set(rng, M=200, N=8, seed=0):
    """Admissible set for the transform on Monte Carlo paths, with moderate ``m``.

    The witness ``S = S0 + rate t + gamma B`` sits between barriers
    ``S - a`` and ``S + b`` (``a, b >= 0`` random per node and path),
    ``xi = S_T``, ``f`` is quadratic in ``z`` with ``C <= m / 4`` and ``g``
    lies in ``[-1, 0]``; ``h`` acts at one mark, bounded by ``l``.
    """
    grid = build_grid(1.0, N, (0.5,))
    ens = simulate_ensemble(grid, "monte_carlo", M=M, seed=seed)
    n = N + 1
    S0, rate, gamma = rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.0, 0.3)
    V = FiniteVariationPath(grid, rate * grid.dt)
    S = semimartingale(ens, S0, V, gamma)
    a = rng.uniform(0.0, 0.4, (n, 1)) * rng.uniform(0.5, 1.0, (1, M))
    b = rng.uniform(0.0, 0.4, (n, 1)) * rng.uniform(0.5, 1.0, (1, M))
    L = RcllPath(grid, S.right - a, S.left - a)
    U = RcllPath(grid, S.right + b, S.left + b)
    eta, C = rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.5)
    f = make("f", "quadratic_z", ens, C=C, eta=eta)
    g = make("g", "clipped_linear", ens, slope=rng.uniform(-0.5, 0.5), intercept=-0.5)
    A = make("integrator", "linear", ens, rate=rng.uniform(0.0, 0.5))
    lmax = rng.uniform(0.05, 0.5)
    h = make("h", "affine", ens, a=0.0, b=rng.uniform(-0.5 * lmax, 0.0), c=-0.5 * lmax)
    l = np.zeros(n)
    l[grid.jump_marks[0]] = lmax
    return CoefficientSet.build(ens, xi=S.right[-1], L=L, U=U, f=f, g=g, A=A, h=h, eta=eta, C=C,
                                beta=0.0, l=l, S=S, S0=S0, V=V, gamma=gamma, name="random-transform")


def random_box_solution(rng, c):
    """Random ``(Y, Z)`` with ``Y`` between the barriers of ``c`` (right and left values)."""
    ens, g = c.ensemble, c.grid
    Yr = c.L.right + rng.random(c.L.right.shape) * (c.U.right - c.L.right)
    Yl = c.L.left + rng.random(c.L.left.shape) * (c.U.left - c.L.left)
    Yl[0] = Yr[0]
    Z = rng.normal(size=(g.N, ens.width))
    zero = FiniteVariationPath.zeros(g, ens.width)
    return Solution(ens, RcllPath(g, Yr, Yl), Z, zero, zero)
