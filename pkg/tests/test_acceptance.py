"""Acceptance criteria 1-11.  Each test records a one-line verdict that the
terminal summary prints (see conftest.py) and then asserts it."""

import functools
import io
import time
from pathlib import Path

import numpy as np

from grbsde.approx import sup_convolution
from grbsde.cli import run
from grbsde.comparison import ComparisonCase, check_comparison
from grbsde.core import CoefficientSet, build_grid, is_zero, simulate_ensemble
from grbsde.generators import make
from grbsde.solver import (BackendSpec, dynkin_value_bruteforce, solve_general, solve_lipschitz_picard,
                           solve_zero_generator)
from grbsde.transform import build_m, forward_map_solution, forward_transform, inverse_transform, verify_bounds

from helpers import (brute_sup_convolution, dense_max_fixed_point, envelope_square, random_box_solution,
                     random_comparison_pair, random_general_set, random_transform_set, random_zero_set, record,
                     skorokhod_audit, tree)

SCEN = Path(__file__).resolve().parents[1] / "scenarios"

# every (coefficients, solution) pair produced here, audited by criterion 9
SOLVES = []


def keep(c, sol):
    SOLVES.append((c, sol))
    return sol


# shared batteries (cached so criteria 6 and 9 reuse the solves of 7 and 8)


@functools.lru_cache(maxsize=None)
def general_runs():
    rng = np.random.default_rng(2024)
    out = []
    for _ in range(20):
        c = random_general_set(rng, N=10)
        rep = solve_general(c, N_max=6, min_levels=6)
        keep(c, rep.solution)
        out.append((c, rep))
    return out


@functools.lru_cache(maxsize=None)
def comparison_runs():
    rng = np.random.default_rng(77)
    ens = tree(6, jumps=(0.5,))
    out = []
    for _ in range(50):
        c1, c2 = random_comparison_pair(rng, ens, 0.5)
        rep = check_comparison(ComparisonCase(c1, c2))
        keep(c1, rep.sol1)
        keep(c2, rep.sol2)
        out.append((c1, c2, rep))
    return out


# 1. transform bounds


def test_c01_transform_bounds():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, fails = np.inf, 0
    for s in range(20):
        c = random_transform_set(rng, M=200, seed=s)
        ctx = build_m(c)
        rep = verify_bounds(forward_transform(c, ctx), ctx, samples=100_000, seed=s)
        w = min(r["worst_margin"] for r in rep.records)
        worst = min(worst, w)
        fails += (w < -1e-12) or not rep.passed
    dt = time.perf_counter() - t0
    ok = fails == 0 and dt < 60
    record(1, "transform bounds, 20 sets x 1e5 samples", ok,
           f"worst margin {worst:.3g}, failing sets {fails}, {dt:.1f} s")
    assert ok


# 2. round trip


def test_c02_round_trip():
    rng = np.random.default_rng(2)
    worst = 0.0
    for s in range(20):
        c = random_transform_set(rng, M=200, seed=100 + s)
        ctx = build_m(c)
        sol = random_box_solution(rng, c)
        back = inverse_transform(forward_map_solution(sol, ctx), ctx)
        worst = max(worst, np.max(np.abs(back.Y.right - sol.Y.right)),
                    np.max(np.abs(back.Y.left - sol.Y.left)), np.max(np.abs(back.Z - sol.Z)))
    ok = worst <= 1e-10
    record(2, "transform round trip, 20 pairs", ok, f"sup error {worst:.3g}")
    assert ok


# 3. Dynkin oracle


def test_c03_dynkin_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        c = random_zero_set(rng, 4)
        assert int(np.count_nonzero(np.any(c.R.jumps != 0, axis=1))) <= 2
        y0 = keep(c, solve_zero_generator(c).solution).Y0
        worst = max(worst, abs(dynkin_value_bruteforce(c) - y0))
    ok = worst <= 1e-12
    record(3, "Dynkin game value vs solver, 50 depth-4 trees", ok, f"max |difference| {worst:.3g}")
    assert ok


# 4. martingale reproduction


def test_c04_martingale():
    ens = tree(64)
    c = CoefficientSet.build(ens, xi=ens.B[-1], L=-100.0, U=100.0)
    sol = keep(c, solve_zero_generator(c).solution)
    tree_err = float(np.max(np.abs(np.where(ens.valid, sol.Y.right - ens.B, 0.0))))
    mc = simulate_ensemble(build_grid(1.0, 16), "monte_carlo", M=10_000, seed=4)
    cm = CoefficientSet.build(mc, xi=mc.B[-1], L=-100.0, U=100.0)
    y0 = keep(cm, solve_zero_generator(cm, BackendSpec("lsmc", 3)).solution).Y0
    se = float(mc.B[-1].std(ddof=1) / np.sqrt(mc.width))
    ok = tree_err <= 1e-14 and abs(y0) <= 3 * se
    record(4, "martingale reproduction", ok,
           f"tree sup|Y - B| {tree_err:.2g}; lsmc |Y0| {abs(y0):.4f} vs 3 SE {3 * se:.4f}")
    assert ok


# 5. constant generator closed form


def test_c05_constant_generator():
    t0 = time.perf_counter()
    ens = tree(100)
    f = make("f", "constant", ens, value=-0.5)
    c = CoefficientSet.build(ens, xi=0.0, L=-1.0, U=0.0, f=f, lipschitz=0.0)
    rep = solve_lipschitz_picard(c)
    dt = time.perf_counter() - t0
    keep(c, rep.solution)
    t = ens.grid.nodes[:, None]
    err = float(np.max(np.abs(np.where(ens.valid, rep.solution.Y.right + 0.5 * (1 - t), 0.0))))
    its = rep.diagnostics["picard_iterations"]
    ok = err <= 2 * ens.grid.dt[0] and its <= 3 and dt < 5
    record(5, "f = -0.5 closed form", ok, f"sup error {err:.2g}, {its} Picard iterations, {dt:.2f} s")
    assert ok


# 6. jump identities and maximal fixed point


def _jump_audit(c, sol, h_acts):
    ident, oracle, n = 0.0, 0.0, 0
    v = c.ensemble.valid
    k_all = np.arange(c.width)
    for i in c.grid.jump_marks:
        arg = sol.jump_input[i]
        kp, km = sol.Kplus.jumps[i], sol.Kminus.jumps[i]
        Ll, Ul = c.L.left[i], c.U.left[i]
        res = np.concatenate([
            sol.Y.left[i] - (arg + kp - km),
            kp - np.maximum(Ll - arg, 0.0),
            km - np.maximum(arg - Ul, 0.0),
        ])
        ident = max(ident, float(np.max(np.abs(np.where(np.tile(v[i], 3), res, 0.0)))))
        act = c.h_active(i, k_all) if h_acts else np.zeros(c.width, bool)
        for k in np.flatnonzero(v[i]):
            Y, dR = sol.Y.right[i, k], c.R.jumps[i, k]
            if act[k]:
                def phi(x, k=k, Y=Y, dR=dR):
                    return np.clip(Y + c.h(i, np.full(np.shape(x), k), x, np.full(np.shape(x), Y)) + dR,
                                   Ll[k], Ul[k])
            else:
                def phi(x, k=k, Y=Y, dR=dR):
                    return np.clip(np.full(np.shape(x), Y + dR), Ll[k], Ul[k])
            x = dense_max_fixed_point(phi, Ll[k], Ul[k], 200_001)
            oracle = max(oracle, abs(sol.Y.left[i, k] - x))
            n += 1
    return ident, oracle, n


def test_c06_jump_reflection():
    ident, oracle, n = 0.0, 0.0, 0
    for c, rep in general_runs():
        a, b, m = _jump_audit(c, rep.solution, not is_zero(c.h))
        ident, oracle, n = max(ident, a), max(oracle, b), n + m
    for c1, c2, rep in comparison_runs():
        for c, sol in ((c1, rep.sol1), (c2, rep.sol2)):
            a, b, m = _jump_audit(c, sol, True)
            ident, oracle, n = max(ident, a), max(oracle, b), n + m
    ok = ident <= 1e-10 and oracle <= 1e-9
    record(6, "jump identities and maximal fixed point", ok,
           f"{n} mark states, identity residual {ident:.2g}, oracle gap {oracle:.2g}")
    assert ok


# 7. ladder monotonicity


def test_c07_ladder_monotone():
    worst_inc, bad_gaps, levels = 0.0, 0, set()
    for c, rep in general_runs():
        levels.add(tuple(r["n"] for r in rep.history))
        worst_inc = max(worst_inc, max(r["max_increase"] for r in rep.history))
        gaps = [r["sup_gap"] for r in rep.history if r["sup_gap"] is not None]
        bad_gaps += any(b > a for a, b in zip(gaps, gaps[1:]))
    ok = worst_inc <= 1e-12 and bad_gaps == 0 and levels == {tuple(range(7))}
    record(7, "ladder monotone on 20 random general sets", ok,
           f"max increase {worst_inc:.2g}, runs with a rising gap {bad_gaps}")
    assert ok


# 8. comparison


def _lsmc_pair():
    ens = simulate_ensemble(build_grid(1.0, 10, (0.5,)), "monte_carlo", M=10_000, seed=8)
    L = make("barrier", "brownian", ens, offset=-0.5, scale=0.4, lo=-1.0, hi=0.0)
    U2 = make("barrier", "brownian", ens, offset=0.4, scale=0.4, lo=0.0, hi=1.0)
    U1 = make("barrier", "brownian", ens, offset=0.3, scale=0.4, lo=0.0, hi=1.0)
    f2 = make("f", "clipped_linear", ens, slope=0.3, intercept=-0.1)
    f1 = make("f", "clipped_linear", ens, slope=0.3, intercept=-0.4)
    h2 = make("h", "affine", ens, a=0.1, b=-0.2, c=-0.1)
    h1 = make("h", "constant", ens, value=-0.5)
    c2 = CoefficientSet.build(ens, xi=0.0, L=L, U=U2, f=f2, h=h2, lipschitz=0.3)
    c1 = CoefficientSet.build(ens, xi=0.0, L=L, U=U1, f=f1, h=h1, lipschitz=0.3)
    return c1, c2


def test_c08_comparison():
    runs = comparison_runs()
    hyp_fail = sum(not r.hypotheses.passed for *_, r in runs)
    y_viol = sum(r.y_violations for *_, r in runs)
    m_viol = sum(r.measure_violations for *_, r in runs)
    atoms = sum(r.measure_atoms for *_, r in runs)
    c1, c2 = _lsmc_pair()
    rep = check_comparison(ComparisonCase(c1, c2))
    keep(c1, rep.sol1)
    keep(c2, rep.sol2)
    ok = (hyp_fail == 0 and y_viol == 0 and m_viol == 0 and atoms > 0 and rep.hypotheses.passed
          and rep.y_violation_fraction < 0.01)
    record(8, "comparison", ok,
           f"tree: {y_viol} Y violations, {m_viol}/{atoms} measure violations over 50 pairs; "
           f"lsmc: violation fraction {rep.y_violation_fraction:.2%}")
    assert ok


# 10. sup-convolution envelopes


def test_c10_sup_convolution():
    rng = np.random.default_rng(10)
    closed = 0.0
    y = np.linspace(-4, 4, 401)
    for n in (1, 2, 4, 8):
        closed = max(closed, float(np.max(np.abs(
            sup_convolution(lambda p, q: -p * p, n, y, depends_on_z=False) - envelope_square(1.0, n, y)))))
    gens = {
        "-y^2": lambda p: -p * p,
        "-3y^2/(1+y^2)": lambda p: -3 * p * p / (1 + p * p),
        "-0.7|y|-0.1sin^2(3y)": lambda p: -0.7 * np.abs(p) - 0.1 * np.sin(3 * p) ** 2,
    }
    failures = []
    for name, phi in gens.items():
        pts = rng.uniform(-2, 2, 10_000)
        f = lambda p, q, phi=phi: phi(p)
        prev = np.zeros_like(pts)
        errs = []
        for n in (1, 2, 4, 8, 16):
            v = sup_convolution(f, n, pts, depends_on_z=False)
            if not (np.all(phi(pts) <= v + 1e-12) and np.all(v <= prev + 1e-9)):
                failures.append(f"{name} sandwich n={n}")
            order = np.argsort(pts)
            slope = np.abs(np.diff(v[order])) / np.maximum(np.diff(pts[order]), 1e-300)
            if np.max(slope) > n * (1 + 1e-6):
                failures.append(f"{name} Lipschitz n={n}")
            errs.append(float(np.max(v - phi(pts))))
            prev = v
        if not (all(b <= a + 1e-9 for a, b in zip(errs, errs[1:])) and errs[-1] < 0.2 * errs[0] + 1e-9):
            failures.append(f"{name} convergence {errs}")
        for yy in pts[:5]:
            if abs(sup_convolution(f, 4, [yy], depends_on_z=False)[0]
                   - brute_sup_convolution(phi, 4, yy, points=400_001)) > 1e-6:
                failures.append(f"{name} brute force at {yy}")
    ok = closed <= 1e-6 and not failures
    record(10, "sup-convolution envelopes", ok,
           f"closed-form error {closed:.2g}; checks failed: {failures or 'none'}")
    assert ok


# 11. thread independence


def test_c11_threads(tmp_path):
    same = True
    for name in ("lsmc_quadratic", "ladder_quadratic"):
        outs = []
        for t in (1, 4):
            out = tmp_path / f"{name}-{t}"
            assert run(SCEN / f"{name}.toml", out=out, threads=t, stream=io.StringIO()) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same &= outs[0] == outs[1]
    record(11, "byte-identical outputs across --threads", same, "lsmc and tree scenarios, 1 vs 4 threads")
    assert same


# 9. Skorokhod minimality and singularity (runs last: audits every solve above)


def test_c09_skorokhod():
    general_runs()
    comparison_runs()
    if len(SOLVES) < 100:
        for s in range(50):
            c = random_zero_set(np.random.default_rng(900 + s), 4)
            keep(c, solve_zero_generator(c).solution)
    bad_min, bad_sing, worst = 0, 0, 0.0
    for c, sol in SOLVES:
        lo, hi, budget, sing = skorokhod_audit(c, sol)
        bad_min += lo > budget or hi > budget
        bad_sing += sing != 0.0
        worst = max(worst, lo - budget, hi - budget)
    ok = bad_min == 0 and bad_sing == 0
    record(9, "Skorokhod minimality and singularity", ok,
           f"{len(SOLVES)} solves, {bad_min} over budget, {bad_sing} with simultaneous pushes")
    assert ok
