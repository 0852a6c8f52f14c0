import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grbsde.approx import build_level
from grbsde.core import (AdmissibilityError, BrownianEnsemble, CoefficientSet, FiniteVariationPath, RcllPath,
                         build_grid, simulate_ensemble)
from grbsde.generators import make
from grbsde.solver import (
    BackendSpec,
    LSMCBackend,
    RankDeficiency,
    TreeBackend,
    dynkin_value_bruteforce,
    make_backend,
    rescale_to_box,
    solve,
    solve_concatenated,
    solve_general,
    solve_lipschitz_picard,
    solve_zero_generator,
    step_backward,
)

from helpers import random_zero_set, tree


def on_valid(ens, a):
    return np.where(ens.valid, a, 0.0)


def assert_clean(rep, tol=1e-12):
    d = rep.diagnostics
    assert d["sandwich_violation"] <= tol
    assert d["singularity_max"] == 0.0
    assert d["step_identity_residual"] <= 1e-10
    assert d["jump_identity_residual"] <= 1e-10
    assert d["minimality_ok"]


# step_backward


def test_step_zero_generator_is_conditional_expectation():
    ens = tree(4)
    be = TreeBackend(ens)
    Yt, Z, E = step_backward(be, 2, ens.B[3] ** 2)
    assert np.allclose(Yt[:3], E[:3])
    assert np.allclose(E[:3], ens.B[2, :3] ** 2 + 0.25)


def test_step_martingale_on_tree():
    ens = tree(4)
    Yt, Z, _ = step_backward(TreeBackend(ens), 2, ens.B[3])
    assert np.allclose(Yt[:3], ens.B[2, :3], atol=1e-15)
    assert np.allclose(Z[:3], 1.0, atol=1e-14)


def test_step_constant_generator():
    ens = tree(4)
    f = make("f", "constant", ens, value=-0.5)
    Yt, _, E = step_backward(TreeBackend(ens), 1, ens.B[2], f=f)
    assert np.allclose(Yt - E, -0.5 * 0.25)


def test_step_implicit_sweeps():
    ens = tree(2)
    f = make("f", "linear", ens, a=0.0, b=-1.0, c=0.0)
    Yt, _, E = step_backward(TreeBackend(ens), 0, np.ones(3), f=f, implicit=True, sweeps=60)
    assert Yt[0] == pytest.approx(1 / 1.5, abs=1e-12)


# backends


def test_backend_spec_validation():
    with pytest.raises(ValueError):
        BackendSpec("grid")
    with pytest.raises(ValueError):
        BackendSpec("lsmc", degree=-1)
    with pytest.raises(ValueError):
        BackendSpec("lsmc", degree=3, M=30)
    assert isinstance(make_backend("tree", tree(2)), TreeBackend)


def test_lsmc_rank_deficiency():
    g = build_grid(1.0, 2)
    dB = np.tile([[0.5, -0.5], [0.1, 0.2]], (1, 50))
    B = np.zeros((3, 100))
    B[1:] = np.cumsum(dB, axis=0)
    ens = BrownianEnsemble(g, "monte_carlo", B, dB, 100, 0)
    be = LSMCBackend(ens, degree=3)
    with pytest.raises(RankDeficiency):
        be.cond(1, np.zeros(100))


def test_lsmc_reproduces_polynomials():
    ens = simulate_ensemble(build_grid(1.0, 4), "monte_carlo", M=4000, seed=2)
    be = LSMCBackend(ens, degree=2)
    E, _ = be.cond(2, ens.B[2] ** 2 - ens.B[2])
    assert np.allclose(E, ens.B[2] ** 2 - ens.B[2], atol=1e-10)
    _, Z = be.cond(2, ens.B[3])
    assert abs(Z.mean() - 1.0) < 0.05


# zero-generator regime


def test_zero_trivial():
    c = CoefficientSet.build(tree(6), xi=0.0, L=-1.0, U=1.0)
    rep = solve_zero_generator(c)
    sol = rep.solution
    assert np.all(sol.Y.right == 0) and np.all(sol.Z == 0)
    assert np.all(sol.Kplus.values() == 0) and np.all(sol.Kminus.values() == 0)
    assert_clean(rep)


def test_zero_regime_rejects_generators():
    ens = tree(2)
    c = CoefficientSet.build(ens, f=make("f", "constant", ens, value=-0.1))
    with pytest.raises(AdmissibilityError):
        solve_zero_generator(c)


def test_martingale_reproduction_raw():
    ens = tree(8)
    c = CoefficientSet.build(ens, xi=ens.B[-1], L=-10.0, U=10.0)
    sol = solve_zero_generator(c).solution
    assert np.max(np.abs(on_valid(ens, sol.Y.right - ens.B))) <= 1e-14
    assert np.max(np.abs(sol.Z[:, 0] - 1.0)) <= 1e-14
    assert np.all(sol.Kplus.values() == 0) and np.all(sol.Kminus.values() == 0)


def test_martingale_reproduction_rescaled():
    ens = tree(8)
    # witness S = B sits inside the band B -/+ 10 and meets xi = B_T at T
    L = make("barrier", "brownian", ens, offset=-10.0, lo=-np.inf, hi=np.inf)
    U = make("barrier", "brownian", ens, offset=10.0, lo=-np.inf, hi=np.inf)
    c = CoefficientSet.build(ens, xi=ens.B[-1], L=L, U=U, S0=0.0, gamma=1.0)
    c1, rs = rescale_to_box(c)
    assert c1.in_box and rs.kappa == pytest.approx(10.0)
    sol = rs.undo(solve_zero_generator(c1).solution)
    assert np.max(np.abs(on_valid(ens, sol.Y.right - ens.B))) <= 1e-13


def test_terminal_forcing_jump():
    ens = tree(4)
    L = RcllPath(ens.grid, np.full((5, 5), -1.0))
    L.left[4] = 0.0
    R = FiniteVariationPath(ens.grid, 0.0, [0, 0, 0, 0, -0.3])
    rep = solve_zero_generator(CoefficientSet.build(ens, xi=0.0, L=L, U=1.0, R=R))
    sol = rep.solution
    assert np.allclose(sol.Y.left[4], 0.0)
    assert np.allclose(sol.Kplus.jumps[4], 0.3)
    assert np.all(sol.Kminus.jumps[4] == 0)
    assert_clean(rep)


# Picard regime


def test_picard_constant_generator():
    ens = tree(100)
    f = make("f", "constant", ens, value=-0.5)
    c = CoefficientSet.build(ens, xi=0.0, L=-1.0, U=0.0, f=f, lipschitz=0.0)
    rep = solve_lipschitz_picard(c)
    t = ens.grid.nodes
    assert np.max(np.abs(on_valid(ens, rep.solution.Y.right + 0.5 * (1 - t)[:, None]))) <= 1e-12
    assert np.all(rep.solution.Z == 0)
    assert rep.diagnostics["picard_iterations"] == 2
    assert rep.diagnostics["expected_K_mass"] == 0


def test_picard_zero_generators_match_zero_regime():
    rng = np.random.default_rng(5)
    c = random_zero_set(rng, 5)
    a = solve_zero_generator(c).solution
    b = solve_lipschitz_picard(c).solution
    assert np.array_equal(a.Y.right, b.Y.right) and np.array_equal(a.Y.left, b.Y.left)


def test_picard_contraction_rate():
    ens = tree(20)
    f = make("f", "clipped_linear", ens, slope=-0.1, intercept=-0.1)
    c = CoefficientSet.build(ens, xi=0.0, L=-1.0, U=1.0, f=f, lipschitz=0.1)
    rep = solve_lipschitz_picard(c)
    ratios = rep.diagnostics["picard_gap_ratios"]
    assert ratios and max(ratios) <= 0.1 * 1.0 * 1.05
    assert_clean(rep)


def test_picard_needs_lipschitz_constant():
    ens = tree(2)
    c = CoefficientSet.build(ens, f=make("f", "constant", ens, value=-0.1))
    with pytest.raises(AdmissibilityError):
        solve_lipschitz_picard(c)


# concatenated regime


def test_concatenated_constant_jump():
    ens = tree(4, jumps=(0.5,))
    h = make("h", "constant", ens, value=-0.2)
    rep = solve_concatenated(CoefficientSet.build(ens, xi=0.0, L=-1.0, U=1.0, h=h))
    Y = rep.solution.Y
    assert np.allclose(Y.right[2, :3], 0.0)
    assert np.allclose(Y.left[2, :3], -0.2)
    assert rep.Y0 == pytest.approx(-0.2)
    assert_clean(rep)


def test_concatenated_pinch():
    ens = tree(4, jumps=(0.5,))
    h = make("h", "constant", ens, value=-0.7)
    L = make("barrier", "pinch", ens, t_star=0.5, value=-1.0, at=0.0)
    U = make("barrier", "pinch", ens, t_star=0.5, value=1.0, at=0.0)
    rep = solve_concatenated(CoefficientSet.build(ens, xi=0.0, L=L, U=U, h=h))
    assert np.all(rep.solution.Y.left[2, :3] == 0.0)
    assert np.allclose(rep.solution.Kplus.jumps[2, :3], 0.7)


def test_concatenated_without_marks_is_picard():
    ens = tree(8)
    f = make("f", "clipped_linear", ens, slope=0.3, intercept=-0.2)
    c = CoefficientSet.build(ens, xi=0.0, L=-1.0, U=1.0, f=f, lipschitz=0.3)
    a = solve_concatenated(c).solution
    b = solve_lipschitz_picard(c).solution
    assert np.array_equal(a.Y.right, b.Y.right)


# general regime


def test_general_quadratic_ladder():
    ens = tree(8)
    f = make("f", "quadratic_z", ens, C=0.5, eta=0.1)
    c = CoefficientSet.build(ens, xi=0.0, L=-1.0, U=1.0, f=f, eta=0.1, C=0.5)
    rep = solve_general(c, N_max=5, min_levels=5)
    y0 = [r["Y0"] for r in rep.history]
    assert y0[0] == 0.0
    assert all(b <= a + 1e-12 for a, b in zip(y0, y0[1:]))
    assert y0[-1] >= -0.1 - 1e-12
    assert rep.diagnostics["ladder_monotone"]
    assert_clean(rep)


def test_general_zero_generators():
    rng = np.random.default_rng(9)
    ens = tree(5)
    L = make("barrier", "brownian", ens, offset=-0.5, scale=0.5, lo=-1.0, hi=0.0)
    c = CoefficientSet.build(ens, xi=0.0, L=L, U=1.0)
    base = solve_zero_generator(c).solution
    rep = solve_general(c, N_max=3, min_levels=3)
    for lv in rep.levels:
        assert np.array_equal(lv.solution.Y.right, base.Y.right)
    assert rng is not None


def test_general_lipschitz_data_stabilise():
    ens = tree(6)
    f = make("f", "clipped_linear", ens, slope=0.5, intercept=-0.5)
    c = CoefficientSet.build(ens, xi=0.0, L=-1.0, U=1.0, f=f)
    rep = solve_general(c, N_max=6, tol=1e-12)
    Y2 = rep.levels[2].solution.Y.right
    for lv in rep.levels[2:]:
        assert np.max(np.abs(lv.solution.Y.right - Y2)) <= 1e-9


def test_general_rejects_out_of_box():
    ens = tree(2)
    f = make("f", "constant", ens, value=-0.1)
    c = CoefficientSet.build(ens, xi=0.0, L=-2.0, U=1.0, f=f)
    with pytest.raises(AdmissibilityError):
        solve_general(c)
    assert solve_general(c, raw=True, N_max=2).Y0 <= 0


def test_auto_regime():
    ens = tree(3, jumps=(1 / 3,))
    assert solve(CoefficientSet.build(ens)).regime == "zero"
    f = make("f", "constant", ens, value=-0.1)
    assert solve(CoefficientSet.build(ens, f=f, lipschitz=0.0)).regime == "picard"
    h = make("h", "constant", ens, value=-0.1)
    assert solve(CoefficientSet.build(ens, f=f, h=h, lipschitz=0.0)).regime == "concatenated"
    assert solve(CoefficientSet.build(ens, f=f), N_max=2).regime == "general"


def test_ladder_level_solution_below_previous():
    ens = tree(6, jumps=(0.5,))
    f = make("f", "quadratic_z", ens, C=2.0, eta=0.2)
    h = make("h", "constant", ens, value=-0.3)
    c = CoefficientSet.build(ens, xi=0.0, L=-1.0, U=1.0, f=f, h=h)
    prev = None
    for n in range(4):
        Y = solve_concatenated(c, method="direct", level=build_level(c, n)).solution.Y.right
        if prev is not None:
            assert np.all(on_valid(ens, Y - prev) <= 1e-12)
        prev = Y


# Dynkin oracle


def test_dynkin_trivial():
    assert dynkin_value_bruteforce(CoefficientSet.build(tree(3), xi=0.0, L=-1.0, U=1.0)) == 0.0


def test_dynkin_martingale_depth_two():
    ens = tree(2)
    c = CoefficientSet.build(ens, xi=ens.B[-1], L=-10.0, U=10.0)
    assert dynkin_value_bruteforce(c) == pytest.approx(0.0, abs=1e-15)


def test_dynkin_brownian_band_depth_four():
    ens = tree(4)
    L = make("barrier", "brownian", ens, offset=-0.5, scale=1.0)
    U = make("barrier", "brownian", ens, offset=0.5, scale=1.0)
    c = CoefficientSet.build(ens, xi=0.0, L=L, U=U)
    assert abs(dynkin_value_bruteforce(c) - solve_zero_generator(c).Y0) <= 1e-12


def test_dynkin_methods_agree():
    rng = np.random.default_rng(11)
    for _ in range(5):
        c = random_zero_set(rng, 3)
        a = dynkin_value_bruteforce(c, method="enumerate")
        b = dynkin_value_bruteforce(c, method="tree")
        assert abs(a - b) <= 1e-12


def test_dynkin_rejects_deep_trees():
    with pytest.raises(ValueError):
        dynkin_value_bruteforce(CoefficientSet.build(tree(7)))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_zero_sets_clean(seed):
    c = random_zero_set(np.random.default_rng(seed), 5)
    rep = solve_zero_generator(c)
    assert_clean(rep)
    assert abs(dynkin_value_bruteforce(c) - rep.Y0) <= 1e-12
