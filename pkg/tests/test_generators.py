import numpy as np
import pytest
from hypothesis import given, strategies as st

from grbsde.core import AdmissibilityError, is_zero
from grbsde.generators import catalog, make

from helpers import tree


def test_catalog_sorted_and_complete():
    keys = [(f.kind, f.name) for f in catalog()]
    assert keys == sorted(keys)
    for need in [("f", "constant"), ("f", "clipped_linear"), ("f", "quadratic_z"), ("barrier", "brownian"),
                 ("barrier", "pinch"), ("h", "affine")]:
        assert need in keys
    assert "C" in dict(((f.kind, f.name), f) for f in catalog())[("f", "quadratic_z")].params


def test_unknown_names_and_parameters():
    ens = tree(2)
    with pytest.raises(ValueError):
        make("f", "cubic", ens)
    with pytest.raises(ValueError):
        make("f", "constant", ens, slope=1.0)


def test_admissibility_guards():
    ens = tree(2)
    with pytest.raises(AdmissibilityError):
        make("h", "affine", ens, b=-1.5)
    with pytest.raises(AdmissibilityError):
        make("f", "quadratic_z", ens, C=-1.0)
    with pytest.raises(AdmissibilityError):
        make("integrator", "linear", ens, rate=-0.1)


def test_zero_families_are_flagged():
    ens = tree(2)
    assert is_zero(make("f", "zero", ens)) and is_zero(make("h", "zero", ens))
    assert not is_zero(make("f", "constant", ens))


def test_pinch_barrier():
    ens = tree(4, jumps=(0.5,))
    U = make("barrier", "pinch", ens, t_star=0.5, value=1.0, at=0.0)
    assert np.all(U.left[2] == 0.0) and np.all(U.right[2] == 1.0)
    assert np.all(np.delete(U.left, 2, axis=0) == 1.0)


def test_table_barrier_length():
    ens = tree(2)
    assert np.allclose(make("barrier", "table", ens, right=[0.1, 0.2, 0.3]).right[:, 0], [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        make("barrier", "table", ens, right=[0.1, 0.2])


def test_forcing_jumps():
    ens = tree(4)
    R = make("forcing", "deterministic", ens, rate=0.4, jump_times=[1.0], jump_sizes=[-0.3])
    assert np.allclose(R.continuous, 0.1) and R.jumps[4] == pytest.approx(-0.3)
    with pytest.raises(ValueError):
        make("forcing", "deterministic", ens, jump_times=[0.0], jump_sizes=[1.0])


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 3), st.floats(0, 1))
def test_generator_values(y, z, C, eta):
    ens = tree(2)
    k = np.arange(3)
    assert np.allclose(make("f", "quadratic_z", ens, C=C, eta=eta)(0, k, y, z), -eta - C * z * z)
    cl = make("f", "clipped_linear", ens, slope=0.3, intercept=-0.4)(0, k, y, z)
    assert np.allclose(cl, 0.3 * np.clip(y, -1, 1) - 0.4)
    h = make("h", "affine", ens, a=0.2, b=-0.5, c=-0.1)
    y2 = y + 1.0
    # y + h(x, y) nondecreasing in y
    assert np.all(y2 + h(0, k, 0.3, y2) >= y + h(0, k, 0.3, y) - 1e-12)
