import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridlqr import (
    LinearHybridSystem,
    apply_reset,
    beating_flag,
    has_war,
    invariant_guard_report,
    is_trivially_blocking,
)
from hybridlqr.errors import SingularJumpMap
from hybridlqr.guard_analysis import check_containment, inverse_power_covectors
from hybridlqr.presets import mechanical, section6

from helpers import blocking_dims_direct, random_invertible


def test_planar_example_is_trivially_blocking():
    for a in (0.75, 1.25):
        p = section6(a)
        assert is_trivially_blocking(p.system.C, p.system.lam)
        flag = beating_flag(p.system.C, p.system.lam)
        assert flag.dims[:2] == [1, 0]
        assert flag.blocking_dim == 0


def test_cyclic_reset_beating_sets():
    C = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    flag = beating_flag(C, [0.0, 0.0, 1.0])
    assert flag.dims == [2, 1, 0, 0]
    assert flag.trivially_blocking
    assert flag.depth_of([0.0, 1.0, 0.0]) == 1
    assert flag.depth_of([1.0, 1.0, 0.0]) == 0
    assert flag.depth_of([0.0, 0.0, 1.0]) == -1


def test_depth_agrees_with_reset_orbit():
    rng = np.random.default_rng(3)
    C = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    sys = LinearHybridSystem(np.zeros((3, 3)), np.zeros((3, 0)), C, [0.0, 0.0, 1.0])
    flag = beating_flag(C, sys.lam)
    for x in ([1.0, 0.0, 0.0], [1.0, 2.0, 0.0], [0.0, 1.0, 0.0]):
        x_post, depth = apply_reset(sys, x)
        assert flag.depth_of(np.linalg.matrix_power(C, depth) @ np.array(x)) >= depth
        assert flag.depth_of(x_post) == -1
    for _ in range(20):
        x = np.array([*rng.normal(size=2), 0.0])
        assert apply_reset(sys, x)[1] == 0


def test_covectors_are_inverse_powers():
    rng = np.random.default_rng(0)
    C = random_invertible(rng, 4)
    lam = rng.normal(size=4)
    rows = inverse_power_covectors(C, lam, 4)
    for j, row in enumerate(rows):
        np.testing.assert_allclose(row, lam @ np.linalg.matrix_power(np.linalg.inv(C), j), rtol=1e-12, atol=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_flag_dims_match_direct_iteration(seed, n):
    rng = np.random.default_rng(seed)
    C = random_invertible(rng, n)
    lam = rng.normal(size=n)
    flag = beating_flag(C, lam)
    dims = blocking_dims_direct(C, lam)
    assert flag.dims[: len(dims)] == dims[: len(flag.dims)]
    assert all(a >= b for a, b in zip(flag.dims, flag.dims[1:]))


def test_left_eigenvector_gives_large_blocking_set():
    rng = np.random.default_rng(1)
    n = 4
    C0 = random_invertible(rng, n)
    lam = rng.normal(size=n)
    C = C0 + np.outer(lam, 0.8 * lam - lam @ C0) / (lam @ lam)
    flag = beating_flag(C, lam)
    assert flag.dims[1] == n - 1
    assert flag.blocking_dim == n - 1
    assert not is_trivially_blocking(C, lam)


def test_random_dim_sigma1_is_n_minus_2():
    rng = np.random.default_rng(2)
    flag = beating_flag(random_invertible(rng, 4), rng.normal(size=4))
    assert flag.dims[1] == 2


def test_singular_reset_rejected():
    C = np.diag([1.0, 0.0])
    with pytest.raises(SingularJumpMap):
        is_trivially_blocking(C, [1.0, 0.0])
    with pytest.raises(SingularJumpMap):
        beating_flag(C, [1.0, 0.0])


def test_invariant_guard_of_mechanical_system():
    one = mechanical([[-1.0]], [[0.0]], [[1.0]], [1.0]).system
    assert invariant_guard_report(one.A, one.C, one.lam).sigma_A_basis.shape[1] == 0
    two = mechanical([[-1.0, 0.2], [0.2, -2.0]], np.zeros((2, 2)), [[1.0], [0.5]], [1.0, -1.0]).system
    report = invariant_guard_report(two.A, two.C, two.lam)
    basis = report.sigma_A_basis
    assert basis.shape[1] == 2
    np.testing.assert_allclose(two.lam @ basis, 0.0, atol=1e-12)
    np.testing.assert_allclose(two.lam @ two.A @ basis, 0.0, atol=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 5))
def test_invariant_beating_sets_are_contained(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    C = random_invertible(rng, n)
    lam = rng.normal(size=n)
    report = invariant_guard_report(A, C, lam)
    flag = beating_flag(C, lam)
    assert check_containment(report, flag)
    assert all(d <= flag.dims[k] for k, d in enumerate(report.dims))


def test_weakly_actuated_resets():
    assert has_war([[0.0], [1.0]], [1.0, 0.0])
    assert not has_war([[0.3], [1.0]], [1.0, 0.0])
    assert has_war(np.zeros((2, 0)), [1.0, 0.0])
    assert not has_war([[0.0], [1.0]], [0.0, 1.0])
