import numpy as np
import pytest

from linalg import (NonFiniteError, ShapeError, SingularMatrix, as_mat, as_vec, finite_diff_jacobian,
                    solve_linear, sym_eig_bounds)


def test_eig_bounds_of_diagonal_matrix():
    bounds = sym_eig_bounds(np.diag([3.0, -1.0, 2.0]))
    assert bounds.lambda_min == pytest.approx(-1.0)
    assert bounds.lambda_max == pytest.approx(3.0)
    assert bounds.asymmetry == 0.0


def test_eig_bounds_use_symmetric_part():
    # skew part is ignored, asymmetry is still reported
    bounds = sym_eig_bounds(np.array([[0.0, 2.0], [-2.0, 0.0]]))
    assert bounds.lambda_min == pytest.approx(0.0, abs=1e-12)
    assert bounds.lambda_max == pytest.approx(0.0, abs=1e-12)
    assert bounds.asymmetry == pytest.approx(np.sqrt(32.0))


def test_eig_bounds_random_matrices_bracket_rayleigh_quotients(rng):
    for _ in range(100):
        n = int(rng.integers(1, 6))
        M = rng.normal(size=(n, n))
        bounds = sym_eig_bounds(M)
        assert bounds.lambda_min <= bounds.lambda_max + 1e-12
        v = rng.normal(size=n)
        quotient = v @ M @ v / (v @ v)
        assert bounds.lambda_min - 1e-9 <= quotient <= bounds.lambda_max + 1e-9


def test_eig_bounds_rejects_non_square_and_nan():
    with pytest.raises(ShapeError):
        sym_eig_bounds(np.ones((2, 3)))
    with pytest.raises(NonFiniteError):
        sym_eig_bounds(np.array([[np.nan]]))


def test_solve_linear_matches_numpy(rng):
    for _ in range(100):
        n = int(rng.integers(1, 6))
        A = rng.normal(size=(n, n)) + n * np.eye(n)
        b = rng.normal(size=n)
        solution = solve_linear(A, b, estimate_condition=True)
        np.testing.assert_allclose(A @ solution.x, b, atol=1e-9)
        assert solution.condition >= 1.0


def test_solve_linear_scalar_and_singular():
    assert solve_linear([[4.0]], [2.0]).x == pytest.approx([0.5])
    assert solve_linear(np.eye(2), np.ones(2)).condition is None
    with pytest.raises(SingularMatrix):
        solve_linear([[0.0]], [1.0])
    with pytest.raises(SingularMatrix):
        solve_linear(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_solve_linear_shape_mismatch():
    with pytest.raises(ShapeError):
        solve_linear(np.eye(2), np.ones(3))


def test_finite_diff_jacobian_of_smooth_map():
    fn = lambda x: np.array([np.sin(x[0]) * x[1], x[0] ** 2])
    x = np.array([0.3, -1.2])
    expected = np.array([[np.cos(0.3) * -1.2, np.sin(0.3)], [0.6, 0.0]])
    np.testing.assert_allclose(finite_diff_jacobian(fn, x), expected, atol=1e-8)


def test_finite_diff_jacobian_reports_nan_point():
    with pytest.raises(NonFiniteError) as info:
        finite_diff_jacobian(lambda x: np.log(x), np.array([0.0]))
    assert info.value.point is not None


def test_as_vec_and_as_mat_validation():
    assert as_vec(2.0).shape == (1,)
    assert as_mat(2.0).shape == (1, 1)
    with pytest.raises(ShapeError):
        as_vec(np.ones((2, 2)))
    with pytest.raises(NonFiniteError):
        as_vec([1.0, np.inf])
