import numpy as np
import pytest
from numpy.testing import assert_allclose

from lowrank_sde.errors import DimensionMismatch, NotPSD, RankDeficient
from lowrank_sde.linalg import reduced_qr, solve_spsd_minnorm, sym_eig


class TestReducedQR:
    def test_identity(self):
        q, r = reduced_qr(np.eye(3))
        assert_allclose(q, np.eye(3), atol=1e-15)
        assert_allclose(r, np.eye(3), atol=1e-15)

    def test_single_column_hand_values(self):
        # norm of (3, 4) is 5, so q = (0.6, 0.8), r = (5)
        q, r = reduced_qr(np.array([[3.0], [4.0]]))
        assert_allclose(q, np.array([[0.6], [0.8]]), rtol=1e-15)
        assert_allclose(r, np.array([[5.0]]), rtol=1e-15)

    def test_reconstruction_and_orthonormality(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            n = rng.integers(2, 12)
            k = rng.integers(1, n + 1)
            a = rng.standard_normal((n, k))
            q, r = reduced_qr(a)
            assert_allclose(q.T @ q, np.eye(k), atol=1e-12)
            assert np.linalg.norm(q @ r - a) <= 1e-12 * np.linalg.norm(a)

    def test_sign_convention_positive_diagonal(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.standard_normal((6, 4))
            _, r = reduced_qr(a)
            assert np.all(np.diagonal(r) > 0)
            # strict upper triangularity below the diagonal
            assert_allclose(np.tril(r, -1), 0.0, atol=1e-14)

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((8, 3))
        q1, r1 = reduced_qr(a)
        q2, r2 = reduced_qr(a.copy())
        assert np.array_equal(q1, q2)
        assert np.array_equal(r1, r2)

    def test_zero_column_raises_with_index(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(RankDeficient) as exc:
            reduced_qr(a)
        assert exc.value.column == 1

    def test_duplicated_column_raises(self):
        col = np.array([1.0, 2.0, 3.0])
        a = np.stack([col, col], axis=1)
        with pytest.raises(RankDeficient):
            reduced_qr(a)

    def test_wide_input_rejected(self):
        with pytest.raises(DimensionMismatch):
            reduced_qr(np.ones((2, 3)))


class TestSymEig:
    def test_diagonal(self):
        eig = sym_eig(np.diag([3.0, 1.0]))
        assert_allclose(eig.eigenvalues, [3.0, 1.0])

    def test_hand_two_by_two(self):
        # characteristic polynomial of [[2,1],[1,2]]: (2-l)^2 - 1, roots 3 and 1
        eig = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert_allclose(eig.eigenvalues, [3.0, 1.0], rtol=1e-14)

    def test_zero_matrix(self):
        eig = sym_eig(np.zeros((4, 4)))
        assert_allclose(eig.eigenvalues, np.zeros(4))

    def test_descending_order_and_reconstruction(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            k = rng.integers(2, 9)
            c = rng.standard_normal((k, k))
            c = c + c.T
            eig = sym_eig(c)
            assert np.all(np.diff(eig.eigenvalues) <= 1e-14)
            rebuilt = eig.eigenvectors @ np.diag(eig.eigenvalues) @ eig.eigenvectors.T
            assert np.linalg.norm(rebuilt - c) <= 1e-12 * max(np.linalg.norm(c), 1.0)
            assert_allclose(eig.eigenvectors.T @ eig.eigenvectors, np.eye(k), atol=1e-12)

    def test_asymmetric_rounding_tolerated(self):
        c = np.array([[2.0, 1.0 + 1e-13], [1.0, 2.0]])
        eig = sym_eig(c)
        assert_allclose(eig.eigenvalues, [3.0, 1.0], rtol=1e-12)

    def test_non_square_rejected(self):
        with pytest.raises(DimensionMismatch):
            sym_eig(np.ones((2, 3)))


class TestSolveSpsdMinnorm:
    def test_identity_gramian(self):
        b = np.arange(6.0).reshape(2, 3)
        assert_allclose(solve_spsd_minnorm(np.eye(2), b), b, rtol=1e-14)

    def test_singular_diagonal_pseudo_inverse(self):
        c = np.diag([1.0, 0.0])
        b = np.ones((2, 2))
        expected = np.array([[1.0, 1.0], [0.0, 0.0]])
        assert_allclose(solve_spsd_minnorm(c, b), expected, atol=1e-15)

    def test_forward_multiply_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k = 4
            g = rng.standard_normal((k, k))
            c = g @ g.T + 0.5 * np.eye(k)
            x0 = rng.standard_normal((k, 6))
            x = solve_spsd_minnorm(c, c @ x0)
            assert np.linalg.norm(x - x0) <= 1e-8 * np.linalg.norm(x0)

    def test_agrees_with_direct_solve_when_spd(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            k = int(rng.integers(2, 7))
            g = rng.standard_normal((k, k))
            c = g @ g.T + np.eye(k)
            b = rng.standard_normal((k, 3))
            x = solve_spsd_minnorm(c, b)
            direct = np.linalg.solve(c, b)
            resid = np.linalg.norm(c @ x - b) / np.linalg.norm(b)
            assert resid <= 1e-10
            assert_allclose(x, direct, rtol=1e-8, atol=1e-12)

    def test_minimal_norm_among_solutions(self):
        # C = v v^T has null space orthogonal to v; the min-norm solution of
        # C X = C B must have rows orthogonal to the null space
        v = np.array([[1.0], [1.0]]) / np.sqrt(2.0)
        c = v @ v.T
        b = np.array([[2.0, 0.0], [0.0, 0.0]])
        x = solve_spsd_minnorm(c, c @ b)
        null = np.array([1.0, -1.0]) / np.sqrt(2.0)
        assert np.linalg.norm(null @ x) <= 1e-12

    def test_negative_eigenvalue_raises(self):
        c = np.diag([1.0, -1e-3])
        with pytest.raises(NotPSD):
            solve_spsd_minnorm(c, np.ones((2, 1)))

    def test_tiny_negative_rounding_tolerated(self):
        c = np.diag([1.0, -1e-14])
        x = solve_spsd_minnorm(c, np.ones((2, 1)))
        assert np.all(np.isfinite(x))

    def test_zero_matrix_returns_zero(self):
        x = solve_spsd_minnorm(np.zeros((3, 3)), np.ones((3, 2)))
        assert_allclose(x, np.zeros((3, 2)))

    def test_threshold_truncates_small_modes(self):
        c = np.diag([1.0, 1e-15])
        b = np.ones((2, 1))
        x = solve_spsd_minnorm(c, b, rel_threshold=1e-12)
        # the 1e-15 mode sits below 1e-12 * 1 and must be zeroed, not amplified
        assert_allclose(x, np.array([[1.0], [0.0]]), atol=1e-14)

    def test_shape_checks(self):
        with pytest.raises(DimensionMismatch):
            solve_spsd_minnorm(np.eye(2), np.ones((3, 1)))
        with pytest.raises(DimensionMismatch):
            solve_spsd_minnorm(np.ones((2, 3)), np.ones((2, 1)))
