import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stafnet.core_math import (
    Rng,
    check_symmetric,
    kron,
    matmul,
    sample_laplace,
    sample_uniform,
    sym_eig,
)
from stafnet.errors import CapacityError, NumericError, RangeError, ShapeError, ValidationError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def small_matrix(rows=st.integers(1, 4), cols=st.integers(1, 4)):
    return st.tuples(rows, cols).flatmap(lambda s: arrays(np.float64, s, elements=finite))


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_zero_vector(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [0]]), [[0], [0]])

    def test_hand_computed(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_associative(self, a, b, c, d, seed):
        g = np.random.default_rng(seed)
        x, y, z = g.normal(size=(a, b)), g.normal(size=(b, c)), g.normal(size=(c, d))
        np.testing.assert_allclose(matmul(matmul(x, y), z), matmul(x, matmul(y, z)), atol=1e-10)


class TestKron:
    def test_scalar_one(self):
        m = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(kron([[1.0]], m), m)

    def test_scalar_scaling(self):
        np.testing.assert_array_equal(kron([[2.0]], np.eye(2)), 2 * np.eye(2))

    def test_vectors(self):
        a, b, c, d = 2.0, 3.0, 5.0, 7.0
        np.testing.assert_array_equal(kron([[a], [b]], [[c], [d]]).ravel(), [a * c, a * d, b * c, b * d])

    def test_index_law(self, rng):
        x, y = rng.normal(size=(3, 2)), rng.normal(size=(2, 4))
        k = kron(x, y)
        assert k.shape == (6, 8)
        for i in range(6):
            for j in range(8):
                assert k[i, j] == x[i // 2, j // 4] * y[i % 2, j % 4]

    def test_matches_numpy(self, rng):
        x, y = rng.normal(size=(3, 5)), rng.normal(size=(4, 2))
        np.testing.assert_array_equal(kron(x, y), np.kron(x, y))

    def test_capacity(self):
        big = np.broadcast_to(np.zeros((1, 1)), (1 << 16, 1))
        with pytest.raises(CapacityError):
            kron(big, np.zeros((1 << 16, 1)))

    @given(small_matrix(), small_matrix(), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_mixed_product(self, a, b, p, q, seed):
        g = np.random.default_rng(seed)
        c = g.normal(size=(a.shape[1], p))
        d = g.normal(size=(b.shape[1], q))
        lhs = kron(a, b) @ kron(c, d)
        rhs = kron(a @ c, b @ d)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10 * max(1.0, np.max(np.abs(rhs))))


class TestSymEig:
    def test_diagonal(self):
        r = sym_eig(np.diag([3.0, 1.0]))
        np.testing.assert_array_equal(r.eigenvalues, [3.0, 1.0])
        np.testing.assert_array_equal(r.eigenvectors, np.eye(2))

    def test_classic_2x2(self):
        r = sym_eig([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(r.eigenvalues, [3.0, 1.0], atol=1e-14)
        s = 1 / np.sqrt(2)
        np.testing.assert_allclose(np.abs(r.eigenvectors), [[s, s], [s, s]], atol=1e-14)
        np.testing.assert_allclose(r.eigenvectors[:, 0], [s, s], atol=1e-14)

    def test_reconstruction_8x8(self, rng):
        a = rng.normal(size=(8, 8))
        m = a + a.T
        r = sym_eig(m)
        v, w = r.eigenvectors, r.eigenvalues
        assert np.linalg.norm(m - v @ np.diag(w) @ v.T) <= 1e-8 * np.linalg.norm(m)
        np.testing.assert_allclose(v.T @ v, np.eye(8), atol=1e-8)
        assert np.all(np.diff(w) <= 0)

    def test_agrees_with_lapack(self, rng):
        a = rng.normal(size=(12, 12))
        m = a @ a.T
        np.testing.assert_allclose(sym_eig(m).eigenvalues, np.linalg.eigvalsh(m)[::-1], rtol=1e-10, atol=1e-10)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            sym_eig([[1.0, 2.0], [0.0, 1.0]])

    def test_rejects_non_square(self):
        with pytest.raises(ValidationError):
            check_symmetric(np.ones((2, 3)))

    def test_sweep_cap(self, rng):
        a = rng.normal(size=(6, 6))
        with pytest.raises(NumericError):
            sym_eig(a + a.T, max_sweeps=1)

    @given(st.integers(1, 7), st.integers(0, 2**32 - 1))
    def test_invariants(self, n, seed):
        a = np.random.default_rng(seed).normal(size=(n, n))
        m = a + a.T
        r = sym_eig(m)
        w, v = r.eigenvalues, r.eigenvectors
        scale = max(np.linalg.norm(m), 1e-300)
        assert np.linalg.norm(m - (v * w) @ v.T) <= 1e-8 * scale
        np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-8)
        assert abs(np.sum(w) - np.trace(m)) <= 1e-8 * max(np.sum(np.abs(w)), 1e-300)
        assert np.all(np.diff(w) <= 0)


class TestRng:
    def test_uniform_range(self):
        r = Rng(0)
        x = sample_uniform(r, 0.0, 1.0, 10000)
        assert np.all((x >= 0.0) & (x < 1.0))
        assert 0.0 <= sample_uniform(r, 0.0, 1.0) < 1.0

    def test_uniform_never_hits_upper_bound(self):
        class Ones(Rng):
            def random(self, size=None):
                return np.full(size, 1.0) if size is not None else 1.0

        assert sample_uniform(Ones(0), -1.0, 1.0) < 1.0
        assert np.all(sample_uniform(Ones(0), -1.0, 1.0, 3) < 1.0)

    def test_determinism(self):
        a = sample_uniform(Rng(42), 0.0, 1.0, 5)
        b = sample_uniform(Rng(42), 0.0, 1.0, 5)
        np.testing.assert_array_equal(a, b)

    def test_spawn_is_deterministic_and_distinct(self):
        a, b = Rng(7).spawn(1).random(4), Rng(7).spawn(1).random(4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, Rng(7).spawn(2).random(4))

    def test_uniform_mean_clt(self):
        x = sample_uniform(Rng(3), -np.pi, np.pi, 10**6)
        assert abs(x.mean()) < 4 * 2 * np.pi / np.sqrt(12 * 10**6)

    def test_uniform_bad_range(self):
        with pytest.raises(RangeError):
            sample_uniform(Rng(0), 1.0, 1.0)

    def test_laplace_moments(self):
        x = sample_laplace(Rng(5), 1.0, 10**6)
        assert abs(np.mean(np.abs(x)) - 1.0) < 0.01
        assert abs(np.mean(x * x) - 2.0) < 0.04
        assert 0.495 <= np.mean(x < 0) <= 0.505

    def test_laplace_bad_scale(self):
        with pytest.raises(RangeError):
            sample_laplace(Rng(0), 0.0)
