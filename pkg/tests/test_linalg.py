import numpy as np
import pytest
import scipy.sparse as sp

from graph.linalg import ShapeError, all_finite, as_dense, as_sparse, densify, elementwise, matmul, mean_abs, spmm


def random_sparse_and_dense(seed):
    rng = np.random.default_rng(seed)
    n, m, k = rng.integers(1, 12, size=3)
    s = sp.csr_array(rng.normal(size=(n, m)) * (rng.random((n, m)) < rng.uniform(0.0, 1.0)))
    return as_sparse(s), rng.normal(size=(m, k))


@pytest.mark.parametrize('seed', range(100))
def test_spmm_matches_dense(seed):
    s, d = random_sparse_and_dense(seed)
    np.testing.assert_allclose(spmm(s, d), densify(s) @ d, atol=1e-12)


@pytest.mark.parametrize('seed', range(100))
def test_spmm_transpose(seed):
    s, d = random_sparse_and_dense(seed)
    np.testing.assert_allclose(spmm(s, d).T, matmul(d.T, densify(as_sparse(s.T))), atol=1e-12)


def test_spmm_shape_mismatch():
    with pytest.raises(ShapeError):
        spmm(as_sparse(np.eye(3)), np.ones((4, 2)))


def test_spmm_identity():
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(spmm(as_sparse(np.eye(3)), x), x)


def test_matmul_shapes():
    assert matmul(np.ones((2, 3)), np.ones((3, 4))).shape == (2, 4)
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_elementwise_ops():
    a = np.array([[1.0, -2.0], [3.0, -4.0]])
    np.testing.assert_array_equal(elementwise('add', a, a), 2 * a)
    np.testing.assert_array_equal(elementwise('sub', a, a), np.zeros_like(a))
    np.testing.assert_array_equal(elementwise('scale', a, 0.5), a / 2)
    np.testing.assert_array_equal(elementwise('hadamard', a, a), a * a)
    np.testing.assert_array_equal(elementwise('relu', a), [[1, 0], [3, 0]])
    np.testing.assert_array_equal(elementwise('relu_mask', a), [[1, 0], [1, 0]])


def test_elementwise_row_broadcast_only():
    a = np.ones((3, 2))
    np.testing.assert_array_equal(elementwise('add', a, np.array([1.0, 2.0])), [[2, 3]] * 3)
    with pytest.raises(ShapeError):
        elementwise('add', a, np.ones((3, 1)))
    with pytest.raises(ShapeError):
        elementwise('scale', a, np.ones(2))
    with pytest.raises(ValueError):
        elementwise('pow', a, a)


def test_mean_abs_and_finiteness():
    assert mean_abs(np.array([[1.0, -3.0]])) == 2.0
    assert mean_abs(np.zeros((0, 3))) == 0.0
    assert all_finite(np.ones(3))
    assert not all_finite(np.array([1.0, np.inf]))
    assert all_finite(as_sparse(np.eye(2)))


def test_as_dense_promotes_vector():
    assert as_dense([1, 2, 3]).shape == (1, 3)
    assert as_dense(np.ones((2, 2))).flags['C_CONTIGUOUS']
