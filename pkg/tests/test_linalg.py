import numpy as np
import pytest
from hypothesis import given, strategies as st

from sibi.linalg import jacobi_eigh


def random_hermitian(n, seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(n, n)) + 1j * r.normal(size=(n, n))
    return a + a.conj().T


@given(st.integers(1, 24), st.integers(0, 2**32 - 1))
def test_matches_lapack(n, seed):
    H = random_hermitian(n, seed)
    w, V = jacobi_eigh(H)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(H), atol=1e-11 * np.abs(H).max())
    np.testing.assert_allclose(H @ V, V * w, atol=1e-10 * np.abs(H).max())


@given(st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_eigenvectors_unitary(n, seed):
    _, V = jacobi_eigh(random_hermitian(n, seed))
    assert np.abs(V.conj().T @ V - np.eye(n)).max() < 1e-10


def test_ascending_and_degenerate():
    H = np.diag([3.0, 1.0, 1.0, -2.0]).astype(complex)
    w, V = jacobi_eigh(H)
    assert list(w) == [-2.0, 1.0, 1.0, 3.0]
    assert np.allclose(np.abs(V.conj().T @ V), np.eye(4))


def test_zero_and_scalar():
    w, V = jacobi_eigh(np.zeros((3, 3)))
    assert np.all(w == 0) and np.allclose(V, np.eye(3))
    w, _ = jacobi_eigh([[2.5]])
    assert w[0] == 2.5


def test_rejects_non_square():
    with pytest.raises(ValueError):
        jacobi_eigh(np.zeros((2, 3)))
