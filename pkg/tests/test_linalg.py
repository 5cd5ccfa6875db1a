import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dufm.linalg import (
    Rng,
    frobenius_sq,
    gaussian,
    jacobi_eigh,
    nuclear_norm,
    pseudo_inverse,
    relu,
    schatten_power,
    singular_values,
    symmetric_eig,
    thin_svd,
)

COUNTEREXAMPLE_A = np.array([[-1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(max_side=6):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def test_singular_values_diag_embedded():
    M = np.zeros((4, 2))
    M[0, 0], M[1, 1] = 3.0, 1.0
    np.testing.assert_allclose(singular_values(M), [3.0, 1.0], atol=1e-14)


def test_singular_values_zero():
    np.testing.assert_array_equal(singular_values(np.zeros((5, 2))), [0.0, 0.0])


def test_counterexample_matrix_norms():
    assert nuclear_norm(COUNTEREXAMPLE_A) == pytest.approx(3.464, abs=1e-3)
    assert nuclear_norm(relu(COUNTEREXAMPLE_A)) == pytest.approx(3.494, abs=1e-3)
    assert nuclear_norm(relu(COUNTEREXAMPLE_A)) > nuclear_norm(COUNTEREXAMPLE_A)


def test_schatten_diag():
    # independent route: eigenvalues of the Gram matrix from the Jacobi solver
    M = np.diag([3.0, 1.0])
    w, _ = jacobi_eigh(M.T @ M)
    expected = float(np.sum(np.sqrt(w) ** 0.5))
    assert schatten_power(M, 4) == pytest.approx(expected, rel=1e-14)
    assert schatten_power(M, 4) == pytest.approx(3**0.5 + 1.0, rel=1e-14)


def test_schatten_rejects_small_L():
    with pytest.raises(ValueError):
        schatten_power(np.eye(2), 1)


def test_schatten_two_is_nuclear():
    M = Rng(3).gaussian(5, 3)
    assert schatten_power(M, 2) == nuclear_norm(M)


def test_frobenius_sq():
    assert frobenius_sq(np.array([[1.0, 2.0], [3.0, 4.0]])) == 30.0


def test_pinv_identity_and_zero():
    np.testing.assert_allclose(pseudo_inverse(np.eye(3)), np.eye(3), atol=1e-15)
    Z = pseudo_inverse(np.zeros((2, 5)))
    assert Z.shape == (5, 2) and not Z.any()


def test_pinv_rejects_bad_tol():
    with pytest.raises(ValueError):
        pseudo_inverse(np.eye(2), rel_tol=0.0)


def test_pinv_penrose_identities():
    rng = Rng(11)
    for _ in range(20):
        M = rng.gaussian(4, 4)
        if np.linalg.cond(M) >= 1e3:
            continue
        P = pseudo_inverse(M)
        np.testing.assert_allclose(M @ P @ M, M, atol=1e-8)
        np.testing.assert_allclose(P @ M @ P, P, atol=1e-8)
        np.testing.assert_allclose((M @ P).T, M @ P, atol=1e-8)
        np.testing.assert_allclose((P @ M).T, P @ M, atol=1e-8)


def test_pinv_rank_deficient_matches_numpy():
    rng = Rng(5)
    M = rng.gaussian(6, 2) @ rng.gaussian(2, 5)
    np.testing.assert_allclose(pseudo_inverse(M), np.linalg.pinv(M, rcond=1e-10), atol=1e-10)


def test_thin_svd_reconstructs_with_numerical_rank():
    rng = Rng(2)
    M = rng.gaussian(5, 1) @ rng.gaussian(1, 4)
    U, s, Vt = thin_svd(M)
    assert s.size == 1
    np.testing.assert_allclose(U @ np.diag(s) @ Vt, M, atol=1e-12)


def test_relu_examples():
    np.testing.assert_array_equal(relu([[-1, 2], [0, -3]]), [[0, 2], [0, 0]])
    M = np.abs(Rng(0).gaussian(3, 3))
    np.testing.assert_array_equal(relu(M), M)


@given(matrices())
def test_relu_idempotent(M):
    np.testing.assert_array_equal(relu(relu(M)), relu(M))


def test_relu_two_column_nuclear_monotone():
    rng = Rng(1)
    for _ in range(10_000):
        M = rng.gaussian(int(rng.integers(2, 9)), 2)
        assert nuclear_norm(relu(M)) <= nuclear_norm(M) + 1e-12


def test_gaussian_std_zero_and_determinism():
    assert not gaussian(Rng(1), 3, 4, 0.0).any()
    np.testing.assert_array_equal(gaussian(Rng(9), 3, 4, 1.0), gaussian(Rng(9), 3, 4, 1.0))
    with pytest.raises(ValueError):
        gaussian(Rng(1), 2, 2, -1.0)


def test_gaussian_variance():
    x = gaussian(Rng(123), 1, 100_000, 1.0)
    assert abs(x.var() - 1.0) < 0.05


@given(matrices())
@settings(max_examples=60)
def test_singular_values_match_numpy(M):
    np.testing.assert_allclose(singular_values(M), np.linalg.svd(M, compute_uv=False), atol=1e-10 * (1 + np.abs(M).max()))


@given(matrices())
@settings(max_examples=60)
def test_jacobi_matches_lapack(M):
    S = M.T @ M
    w_j, V = jacobi_eigh(S)
    w_l, _ = symmetric_eig(S)
    scale = 1 + np.abs(S).max()
    np.testing.assert_allclose(w_j, w_l, atol=1e-11 * scale)
    np.testing.assert_allclose(V @ np.diag(w_j) @ V.T, S, atol=1e-11 * scale)
    np.testing.assert_allclose(V.T @ V, np.eye(S.shape[0]), atol=1e-12)


def test_jacobi_singular_values_on_64x64():
    M = Rng(4).gaussian(64, 64)
    np.testing.assert_allclose(singular_values(M, "jacobi"), singular_values(M), rtol=1e-9, atol=1e-9)


def test_unknown_method():
    with pytest.raises(ValueError):
        singular_values(np.eye(2), method="qr")


def test_orthogonal_invariance():
    rng = Rng(8)
    for _ in range(20):
        M = rng.gaussian(5, 3)
        Q, _ = np.linalg.qr(rng.gaussian(5, 5))
        np.testing.assert_allclose(singular_values(Q @ M), singular_values(M), atol=1e-9)


def test_rejects_non_finite_and_non_matrix():
    with pytest.raises(ValueError):
        singular_values(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        singular_values(np.ones(3))
