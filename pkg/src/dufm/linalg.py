"""Dense real-matrix kernels.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Spectral
quantities (singular values, thin SVD, pseudo-inverse, Schatten norms) have
two backends: LAPACK through numpy (the default, a direct SVD) and a cyclic
Jacobi eigensolver implemented here, applied to the smaller Gram matrix.
The Gram route squares the condition number, so singular values below about
``1e-8 * s_max`` are noise there; it serves as an independent cross-check.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = [
    "PRNG_NAME",
    "Rng",
    "as_matrix",
    "frobenius_sq",
    "gaussian",
    "jacobi_eigh",
    "nuclear_norm",
    "pseudo_inverse",
    "relu",
    "schatten_power",
    "singular_values",
    "symmetric_eig",
    "thin_svd",
]

PRNG_NAME = "numpy.random.PCG64"
JACOBI_TOL = 1e-13
PINV_REL_TOL = 1e-10
EIG_METHODS = ("lapack", "jacobi")


def as_matrix(M, name: str = "M") -> np.ndarray:
    """Validate ``M`` as a finite 2-D float64 array and return it."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # Tournament schedule: each round is a set of disjoint (p, q) pairs and
    # every pair appears exactly once per sweep.
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return tuple(rounds)


def jacobi_eigh(S, tol: float = JACOBI_TOL, max_sweeps: int = 60):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Rotations within one round of the tournament ordering act on disjoint
    index pairs, so they are applied together.

    Parameters
    ----------
    S : array_like of shape (n, n)
        Symmetric matrix. Only the symmetric part is used.
    tol : float
        Iteration stops once the Frobenius norm of the off-diagonal part is
        at most ``tol`` times the trace of ``|diag(S)|``.
    max_sweeps : int
        Hard cap on full sweeps.

    Returns
    -------
    w : ndarray of shape (n,)
        Eigenvalues, sorted non-increasingly.
    V : ndarray of shape (n, n)
        Orthonormal eigenvectors as columns, ``S @ V ~= V * w``.
    """
    A = as_matrix(S, "S")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError(f"S must be square, got {A.shape}")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.abs(np.diag(A)).sum()
    if n == 1 or scale == 0.0 and not A.any():
        return _sorted_eig(np.diag(A).copy(), V)
    scale = max(scale, np.abs(A).max())
    rounds = _round_robin(n)
    J = np.eye(n)
    for _ in range(max_sweeps):
        # direct sum; |A|^2 - |diag A|^2 cancels catastrophically near convergence
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = A[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore"):
                # a denormal a_pq overflows tau to inf, which correctly gives t = 0
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.hypot(1.0, t)
            s = t * c
            # One orthogonal matrix carries every rotation of the round.
            J[p, p] = c
            J[q, q] = c
            J[p, q] = s
            J[q, p] = -s
            A = J.T @ A @ J
            V = V @ J
            J[p, p] = 1.0
            J[q, q] = 1.0
            J[p, q] = 0.0
            J[q, p] = 0.0
    return _sorted_eig(np.diag(A).copy(), V)


def _sorted_eig(w, V):
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def symmetric_eig(S, method: str = "lapack"):
    """Eigenvalues (non-increasing) and eigenvectors of a symmetric matrix."""
    if method == "jacobi":
        return jacobi_eigh(S)
    if method != "lapack":
        raise ValueError(f"unknown eigensolver {method!r}; expected one of {EIG_METHODS}")
    A = as_matrix(S, "S")
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    return w[::-1], V[:, ::-1]


def _gram_eig(A: np.ndarray, method: str = "lapack"):
    # Eigenpairs of the smaller Gram matrix; ``tall`` tells which side it is.
    tall = A.shape[0] >= A.shape[1]
    G = A.T @ A if tall else A @ A.T
    w, V = symmetric_eig(G, method)
    # round-off can push zero eigenvalues slightly negative
    return np.sqrt(np.maximum(w, 0.0)), V, tall


def _check_method(method: str):
    if method not in EIG_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {EIG_METHODS}")


def singular_values(M, method: str = "lapack") -> np.ndarray:
    """All ``min(rows, cols)`` singular values of ``M``, non-increasing."""
    _check_method(method)
    A = as_matrix(M)
    if method == "lapack":
        return np.linalg.svd(A, compute_uv=False)
    return _gram_eig(A, method)[0]


def thin_svd(M, rel_tol: float = PINV_REL_TOL, method: str = "lapack"):
    """Rank-revealing thin SVD ``M = U @ diag(s) @ Vt``.

    Singular values at or below ``rel_tol * s_max`` are dropped, so ``U`` has
    ``r`` columns where ``r`` is the numerical rank. A zero matrix yields
    ``r = 0`` and empty factors.
    """
    _check_method(method)
    A = as_matrix(M)
    if method == "lapack":
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        keep = s > rel_tol * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
        return U[:, keep], s[keep], Vt[keep]
    s, Q, tall = _gram_eig(A, method)
    keep = s > rel_tol * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    s, Q = s[keep], Q[:, keep]
    if tall:
        V = Q
        U = (A @ V) / s
    else:
        U = Q
        V = (A.T @ U) / s
    return U, s, V.T


def frobenius_sq(M) -> float:
    A = as_matrix(M)
    return float(np.sum(A * A))


def nuclear_norm(M) -> float:
    """Sum of singular values."""
    return float(np.sum(singular_values(M)))


def schatten_power(M, L: int) -> float:
    """``sum_i s_i ** (2 / L)``, i.e. the Schatten-(2/L) quasi-norm raised to 2/L."""
    if int(L) != L or L < 2:
        raise ValueError(f"L must be an integer >= 2, got {L}")
    if L == 2:
        return nuclear_norm(M)
    s = singular_values(M)
    return float(np.sum(s ** (2.0 / L)))


def pseudo_inverse(M, rel_tol: float = PINV_REL_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse, truncating singular values below ``rel_tol * s_max``."""
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    A = as_matrix(M)
    U, s, Vt = thin_svd(A, rel_tol)
    if s.size == 0:
        return np.zeros((A.shape[1], A.shape[0]))
    return (Vt.T / s) @ U.T


def relu(M) -> np.ndarray:
    return np.maximum(np.asarray(M, dtype=np.float64), 0.0)


class Rng:
    """Seeded Gaussian source backed by numpy's PCG64 bit generator.

    Samples depend only on the seed and on the order of calls.
    """

    name = PRNG_NAME

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def gaussian(self, rows: int, cols: int, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError("std must be non-negative")
        draw = self._gen.standard_normal((rows, cols))
        return std * draw

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def gaussian(rng: Rng, rows: int, cols: int, std: float = 1.0) -> np.ndarray:
    return rng.gaussian(rows, cols, std)
