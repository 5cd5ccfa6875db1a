"""Deep neural collapse measurements.

``dnc1``  within-class variability relative to between-class variability,
          ``|Sigma_W Sigma_B^+|_F^2``; 0 under collapse.
``dnc2``  ratio of the two leading singular values of a feature matrix;
          1 when the class means are orthogonal with equal norms.
``dnc3``  norm-weighted average sine between each weight row and its
          closest feature column; 0 when rows are collinear with features.

Undefined values (``0/0`` situations that only arise when features have
collapsed to zero) are reported as ``None``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .linalg import as_matrix, pseudo_inverse, singular_values
from .model import DufmDims, DufmParams, ForwardTrace

__all__ = ["LayerMetrics", "class_means", "dnc1", "dnc2", "dnc3", "layer_metrics"]

DEGENERATE_RTOL = 1e-14
ROW_NORM_FLOOR = 1e-6


def class_means(F, n: int | None = None) -> np.ndarray:
    """Columns are the two class means of a class-by-class feature matrix."""
    F = as_matrix(F, "F")
    N = F.shape[1]
    if N % 2:
        raise ValueError(f"number of columns must be even (two classes), got {N}")
    n = N // 2 if n is None else n
    if 2 * n != N:
        raise ValueError(f"expected {2 * n} columns for n={n}, got {N}")
    return F.reshape(F.shape[0], 2, n).mean(axis=2)


def dnc1(F, n: int | None = None) -> float | None:
    """``|Sigma_W Sigma_B^+|_F^2`` for features ``F`` (``d x 2n``, grouped by class).

    ``Sigma_B`` is ``B B^T`` with ``B = [mu_1 - mu_G, mu_2 - mu_G] / sqrt(2)``,
    so its pseudo-inverse is ``(B^+)^T B^+`` and only the ``2 x d`` matrix
    ``B^+`` is ever formed.
    """
    F = as_matrix(F, "F")
    mu = class_means(F, n)
    N = F.shape[1]
    half = N // 2
    centered = F - np.repeat(mu, half, axis=1)
    B = (mu - mu.mean(axis=1, keepdims=True)) / np.sqrt(2.0)
    spread = np.linalg.norm(mu[:, 0] - mu[:, 1])
    scale = np.linalg.norm(F) / np.sqrt(N)
    if spread == 0.0 or spread <= DEGENERATE_RTOL * scale:
        return None
    P = pseudo_inverse(B)
    left = (centered @ (centered.T @ P.T)) / N  # Sigma_W @ P^T, d x 2
    return float(np.sum((left @ P) ** 2))


def dnc2(F) -> float | None:
    """``s_1 / s_2`` of ``F``; ``None`` when ``s_2 <= 1e-14 s_1``."""
    s = singular_values(F)
    if s.size < 2:
        raise ValueError("dnc2 needs at least two singular values")
    if s[1] <= DEGENERATE_RTOL * s[0]:
        return None
    return float(s[0] / s[1])


def dnc3(W, A) -> float:
    """Weighted average sine between rows of ``W`` and their closest column of ``A``.

    Rows with norm below ``1e-6`` are skipped and zero columns of ``A`` are
    ignored. Returns 0 when every row is skipped and 1 when ``A`` has no
    nonzero column.
    """
    W, A = as_matrix(W, "W"), as_matrix(A, "A")
    if W.shape[1] != A.shape[0]:
        raise ValueError(f"W has {W.shape[1]} columns but A has {A.shape[0]} rows")
    wn = np.linalg.norm(W, axis=1)
    keep = wn >= ROW_NORM_FLOOR
    if not keep.any():
        return 0.0
    W, wn = W[keep], wn[keep]
    an = np.linalg.norm(A, axis=0)
    cols = an > 0
    if not cols.any():
        return 1.0
    U = A[:, cols] / an[cols]
    cos = (W @ U) / wn[:, None]
    best = np.argmax(np.abs(cos), axis=1)
    # rejection norm rather than sqrt(1 - cos^2): accurate at tiny angles
    u = U[:, best].T
    proj = np.sum(W * u, axis=1, keepdims=True)
    sines = np.linalg.norm(W - proj * u, axis=1) / wn
    sines = np.minimum(sines, 1.0)
    return float(np.sum(wn * sines) / np.sum(wn))


@dataclass
class LayerMetrics:
    layer: int
    dnc1_pre: float | None
    dnc1_post: float | None
    dnc2_pre: float | None
    dnc2_post: float | None
    dnc3: float

    def to_dict(self) -> dict:
        return asdict(self)


def layer_metrics(trace: ForwardTrace, params: DufmParams, dims: DufmDims) -> list[LayerMetrics]:
    """Metrics for layers ``1..L`` on ``H_l`` (pre) and ``relu(H_l)`` (post)."""
    out = []
    for l in range(dims.L):
        H, A = trace.H[l], trace.A[l]
        out.append(
            LayerMetrics(
                layer=l + 1,
                dnc1_pre=dnc1(H, dims.n),
                dnc1_post=dnc1(A, dims.n),
                dnc2_pre=dnc2(H),
                dnc2_post=dnc2(A),
                dnc3=dnc3(params.W[l], A),
            )
        )
    return out
