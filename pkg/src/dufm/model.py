"""The L-layer deep unconstrained features model.

Features of the first layer, ``H1``, are free variables; ``L`` bias-free
fully connected layers with ReLU in between map them to two logits per
sample::

    H2 = W1 @ H1,   H_l = W_{l-1} @ relu(H_{l-1})  (l >= 3),
    logits = W_L @ relu(H_L)

and the objective is the mean squared error to the one-hot labels plus
Frobenius penalties on ``H1`` and every ``W_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import Rng, as_matrix

__all__ = [
    "DufmDims",
    "DufmParams",
    "ForwardTrace",
    "LossRecord",
    "RegConfig",
    "forward",
    "gradient",
    "init_params",
    "label_matrix",
    "loss",
    "loss_and_gradient",
]

K = 2


@dataclass(frozen=True)
class DufmDims:
    """Layer count ``L``, input widths ``d[0..L-1]`` and samples per class ``n``."""

    L: int
    d: tuple[int, ...]
    n: int

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(int(v) for v in self.d))
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")
        if len(self.d) != self.L:
            raise ValueError(f"expected {self.L} widths, got {len(self.d)}")
        if any(v < 2 for v in self.d):
            raise ValueError(f"every width must be >= 2, got {self.d}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")

    @classmethod
    def uniform(cls, L: int, width: int, n: int) -> DufmDims:
        return cls(L, (width,) * L, n)

    @property
    def K(self) -> int:
        return K

    @property
    def N(self) -> int:
        return K * self.n

    def weight_shape(self, l: int) -> tuple[int, int]:
        """Shape of ``W_l`` for 1-based ``l``."""
        rows = self.d[l] if l < self.L else K
        return rows, self.d[l - 1]

    def to_dict(self) -> dict:
        return {"L": self.L, "d": list(self.d), "n": self.n, "K": K}

    @classmethod
    def from_dict(cls, obj: dict) -> DufmDims:
        if obj.get("K", K) != K:
            raise ValueError("only binary classification (K = 2) is supported")
        return cls(int(obj["L"]), tuple(obj["d"]), int(obj["n"]))


@dataclass(frozen=True)
class RegConfig:
    lambda_h1: float
    lambda_w: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lambda_w", tuple(float(v) for v in self.lambda_w))
        object.__setattr__(self, "lambda_h1", float(self.lambda_h1))
        if not self.lambda_h1 > 0 or not all(v > 0 for v in self.lambda_w):
            raise ValueError("all regularization strengths must be strictly positive")
        if not self.lambda_w:
            raise ValueError("lambda_w must not be empty")

    @classmethod
    def uniform(cls, L: int, lam: float) -> RegConfig:
        return cls(lam, (lam,) * L)

    @property
    def L(self) -> int:
        return len(self.lambda_w)

    def product(self, n: int = 1) -> float:
        """``n * lambda_h1 * prod(lambda_w)``, the quantity compared to the collapse threshold."""
        return float(n * self.lambda_h1 * np.prod(self.lambda_w))

    def to_dict(self) -> dict:
        return {"lambda_h1": self.lambda_h1, "lambda_w": list(self.lambda_w)}


@dataclass
class DufmParams:
    H1: np.ndarray
    W: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> DufmParams:
        return DufmParams(self.H1.copy(), [w.copy() for w in self.W])

    def matrices(self) -> list[np.ndarray]:
        return [self.H1, *self.W]

    def sq_norm(self) -> float:
        return float(sum(np.sum(m * m) for m in self.matrices()))

    def to_dict(self) -> dict:
        return {"H1": self.H1.tolist(), "W": [w.tolist() for w in self.W]}

    @classmethod
    def from_dict(cls, obj: dict) -> DufmParams:
        return cls(
            np.array(obj["H1"], dtype=np.float64),
            [np.array(w, dtype=np.float64) for w in obj["W"]],
        )


@dataclass
class ForwardTrace:
    """Pre-activations ``H[0..L-1]`` (H1..H_L), post-activations ``A`` and logits.

    ``A[0] = relu(H1)`` is kept for metric reporting only; the forward chain
    feeds ``H1`` to ``W1`` directly.
    """

    H: list[np.ndarray]
    A: list[np.ndarray]
    logits: np.ndarray


@dataclass
class LossRecord:
    total: float
    fit: float
    reg_h1: float
    reg_w: list[float]


def label_matrix(dims: DufmDims) -> np.ndarray:
    """One-hot labels ``I_K kron 1_n^T``; samples are grouped class by class."""
    return np.kron(np.eye(K), np.ones((1, dims.n)))


def check_shapes(params: DufmParams, dims: DufmDims) -> None:
    if len(params.W) != dims.L:
        raise ValueError(f"expected {dims.L} weight matrices, got {len(params.W)}")
    if params.H1.shape != (dims.d[0], dims.N):
        raise ValueError(f"H1 has shape {params.H1.shape}, expected {(dims.d[0], dims.N)}")
    for l, w in enumerate(params.W, start=1):
        if w.shape != dims.weight_shape(l):
            raise ValueError(f"W{l} has shape {w.shape}, expected {dims.weight_shape(l)}")


def forward(params: DufmParams, dims: DufmDims) -> ForwardTrace:
    check_shapes(params, dims)
    H = [params.H1]
    A = [np.maximum(params.H1, 0.0)]
    h = params.W[0] @ params.H1
    for l in range(1, dims.L):
        H.append(h)
        A.append(np.maximum(h, 0.0))
        h = params.W[l] @ A[-1]
    return ForwardTrace(H, A, h)


def _loss_from_trace(trace, params, dims, reg) -> LossRecord:
    if reg.L != dims.L:
        raise ValueError(f"expected {dims.L} weight regularizers, got {reg.L}")
    R = trace.logits - label_matrix(dims)
    fit = float(np.sum(R * R)) / (2 * dims.N)
    reg_h1 = 0.5 * reg.lambda_h1 * float(np.sum(params.H1 * params.H1))
    reg_w = [0.5 * lam * float(np.sum(w * w)) for lam, w in zip(reg.lambda_w, params.W)]
    return LossRecord(fit + reg_h1 + sum(reg_w), fit, reg_h1, reg_w)


def loss(params: DufmParams, dims: DufmDims, reg: RegConfig) -> LossRecord:
    return _loss_from_trace(forward(params, dims), params, dims, reg)


def loss_and_gradient(params: DufmParams, dims: DufmDims, reg: RegConfig):
    """Loss record and gradient from a single forward pass.

    The ReLU masks come from the stored trace, with the derivative at 0 taken
    as 0.
    """
    trace = forward(params, dims)
    record = _loss_from_trace(trace, params, dims, reg)
    L = dims.L
    G = (trace.logits - label_matrix(dims)) / dims.N
    grads: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    for l in range(L - 1, 0, -1):
        # here G is the gradient w.r.t. the output of W_{l+1} (0-based l)
        grads[l] = G @ trace.A[l].T + reg.lambda_w[l] * params.W[l]
        G = (params.W[l].T @ G) * (trace.H[l] > 0)
    grads[0] = G @ params.H1.T + reg.lambda_w[0] * params.W[0]
    gH1 = params.W[0].T @ G + reg.lambda_h1 * params.H1
    return record, DufmParams(gH1, grads)


def gradient(params: DufmParams, dims: DufmDims, reg: RegConfig) -> DufmParams:
    return loss_and_gradient(params, dims, reg)[1]


def init_params(dims: DufmDims, rng: Rng, weight_gain: float = 1.0, h1_std: float = 1.0) -> DufmParams:
    """Gaussian initialization: ``W_l`` entries with std ``weight_gain / sqrt(d_l)``, ``H1`` with std ``h1_std``.

    ``H1`` is drawn first, then ``W1..W_L`` in order.
    """
    H1 = rng.gaussian(dims.d[0], dims.N, h1_std)
    W = []
    for l in range(1, dims.L + 1):
        rows, cols = dims.weight_shape(l)
        W.append(rng.gaussian(rows, cols, weight_gain / np.sqrt(cols)))
    return DufmParams(H1, W)


def params_from_matrices(H1, W: Sequence) -> DufmParams:
    return DufmParams(as_matrix(H1, "H1"), [as_matrix(w, f"W{i + 1}") for i, w in enumerate(W)])
