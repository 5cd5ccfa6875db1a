"""Closed-form optimum of the binary deep unconstrained features model.

For two classes the whole objective reduces to the two singular values of
every post-activation feature matrix ``relu(H_l)``, ``l >= 2``. Each of the
two singular-value chains solves the same problem

    minimize  lw_L / (2 (x_L + 2 lw_L))
              + sum_{l=2}^{L-1} (lw_l / 2) x_{l+1} / x_l
              + sqrt(lw_1 * lh) * sqrt(x_2)

over squared singular values ``x_2..x_L``, with ``lh = n * lambda_h1``.
Stationary points form a one-parameter family indexed by
``q = x_L / x_{L-1}``, so the global optimum comes from a 1-D search.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq

from .linalg import as_matrix, nuclear_norm, relu, singular_values, thin_svd
from .model import DufmDims, DufmParams, RegConfig

__all__ = [
    "OptimumReport",
    "SpectrumPair",
    "construct_collapsed_solution",
    "dnc_threshold",
    "dnc_threshold_exact",
    "key_lemma_value",
    "key_lemma_value_unsquared",
    "min_norm_weights",
    "min_norm_value",
    "q_objective",
    "reduced_objective",
    "regime",
    "ridge_value",
    "ridge_weights",
    "schatten_min_value",
    "singular_profile",
    "stationarity_residuals",
    "theoretical_optimum",
    "variational_factors",
    "variational_min_value",
]

COLLAPSE, BOUNDARY, ZERO = "collapse", "boundary", "zero"
BOUNDARY_RTOL = 1e-12
GRID_POINTS = 10_000


@dataclass(frozen=True)
class SpectrumPair:
    s1: float
    s2: float

    def __post_init__(self):
        if self.s2 < 0 or self.s1 < self.s2:
            raise ValueError(f"need s1 >= s2 >= 0, got ({self.s1}, {self.s2})")

    @classmethod
    def of(cls, M) -> SpectrumPair:
        """Top two singular values of a matrix with two columns (or two rows)."""
        s = singular_values(M)
        if s.size != 2:
            raise ValueError("expected a matrix with exactly two columns or two rows")
        return cls(float(s[0]), float(s[1]))

    def rank(self, rtol: float = 1e-12) -> int:
        if self.s1 == 0:
            return 0
        return 2 if self.s2 > rtol * self.s1 else 1


def dnc_threshold_exact(L: int) -> Fraction:
    if int(L) != L or L < 2:
        raise ValueError(f"L must be an integer >= 2, got {L}")
    L = int(L)
    return Fraction((L - 1) ** (L - 1), 2 ** (L + 1) * L ** (2 * L))


def dnc_threshold(L: int) -> float:
    """``(L-1)^(L-1) / (2^(L+1) L^(2L))``, evaluated exactly and then rounded."""
    return float(dnc_threshold_exact(L))


def regime(dims: DufmDims, reg: RegConfig) -> str:
    """``"collapse"``, ``"boundary"`` or ``"zero"`` for ``n * lambda_h1 * prod(lambda_w)``."""
    _check(dims, reg)
    t = dnc_threshold(dims.L)
    p = reg.product(dims.n)
    if abs(p - t) <= BOUNDARY_RTOL * t:
        return BOUNDARY
    return COLLAPSE if p < t else ZERO


def _check(dims: DufmDims, reg: RegConfig):
    if reg.L != dims.L:
        raise ValueError(f"regularization has {reg.L} weight strengths, model has {dims.L} layers")


# ---------------------------------------------------------------- lemma values


def ridge_value(s: SpectrumPair, lambda_wL: float) -> float:
    """Optimal ``1/4 |W F - I|^2 + lambda/2 |W|^2`` over ``W`` given the spectrum of ``F``."""
    lam = lambda_wL
    return lam / (2 * (s.s1**2 + 2 * lam)) + lam / (2 * (s.s2**2 + 2 * lam))


def ridge_weights(F, lambda_wL: float) -> np.ndarray:
    """The minimizing classifier ``F^T (F F^T + 2 lambda I)^-1`` for two-column features ``F``.

    Evaluated through the equivalent 2x2 system ``(F^T F + 2 lambda I)^-1 F^T``.
    """
    F = as_matrix(F, "F")
    k = F.shape[1]
    return np.linalg.solve(F.T @ F + 2 * lambda_wL * np.eye(k), F.T)


def key_lemma_value(target: SpectrumPair, given: SpectrumPair) -> float:
    """Minimum of ``|W|_F^2`` such that ``relu(W X)`` has spectrum ``target``.

    ``given`` is the spectrum of ``X``. Returns ``s1^2/g1^2 + s2^2/g2^2`` for
    full-rank ``X``. An infeasible target (rank larger than the rank of
    ``X``) returns ``math.inf``, the minimum over an empty set.
    """
    r = given.rank()
    if r == 2:
        return target.s1**2 / given.s1**2 + target.s2**2 / given.s2**2
    if r == 1:
        if target.rank() > 1:
            return math.inf
        return target.s1**2 / given.s1**2
    return 0.0 if target.s1 == 0 else math.inf


def key_lemma_value_unsquared(target: SpectrumPair, given: SpectrumPair) -> float:
    """The un-squared ratio form ``s1/g1 + s2/g2``; kept only so the oracle can test it."""
    r = given.rank()
    if r == 2:
        return target.s1 / given.s1 + target.s2 / given.s2
    if r == 1:
        return math.inf if target.rank() > 1 else target.s1 / given.s1
    return 0.0 if target.s1 == 0 else math.inf


def min_norm_value(A, X) -> float:
    """Minimum ``|W|_F^2`` subject to ``relu(W X) = A`` for two-column ``A`` and non-negative ``X``.

    Raises ``ValueError`` when ``X`` has aligned columns and ``A`` is not
    compatible with them.
    """
    A, X = as_matrix(A, "A"), as_matrix(X, "X")
    a, b = A[:, 0], A[:, 1]
    x, y = X[:, 0], X[:, 1]
    xx, yy, xy = x @ x, y @ y, x @ y
    det = xx * yy - xy * xy
    if det > 1e-12 * xx * yy:
        return float((a @ a * yy - 2 * (a @ b) * xy + b @ b * xx) / det)
    if yy == 0:
        if b.any() or (xx == 0 and a.any()):
            raise ValueError("infeasible: zero column in X with positive target")
        return float(a @ a / xx) if xx > 0 else 0.0
    # aligned columns: every row of W must be a multiple of y
    aa, bb, ab = a @ a, b @ b, a @ b
    if abs(aa * bb - ab * ab) > 1e-9 * max(aa * bb, 1e-300) or abs(aa * yy - bb * xx) > 1e-9 * max(aa * yy, bb * xx):
        raise ValueError("infeasible: X has aligned columns but A does not match them")
    return float(bb / yy)


def min_norm_weights(A, X) -> np.ndarray:
    """Row-wise minimizer of ``|W|_F^2`` subject to ``relu(W X) = A`` (full-rank ``X``).

    Each row is the minimum-norm interpolant of the corresponding row of
    ``A``; zero targets become equality constraints.
    """
    A, X = as_matrix(A, "A"), as_matrix(X, "X")
    x, y = X[:, 0], X[:, 1]
    xx, yy, xy = x @ x, y @ y, x @ y
    det = xx * yy - xy * xy
    a, b = A[:, :1], A[:, 1:]
    return ((b * xx - a * xy) * y + (a * yy - b * xy) * x) / det


def schatten_min_value(s: SpectrumPair, L: int) -> float:
    """Minimum of ``sum_i s_i(H)^(2/L)`` over ``H`` whose ReLU has spectrum ``s``."""
    if L < 2:
        raise ValueError("L must be >= 2")
    return (s.s1 + s.s2) ** (2.0 / L)


def variational_min_value(C, lambda_a: float, lambda_b: float) -> float:
    """``min (la/2)|A|^2 + (lb/2)|B|^2`` subject to ``A @ B = C``."""
    return math.sqrt(lambda_a * lambda_b) * nuclear_norm(C)


def variational_factors(C, lambda_a: float, lambda_b: float, inner_dim: int):
    """Balanced factors ``A = g_a U S^(1/2) R^T``, ``B = g_b R S^(1/2) V^T`` attaining the minimum.

    ``g_a = (lb/la)^(1/4)`` and ``g_b = (la/lb)^(1/4)`` equalize
    ``la |A|^2`` and ``lb |B|^2``; ``R`` is the leading ``inner_dim x rank``
    block of the identity.
    """
    C = as_matrix(C, "C")
    if lambda_a <= 0 or lambda_b <= 0:
        raise ValueError("regularization strengths must be positive")
    U, s, Vt = thin_svd(C)
    r = s.size
    if inner_dim < r:
        raise ValueError(f"inner_dim={inner_dim} is smaller than rank(C)={r}")
    ga = (lambda_b / lambda_a) ** 0.25
    gb = (lambda_a / lambda_b) ** 0.25
    R = np.eye(inner_dim, r)
    root = np.sqrt(s)
    A = ga * (U * root) @ R.T
    B = gb * R @ (root[:, None] * Vt)
    return A, B


# ------------------------------------------------------ reduced 1-D problem


def _effective(reg: RegConfig, n: int):
    return n * reg.lambda_h1, reg.lambda_w


def reduced_objective(x, reg: RegConfig, n: int = 1) -> float:
    """Per-singular-value objective at squared singular values ``x = (x_2, ..., x_L)``.

    ``0/0`` counts as 0 and ``c/0`` with ``c > 0`` as infinity.
    """
    lh, lw = _effective(reg, n)
    x = np.asarray(x, dtype=np.float64)
    L = reg.L
    if x.shape != (L - 1,):
        raise ValueError(f"expected {L - 1} values, got shape {x.shape}")
    total = lw[-1] / (2 * (x[-1] + 2 * lw[-1])) + math.sqrt(lw[0] * lh) * math.sqrt(x[0])
    for l in range(2, L):
        num, den = x[l - 1], x[l - 2]  # x_{l+1}, x_l
        if num == 0:
            continue
        total += math.inf if den == 0 else 0.5 * lw[l - 1] * num / den
    return float(total)


def _x_L_coefficient(lh: float, lw) -> float:
    L = len(lw)
    return lw[L - 2] ** (L - 1) / (lh * float(np.prod(lw[: L - 2])))


def q_objective(q, reg: RegConfig, n: int = 1):
    """Reduced objective along the stationary family.

    For ``L >= 3`` the argument is ``q = x_L / x_{L-1}``; for ``L = 2`` it is
    ``y = sqrt(x_2)``. Accepts scalars or arrays.
    """
    lh, lw = _effective(reg, n)
    L = reg.L
    q = np.asarray(q, dtype=np.float64)
    if L == 2:
        return lw[1] / (2 * (q * q + 2 * lw[1])) + math.sqrt(lw[0] * lh) * q
    a = _x_L_coefficient(lh, lw)
    return lw[-1] / (2 * (a * q**L + 2 * lw[-1])) + 0.5 * L * lw[-2] * q


def _q_derivative(q: float, reg: RegConfig, n: int) -> float:
    lh, lw = _effective(reg, n)
    L = reg.L
    if L == 2:
        return -lw[1] * q / (q * q + 2 * lw[1]) ** 2 + math.sqrt(lw[0] * lh)
    a = _x_L_coefficient(lh, lw)
    return -lw[-1] * a * L * q ** (L - 1) / (2 * (a * q**L + 2 * lw[-1]) ** 2) + 0.5 * L * lw[-2]


def _q_upper(reg: RegConfig, n: int) -> float:
    # past this point the linear term alone exceeds the value 1/4 at q = 0
    lh, lw = _effective(reg, n)
    if reg.L == 2:
        return 1.0 / (4 * math.sqrt(lw[0] * lh))
    return 1.0 / (2 * reg.L * lw[-2])


def singular_profile(q: float, reg: RegConfig, n: int = 1) -> np.ndarray:
    """Squared singular values ``(x_2, ..., x_L)`` of the stationary point indexed by ``q``.

    Uses ``x_2 = lw_{L-1}^2 q^2 / (lw_1 lh)`` and the constant-ratio rule
    ``x_{k+1} / x_k = lw_{L-1} q / lw_k``; the last entry equals
    ``lw_{L-1}^(L-1) q^L / (lh prod_{j<=L-2} lw_j)``. Requires ``L >= 3``.
    """
    L = reg.L
    if L < 3:
        raise ValueError("singular_profile needs L >= 3; for L = 2 use y = sqrt(x_2) directly")
    if q < 0:
        raise ValueError("q must be non-negative")
    lh, lw = _effective(reg, n)
    x = np.empty(L - 1)
    x[0] = lw[L - 2] ** 2 * q * q / (lw[0] * lh)
    for k in range(2, L):
        x[k - 1] = x[k - 2] * lw[L - 2] * q / lw[k - 1]
    return x


def stationarity_residuals(x, reg: RegConfig, n: int = 1) -> np.ndarray:
    """Relative residuals of the first-order conditions of :func:`reduced_objective` (``L >= 3``).

    Order: the ``x_L`` equation, the interior equations ``l = 3..L-1``, then
    the ``x_2`` equation.
    """
    lh, lw = _effective(reg, n)
    x = np.asarray(x, dtype=np.float64)
    L = reg.L
    X = {l: x[l - 2] for l in range(2, L + 1)}
    res = []
    lhs, rhs = math.sqrt(lw[L - 1] / lw[L - 2]) * math.sqrt(X[L - 1]), X[L] + 2 * lw[L - 1]
    res.append((lhs - rhs) / max(abs(lhs), abs(rhs)))
    for l in range(3, L):
        lhs, rhs = X[l] ** 2, lw[l - 1] / lw[l - 2] * X[l + 1] * X[l - 1]
        res.append((lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    lhs, rhs = X[2] ** 1.5, lw[1] / math.sqrt(lw[0] * lh) * X[3]
    res.append((lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return np.array(res)


def _golden(f, lo: float, hi: float, rtol: float = 1e-12, max_iter: int = 400):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= rtol * max(abs(a), abs(b), 1e-300):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def _interior_minimizer(reg: RegConfig, n: int) -> float:
    # Dense grid over (0, upper], golden-section on the bracket of the
    # left-most best point, then a root polish of the derivative.
    upper = _q_upper(reg, n)
    grid = np.linspace(0.0, upper, GRID_POINTS + 1)[1:]
    vals = q_objective(grid, reg, n)
    i = int(np.argmin(vals))
    lo = grid[i - 1] if i > 0 else 0.0
    hi = grid[min(i + 1, grid.size - 1)]
    f = lambda t: float(q_objective(t, reg, n))  # noqa: E731
    q = _golden(f, lo, hi)
    dlo, dhi = _q_derivative(lo, reg, n), _q_derivative(hi, reg, n)
    if lo > 0 and dlo < 0 < dhi:
        root = brentq(_q_derivative, lo, hi, args=(reg, n), xtol=1e-300, rtol=4 * np.finfo(float).eps)
        # golden section only pins q to ~sqrt(eps); prefer the root unless it is
        # worse by more than rounding
        fq = f(q)
        if f(root) <= fq + 8 * np.finfo(float).eps * abs(fq):
            q = root
    return q


@dataclass
class OptimumReport:
    """Global optimum of the objective for given dimensions and regularization.

    ``q_star`` is ``x_L / x_{L-1}`` for ``L >= 3`` and ``sqrt(x_2)`` for
    ``L = 2``; ``x`` lists the optimal squared singular values
    ``x_2..x_L`` shared by both classes.
    """

    L: int
    n: int
    threshold: float
    product: float
    regime: str
    q_star: float
    x: list[float]
    optimal_loss: float
    interior_loss: float

    def to_dict(self) -> dict:
        return asdict(self)


def theoretical_optimum(dims: DufmDims, reg: RegConfig) -> OptimumReport:
    _check(dims, reg)
    n, L = dims.n, dims.L
    kind = regime(dims, reg)
    q_int = _interior_minimizer(reg, n)
    per_index = float(q_objective(q_int, reg, n))
    if L == 2:
        x_int = [q_int * q_int]
    else:
        x_int = singular_profile(q_int, reg, n).tolist()
    if kind == ZERO:
        q_star, x, best = 0.0, [0.0] * (L - 1), 0.25
    else:
        q_star, x, best = q_int, x_int, min(per_index, 0.25)
    return OptimumReport(
        L=L,
        n=n,
        threshold=dnc_threshold(L),
        product=reg.product(n),
        regime=kind,
        q_star=q_star,
        x=x,
        optimal_loss=2 * best,
        interior_loss=2 * per_index,
    )


def construct_collapsed_solution(dims: DufmDims, reg: RegConfig, report: OptimumReport | None = None) -> DufmParams:
    """An explicit global minimizer exhibiting deep neural collapse.

    Every ``relu(H_l)``, ``l >= 2``, is ``sqrt(x_l) [e1 | e2]``; the middle
    weights are scaled partial identities, ``W_L`` is the ridge classifier,
    ``H2`` is kept non-negative and ``(W1, H1)`` are the balanced factors of
    ``H2``. Columns of the reduced two-sample ``H1`` are repeated ``n`` times.
    """
    report = report or theoretical_optimum(dims, reg)
    if report.regime != COLLAPSE:
        raise ValueError(f"construction needs the collapse regime, got {report.regime!r}")
    L, d, n = dims.L, dims.d, dims.n
    x = np.asarray(report.x)
    if not np.all(x > 0):
        raise ValueError("optimal singular profile is not entry-wise positive")

    def frame(rows, scale):
        return scale * np.eye(rows, 2)

    feats = {l: frame(d[l - 1], math.sqrt(x[l - 2])) for l in range(2, L + 1)}
    W = [None] * L
    for l in range(2, L):
        W[l - 1] = math.sqrt(x[l - 1] / x[l - 2]) * np.eye(d[l], 2) @ np.eye(2, d[l - 1])
    W[L - 1] = ridge_weights(feats[L], reg.lambda_w[-1])
    W1, H1_reduced = variational_factors(feats[2], reg.lambda_w[0], n * reg.lambda_h1, d[0])
    W[0] = W1
    H1 = np.repeat(H1_reduced, n, axis=1)
    return DufmParams(H1, W)


def relu_spectrum(M) -> SpectrumPair:
    return SpectrumPair.of(relu(M))
