"""Deep unconstrained features model: optimum calculator, collapse metrics,
lemma verifiers and a gradient-descent harness for binary classification."""

__version__ = "0.1.0"

from .model import DufmDims, DufmParams, RegConfig  # noqa: E402
from .theory import OptimumReport, construct_collapsed_solution, dnc_threshold, theoretical_optimum  # noqa: E402

__all__ = [
    "DufmDims",
    "DufmParams",
    "OptimumReport",
    "RegConfig",
    "__version__",
    "construct_collapsed_solution",
    "dnc_threshold",
    "theoretical_optimum",
]
