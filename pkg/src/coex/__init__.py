"""Cooperating experts: a delegator routes each sample to one of n expert
networks, with balanced-transport label/weight generation during training
and confidence-thresholded early exit at inference."""

__version__ = "0.1.0"

from coex.transport import (
    balanced_demands,
    solve_btp,
    brute_force_btp,
    assignment_objective,
    has_compiled_kernel,
)

__all__ = [
    "__version__",
    "balanced_demands",
    "solve_btp",
    "brute_force_btp",
    "assignment_objective",
    "has_compiled_kernel",
]
