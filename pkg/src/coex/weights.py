"""Expert-loss weight generation from the delegator's selection probabilities.

The batch is partitioned by solving a balanced transportation problem on
the selection-probability matrix, the resulting one-hot assignment is
smoothed toward uniform by a scheduled mixing coefficient alpha (small
early in training, when the partition cannot be trusted), and the smoothed
matrix is normalized so each expert's loss weights sum to one.

Pure, stateless, thread-safe.
"""

from __future__ import annotations

import numpy as np

from coex.labels import one_hot
from coex.transport import balanced_demands, solve_btp

ROW_SUM_TOL = 1e-6


def _check_row_stochastic(p: np.ndarray) -> None:
    if p.ndim != 2:
        raise ValueError("selection probabilities must be a 2-D matrix")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("selection probabilities must lie in [0, 1]")
    if np.abs(p.sum(axis=1) - 1.0).max() > ROW_SUM_TOL:
        raise ValueError("selection probability rows must sum to 1")


def balanced_assignment(selection_probs, backend: str = "auto") -> np.ndarray:
    """One-hot assignment maximizing total selected probability under the
    equal-demand constraint (cost matrix is -P)."""
    p = np.asarray(selection_probs, dtype=np.float64)
    _check_row_stochastic(p)
    m, n = p.shape
    assignment = solve_btp(-p, balanced_demands(m, n), backend=backend)
    return one_hot(assignment, n)


def argmax_assignment(selection_probs) -> np.ndarray:
    """Unconstrained per-row argmax assignment (ablation: no balance, used
    together with skipping the smoothing step).  Ties break toward the
    smallest expert index."""
    p = np.asarray(selection_probs, dtype=np.float64)
    _check_row_stochastic(p)
    return one_hot(np.argmax(p, axis=1), p.shape[1])


def assignment_from_labels(selection_label_matrix) -> np.ndarray:
    """Ablation pass-through: reuse the selection labels as the assignment,
    partitioning the batch by expert suitability instead of the delegator."""
    l = np.asarray(selection_label_matrix, dtype=np.float64)
    if l.ndim != 2 or not np.isin(l, (0.0, 1.0)).all() or (l.sum(axis=1) != 1.0).any():
        raise ValueError("labels must be a one-hot row matrix")
    return l.copy()


def alpha_schedule(step: int, total_steps: int,
                   alpha_start: float = 0.2, alpha_end: float = 0.8) -> float:
    """Linear warm-up of the assignment sharpness over training steps."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return alpha_start + (alpha_end - alpha_start) * step / total_steps


def smooth_assignment(assignment, alpha: float) -> np.ndarray:
    """Mix the one-hot assignment with uniform: alpha + (1-alpha)/n on the
    assigned entry, (1-alpha)/n elsewhere.  Rows still sum to 1."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    a = np.asarray(assignment, dtype=np.float64)
    n = a.shape[1]
    return alpha * a + (1.0 - alpha) / n


def normalize_weights(smoothed, demands=None) -> np.ndarray:
    """Scale the smoothed assignment so each expert's weights sum to 1.

    With balanced demands every column of the smoothed matrix sums to m/n
    exactly, so this is a single division by m/n.  With unequal demands
    (m not divisible by n) each column is normalized by its own sum, which
    preserves the column-sum-1 contract.
    """
    a = np.asarray(smoothed, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("smoothed assignment must be a nonempty 2-D matrix")
    m, n = a.shape
    d = balanced_demands(m, n) if demands is None else np.asarray(demands, dtype=np.int64)
    if (d == d[0]).all():
        return a * (n / m)
    col_sums = a.sum(axis=0, keepdims=True)
    return a / np.where(col_sums > 0.0, col_sums, 1.0)
