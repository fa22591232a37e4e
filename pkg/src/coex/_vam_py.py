"""Pure numpy kernel for the row-penalty Vogel assignment heuristic.

Fallback used when the compiled extension ``coex._vam`` is unavailable.
Both kernels must produce bit-identical assignments; keep the iteration
order and tie-breaking rules in lock step with ``_vam.pyx``.
"""

import numpy as np


def _penalties(costs: np.ndarray, active_col: np.ndarray) -> np.ndarray:
    """Per-row penalty: second-lowest minus lowest cost over active columns.

    A single remaining active column forces every row into it, so the
    penalty collapses to 0 there.
    """
    if int(active_col.sum()) == 1:
        return np.zeros(costs.shape[0])
    sub = costs[:, active_col]
    part = np.partition(sub, 1, axis=1)
    return part[:, 1] - part[:, 0]


def solve_btp_kernel(costs: np.ndarray, demands: np.ndarray) -> np.ndarray:
    """Greedy assignment: repeatedly take the unassigned row with the largest
    penalty (ties: smallest row index) and send it to its cheapest active
    column (ties: smallest column index)."""
    m, n = costs.shape
    demand = demands.astype(np.int64).copy()
    active_col = demand > 0
    assigned = np.zeros(m, dtype=bool)
    assignment = np.full(m, -1, dtype=np.int64)

    penalty = _penalties(costs, active_col)
    for _ in range(m):
        masked = np.where(assigned, -np.inf, penalty)
        j = int(np.argmax(masked))
        row = np.where(active_col, costs[j], np.inf)
        k = int(np.argmin(row))
        assignment[j] = k
        assigned[j] = True
        demand[k] -= 1
        if demand[k] == 0:
            active_col[k] = False
            if active_col.any():
                penalty = _penalties(costs, active_col)
    return assignment
