"""Balanced transportation problem (BTP) for sample-to-expert assignment.

Each of m samples is a supply source with one unit of supply; each of n
experts is a demand source that must receive a prescribed integer count of
samples (m/n when n divides m).  The solver is a Vogel-style greedy that,
following the observation that m is much larger than n, computes penalties
for rows only: at every step the unassigned row with the largest penalty
(gap between its two cheapest active columns) is assigned to its cheapest
active column.

An exact brute-force oracle over all balanced assignments is provided for
small instances (m <= 12) so the heuristic's quality can be measured.

All functions are pure and operate on immutable inputs; they are safe to
call concurrently from multiple threads.
"""

from __future__ import annotations

import numpy as np

from coex import _vam_py

try:
    from coex import _vam as _compiled
except ImportError:  # pragma: no cover - depends on build environment
    _compiled = None

BRUTE_FORCE_MAX_ROWS = 12


def has_compiled_kernel() -> bool:
    """True when the Cython solver extension was built and imported."""
    return _compiled is not None


def _as_cost_matrix(costs) -> np.ndarray:
    c = np.ascontiguousarray(costs, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    m, n = c.shape
    if n < 1 or m < n:
        raise ValueError(f"cost matrix needs m >= n >= 1, got {m}x{n}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix entries must all be finite")
    return c


def _as_demands(demands, m: int, n: int) -> np.ndarray:
    if demands is None:
        return balanced_demands(m, n)
    d = np.asarray(demands)
    if d.shape != (n,):
        raise ValueError(f"demands must have length {n}, got shape {d.shape}")
    if not np.issubdtype(d.dtype, np.integer):
        rounded = np.rint(d)
        if not np.array_equal(rounded, d):
            raise ValueError("demands must be integers")
        d = rounded
    d = d.astype(np.int64)
    if (d < 0).any():
        raise ValueError("demands must be nonnegative")
    if int(d.sum()) != m:
        raise ValueError(f"demands must sum to the row count {m}, got {int(d.sum())}")
    return d


def balanced_demands(m: int, n: int) -> np.ndarray:
    """Demand vector as close to m/n as possible: the first m % n experts
    receive floor(m/n)+1 samples, the rest floor(m/n)."""
    if n < 1 or m < n:
        raise ValueError(f"need m >= n >= 1, got m={m}, n={n}")
    base, extra = divmod(m, n)
    d = np.full(n, base, dtype=np.int64)
    d[:extra] += 1
    return d


def row_penalties(costs, active_rows=None, active_cols=None) -> np.ndarray:
    """Vogel penalty per active row: second-lowest minus lowest cost over
    the active columns (0 when a single active column remains).

    Returns penalties in the order of ``active_rows``.
    """
    c = _as_cost_matrix(costs)
    m, n = c.shape
    rows = np.arange(m) if active_rows is None else np.asarray(list(active_rows), dtype=np.int64)
    cols = np.arange(n) if active_cols is None else np.asarray(list(active_cols), dtype=np.int64)
    if rows.size == 0 or cols.size == 0:
        raise ValueError("active row and column sets must be nonempty")
    if cols.size == 1:
        return np.zeros(rows.size)
    sub = c[np.ix_(rows, cols)]
    part = np.partition(sub, 1, axis=1)
    return part[:, 1] - part[:, 0]


def solve_btp(costs, demands=None, backend: str = "auto") -> np.ndarray:
    """Solve the BTP greedily; returns assigned column index per row.

    The output always satisfies the demands exactly.  Ties in penalty and
    in per-row minimum cost break toward the smallest index, so identical
    inputs give identical assignments.  ``backend`` selects the compiled
    kernel ("compiled"), the numpy fallback ("python"), or whichever is
    available ("auto").
    """
    c = _as_cost_matrix(costs)
    d = _as_demands(demands, *c.shape)
    if backend == "auto":
        kernel = _compiled if _compiled is not None else _vam_py
    elif backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel not available; rebuild the extension")
        kernel = _compiled
    elif backend == "python":
        kernel = _vam_py
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return np.asarray(kernel.solve_btp_kernel(c, d))


def assignment_objective(costs, assignment) -> float:
    """Total cost sum(costs[j, assignment[j]]) of an assignment."""
    c = _as_cost_matrix(costs)
    a = np.asarray(assignment, dtype=np.int64)
    if a.shape != (c.shape[0],):
        raise ValueError(f"assignment must have length {c.shape[0]}, got shape {a.shape}")
    if (a < 0).any() or (a >= c.shape[1]).any():
        raise ValueError("assignment indices out of range")
    return float(c[np.arange(c.shape[0]), a].sum())


def _enumerate_extrema(c: np.ndarray, d: np.ndarray):
    """Exhaustive DFS over every balanced assignment (multiset permutations
    of the demand-expanded expert list).  Returns (best_obj, best_assignment,
    worst_obj); ties prefer the lexicographically smallest assignment."""
    m, n = c.shape
    assign = np.empty(m, dtype=np.int64)
    remaining = d.copy()
    best_obj = np.inf
    best_assign = None
    worst_obj = -np.inf

    def rec(j: int, acc: float):
        nonlocal best_obj, best_assign, worst_obj
        if j == m:
            if acc < best_obj:
                best_obj = acc
                best_assign = assign.copy()
            if acc > worst_obj:
                worst_obj = acc
            return
        for k in range(n):
            if remaining[k] > 0:
                remaining[k] -= 1
                assign[j] = k
                rec(j + 1, acc + c[j, k])
                remaining[k] += 1

    rec(0, 0.0)
    return best_obj, best_assign, worst_obj


def brute_force_btp(costs, demands=None) -> np.ndarray:
    """Exact BTP solution by exhaustive enumeration; the test oracle.

    Guarded to m <= 12 rows to avoid combinatorial blowup.
    """
    c = _as_cost_matrix(costs)
    if c.shape[0] > BRUTE_FORCE_MAX_ROWS:
        raise ValueError(
            f"brute force capped at m <= {BRUTE_FORCE_MAX_ROWS}, got m={c.shape[0]}"
        )
    d = _as_demands(demands, *c.shape)
    _, best_assign, _ = _enumerate_extrema(c, d)
    return best_assign


def brute_force_objective_range(costs, demands=None) -> tuple[float, float]:
    """(optimal, worst-feasible) objective over all balanced assignments;
    used to normalize the heuristic's gap."""
    c = _as_cost_matrix(costs)
    if c.shape[0] > BRUTE_FORCE_MAX_ROWS:
        raise ValueError(
            f"brute force capped at m <= {BRUTE_FORCE_MAX_ROWS}, got m={c.shape[0]}"
        )
    d = _as_demands(demands, *c.shape)
    best_obj, _, worst_obj = _enumerate_extrema(c, d)
    return float(best_obj), float(worst_obj)
