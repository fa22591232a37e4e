"""Selection-label generation for the delegator's expert-selector head.

Pipeline: per-expert true-class probabilities -> per-expert standardized
suitability scores -> balanced one-hot selection labels via the transport
solver -> per-sample selection-loss weights from the spread of each row's
suitabilities.

Everything here is a pure, stateless transformation (thread-safe).  The
quantities are computed per mini-batch and act as constants (labels and
loss weights) with respect to the gradients of the networks.
"""

from __future__ import annotations

import numpy as np

from coex.transport import balanced_demands, solve_btp

STD_EPS = 1e-8


def one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(indices), width))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def true_class_probs(expert_probs, targets) -> np.ndarray:
    """m x n matrix whose (j, k) entry is expert k's probability for sample
    j's true class.

    ``expert_probs`` is a sequence of n row-stochastic (m x C) matrices,
    one per expert.
    """
    y = np.asarray(targets, dtype=np.int64)
    m = y.shape[0]
    cols = []
    for k, probs in enumerate(expert_probs):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != m:
            raise ValueError(f"expert {k}: probs shape {p.shape} does not match {m} targets")
        if (y < 0).any() or (y >= p.shape[1]).any():
            raise ValueError("target class index out of range")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError(f"expert {k}: probabilities must lie in [0, 1]")
        cols.append(p[np.arange(m), y])
    if not cols:
        raise ValueError("need at least one expert")
    return np.stack(cols, axis=1)


def standardize_suitability(tcp) -> np.ndarray:
    """Column z-scores of the true-class-probability matrix.

    Uses the population (divide-by-m) standard deviation with a small
    epsilon guard so a collapsed expert (constant column) maps to zeros.
    """
    t = np.asarray(tcp, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 2:
        raise ValueError("need an m x n matrix with m >= 2 to standardize")
    mean = t.mean(axis=0)
    std = t.std(axis=0)
    return (t - mean) / (std + STD_EPS)


def selection_labels(suitability, backend: str = "auto") -> np.ndarray:
    """Balanced one-hot labels maximizing total selected suitability.

    Solves the balanced transportation problem with cost -suitability, so
    each expert receives its fair share of the batch.
    """
    s = np.asarray(suitability, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("suitability must be a 2-D matrix")
    m, n = s.shape
    assignment = solve_btp(-s, balanced_demands(m, n), backend=backend)
    return one_hot(assignment, n)


def selection_loss_weights(suitability) -> np.ndarray:
    """Per-sample weights for the selection loss, proportional to the
    population std of each row's suitabilities (samples where the experts
    are interchangeable matter less).  Falls back to uniform 1/m when all
    rows have zero spread."""
    s = np.asarray(suitability, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] < 2:
        raise ValueError("need an m x n matrix with n >= 2 experts")
    stds = s.std(axis=1)
    total = stds.sum()
    if total <= 0.0:
        return np.full(s.shape[0], 1.0 / s.shape[0])
    return stds / total


def raw_tcp_labels(tcp) -> np.ndarray:
    """Unbalanced argmax labels straight from true-class probabilities
    (ablation: no standardization, no balance constraint).  Ties break
    toward the smallest expert index."""
    t = np.asarray(tcp, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError("tcp must be a 2-D matrix")
    return one_hot(np.argmax(t, axis=1), t.shape[1])
