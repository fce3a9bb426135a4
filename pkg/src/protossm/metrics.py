"""Accuracy-matrix summaries for class-incremental runs.

``R[i][j]`` is the accuracy on task ``j`` after training through task ``i``
(0-based); only ``j <= i`` is defined.
"""

import warnings

import numpy as np

from .errors import StateError


def _final_row(R):
    T = len(R)
    if T == 0:
        raise StateError("empty accuracy matrix")
    last = R[T - 1]
    if len(last) < T or any(v is None or not np.isfinite(v) for v in last[:T]):
        raise StateError(f"accuracy matrix is incomplete at row {T - 1}")
    return T, last


def average_accuracy(R):
    T, last = _final_row(R)
    return float(sum(last[:T]) / T)


def average_forgetting(R):
    T, last = _final_row(R)
    if T < 2:
        warnings.warn("average forgetting needs at least two tasks; reporting 0", stacklevel=2)
        return 0.0
    drops = []
    for j in range(T - 1):
        best = max(R[i][j] for i in range(j, T - 1))
        drops.append(best - last[j])
    return float(sum(drops) / (T - 1))


def incremental_curve(R):
    """Mean of row ``i`` over tasks ``0..i`` for every row."""
    if len(R) == 0:
        raise StateError("empty accuracy matrix")
    for i, row in enumerate(R):
        if len(row) < i + 1 or any(v is None or not np.isfinite(v) for v in row[: i + 1]):
            raise StateError(f"accuracy matrix is incomplete at row {i}")
    return [float(sum(row[: i + 1]) / (i + 1)) for i, row in enumerate(R)]
