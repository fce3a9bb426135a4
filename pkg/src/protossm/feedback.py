"""Prototype-confusion feedback.

The pairwise cosine matrix of the prototype bank measures which classes are
easy to confuse.  The ``m`` most similar distinct pairs are picked and their
rows averaged into a length-K signal that the model consumes as an extra
input to its gates and head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .numerics import COSINE_EPS


@dataclass
class FeedbackState:
    F: np.ndarray
    top_pairs: list
    signal: np.ndarray
    m: int


def feedback_matrix(bank):
    """K x K cosine similarity between prototypes; zero rows/columns for unseen classes."""
    P = bank.protos
    norms = np.linalg.norm(P, axis=1)
    live = bank.seen & (norms >= COSINE_EPS)
    unit = np.where(live[:, None], P / np.where(live, norms, 1.0)[:, None], 0.0)
    F = unit @ unit.T
    F = 0.5 * (F + F.T)
    np.clip(F, -1.0, 1.0, out=F)
    F[np.diag_indices_from(F)] = live.astype(np.float64)
    return F


def feedback_signal(F, seen, m, rows="first"):
    """Top-m most similar seen pairs (i < j) and the mean of their rows of ``F``.

    Ties in similarity go to the lexicographically smaller pair.  ``rows="both"``
    averages rows i and j of every selected pair instead of row i only.
    """
    if m < 1:
        raise ParameterError(f"m must be a positive integer, got {m}")
    if rows not in ("first", "both"):
        raise ParameterError(f"rows must be 'first' or 'both', got {rows!r}")
    F = np.asarray(F, dtype=np.float64)
    K = F.shape[0]
    idx = np.flatnonzero(np.asarray(seen, dtype=bool))
    if idx.size < 2:
        return [], np.zeros(K)
    ii, jj = np.triu_indices(idx.size, k=1)
    pi, pj = idx[ii], idx[jj]
    # lexsort: last key is primary
    order = np.lexsort((pj, pi, -F[pi, pj]))[:m]
    pairs = [(int(pi[o]), int(pj[o])) for o in order]
    if rows == "first":
        signal = F[[i for i, _ in pairs]].mean(axis=0)
    else:
        signal = F[[k for pair in pairs for k in pair]].mean(axis=0)
    return pairs, signal


def refresh(bank, m=2, rows="first"):
    F = feedback_matrix(bank)
    pairs, signal = feedback_signal(F, bank.seen, m, rows)
    return FeedbackState(F, pairs, signal, m)


def feedback_csv_row(step, state):
    """One diagnostic CSV line: step, selected pairs, signal entries."""
    pairs = " ".join(f"{i}-{j}" for i, j in state.top_pairs)
    return ",".join([str(step), pairs] + [repr(float(v)) for v in state.signal])
