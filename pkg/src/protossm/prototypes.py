"""Online class prototypes: cosine-contrastive loss and momentum updates."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError, StateError
from .numerics import Tensor, cosine_rows, softmax_nll, stack


class PrototypeBank:
    """K prototype vectors in the hidden space with per-class seen flags.

    Unseen classes hold exactly-zero vectors.  ``alpha`` is the weight kept on
    the old prototype at each update, ``tau`` the contrastive temperature.
    """

    def __init__(self, num_classes, dim, alpha=0.9, tau=0.1, normalize=False):
        if not 0.0 <= alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
        if tau <= 0:
            raise ParameterError(f"tau must be positive, got {tau}")
        self.protos = np.zeros((num_classes, dim))
        self.seen = np.zeros(num_classes, dtype=bool)
        self.alpha = float(alpha)
        self.tau = float(tau)
        self.normalize = normalize

    @property
    def num_classes(self):
        return self.protos.shape[0]

    @property
    def dim(self):
        return self.protos.shape[1]

    def copy(self):
        other = PrototypeBank(self.num_classes, self.dim, self.alpha, self.tau, self.normalize)
        other.protos = self.protos.copy()
        other.seen = self.seen.copy()
        return other


def _as_batch(batch_h):
    if isinstance(batch_h, Tensor):
        return batch_h if batch_h.ndim == 2 else batch_h.reshape(1, -1)
    if isinstance(batch_h, (list, tuple)) and batch_h and isinstance(batch_h[0], Tensor):
        return stack(batch_h)
    return Tensor(np.atleast_2d(np.asarray(batch_h, dtype=np.float64)))


def similarities(h, bank):
    """Cosine similarity of ``h`` ([n] or [B, n]) to each prototype; ``-inf`` for unseen classes."""
    if not np.any(bank.seen):
        raise StateError("prototype bank has no seen classes")
    batch = _as_batch(h)
    if batch.shape[1] != bank.dim:
        raise DimensionError(f"hidden length {batch.shape[1]} != prototype length {bank.dim}")
    s = cosine_rows(batch, bank.protos, bank.seen)
    return s[0] if isinstance(h, Tensor) and h.ndim == 1 else s


def apa_loss(batch_h, labels, bank):
    """Mean temperature-scaled softmax NLL of each sample's own-class similarity.

    Only seen classes compete in the softmax.  Gradients reach ``batch_h``;
    prototypes are constants.
    """
    batch = _as_batch(batch_h)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (batch.shape[0],):
        raise DimensionError(f"{labels.size} labels for {batch.shape[0]} hidden vectors")
    if np.any(labels < 0) or np.any(labels >= bank.num_classes):
        raise IndexError(f"label out of range [0, {bank.num_classes})")
    if not np.all(bank.seen[labels]):
        missing = sorted(set(labels[~bank.seen[labels]].tolist()))
        raise StateError(f"classes {missing} have no prototype yet")
    return softmax_nll(similarities(batch, bank), labels, bank.tau)


def _class_means(batch_h, labels, num_classes):
    h = batch_h.values if isinstance(batch_h, Tensor) else np.asarray(batch_h, dtype=np.float64)
    h = np.atleast_2d(h)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (h.shape[0],):
        raise DimensionError(f"{labels.size} labels for {h.shape[0]} hidden vectors")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise IndexError(f"label out of range [0, {num_classes})")
    return {int(k): h[labels == k].mean(axis=0) for k in np.unique(labels)}


def _maybe_normalize(bank, k):
    if bank.normalize:
        norm = np.linalg.norm(bank.protos[k])
        if norm > 0:
            bank.protos[k] = bank.protos[k] / norm


def register_classes(batch_h, labels, bank):
    """Set prototypes of first-seen classes to their batch mean. Returns the classes registered."""
    fresh = []
    for k, mean in _class_means(batch_h, labels, bank.num_classes).items():
        if not bank.seen[k]:
            bank.protos[k] = mean
            bank.seen[k] = True
            _maybe_normalize(bank, k)
            fresh.append(k)
    return fresh


def update_prototypes(batch_h, labels, bank, skip=()):
    """Momentum update ``p_k <- alpha p_k + (1 - alpha) mean_k`` for classes in the batch.

    Unseen classes are set to their batch mean instead.  Classes in ``skip``
    and classes absent from the batch are left untouched.
    """
    a = bank.alpha
    for k, mean in _class_means(batch_h, labels, bank.num_classes).items():
        if k in skip:
            continue
        if bank.seen[k]:
            bank.protos[k] = a * bank.protos[k] + (1.0 - a) * mean
        else:
            bank.protos[k] = mean
            bank.seen[k] = True
        _maybe_normalize(bank, k)
