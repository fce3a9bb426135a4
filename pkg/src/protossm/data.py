"""CIFAR binary readers, synthetic Gaussian streams and per-task views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ParameterError
from .rng import XorShiftRng

CIFAR_PIXELS = 3072
CIFAR10_RECORD = 1 + CIFAR_PIXELS
CIFAR100_RECORD = 2 + CIFAR_PIXELS


class Dataset:
    """Inputs [N, d] in float64 with integer labels in ``[0, num_classes)``."""

    def __init__(self, inputs, labels, num_classes):
        inputs = np.asarray(inputs, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if inputs.ndim != 2:
            inputs = inputs.reshape(len(labels), -1)
        if len(inputs) != len(labels):
            raise DataError(f"{len(inputs)} inputs but {len(labels)} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise DataError(f"labels must lie in [0, {num_classes})")
        self.inputs = inputs
        self.labels = labels
        self.num_classes = int(num_classes)
        self.per_class = {int(k): np.flatnonzero(labels == k).tolist() for k in np.unique(labels)}

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)


def _records(blob, size):
    blob = bytes(blob)
    if len(blob) % size:
        raise FormatError(f"file length {len(blob)} is not a multiple of the {size}-byte record")
    return np.frombuffer(blob, dtype=np.uint8).reshape(-1, size)


def read_cifar10(blob):
    """Parse CIFAR-10 binary records (label byte + 3072 channel-planar pixels)."""
    rec = _records(blob, CIFAR10_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"record {bad[0]}: label byte {labels[bad[0]]} exceeds 9")
    return Dataset(rec[:, 1:] / 255.0, labels, 10)


def read_cifar100(blob, granularity="fine"):
    """Parse CIFAR-100 binary records (coarse byte, fine byte, 3072 pixels)."""
    if granularity not in ("fine", "coarse"):
        raise ParameterError(f"granularity must be 'fine' or 'coarse', got {granularity!r}")
    rec = _records(blob, CIFAR100_RECORD)
    coarse = rec[:, 0].astype(np.int64)
    fine = rec[:, 1].astype(np.int64)
    for name, lab, top in (("coarse", coarse, 19), ("fine", fine, 99)):
        bad = np.flatnonzero(lab > top)
        if bad.size:
            raise FormatError(f"record {bad[0]}: {name} label byte {lab[bad[0]]} exceeds {top}")
    if granularity == "fine":
        return Dataset(rec[:, 2:] / 255.0, fine, 100)
    return Dataset(rec[:, 2:] / 255.0, coarse, 20)


def read_cifar_file(path, kind="cifar10", granularity="fine"):
    with open(path, "rb") as fh:
        blob = fh.read()
    if kind == "cifar10":
        return read_cifar10(blob)
    if kind == "cifar100":
        return read_cifar100(blob, granularity)
    raise ParameterError(f"unknown CIFAR kind {kind!r}")


def to_cifar_bytes(ds, coarse_labels=None):
    """Serialize ``ds`` in a CIFAR record layout.

    Inputs are min-max scaled over the whole dataset to [0, 1] and quantized to
    bytes, so inputs already on the ``k/255`` grid in [0, 1] round-trip exactly
    when they span the full range.  More than 10 classes selects the 3074-byte
    CIFAR-100 layout.
    """
    x = ds.inputs
    lo, hi = float(x.min()), float(x.max())
    if lo < 0.0 or hi > 1.0:
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    pixels = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    labels = ds.labels.astype(np.uint8)[:, None]
    if ds.num_classes <= 10:
        rec = np.hstack([labels, pixels])
    elif ds.num_classes <= 100:
        coarse = labels // 5 if coarse_labels is None else np.asarray(coarse_labels, np.uint8)[:, None]
        rec = np.hstack([coarse, labels, pixels])
    else:
        raise ParameterError("CIFAR layouts hold at most 100 classes")
    return rec.tobytes()


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    input_dim: int
    samples_per_class: int
    separation: float = 4.0
    stddev: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.separation <= 0:
            raise ParameterError(f"separation must be positive, got {self.separation}")
        if self.stddev <= 0:
            raise ParameterError(f"stddev must be positive, got {self.stddev}")
        for name in ("num_classes", "input_dim", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")


def class_means(spec, rng=None):
    """Class centres on a sphere of radius ``separation``, pairwise at least ``separation`` apart."""
    rng = XorShiftRng(spec.seed).split() if rng is None else rng
    means = []
    for _ in range(spec.num_classes):
        for _attempt in range(10_000):
            v = rng.standard_normal(spec.input_dim)
            norm = np.linalg.norm(v)
            if norm == 0:
                continue
            v = spec.separation * v / norm
            if all(np.linalg.norm(v - m) >= spec.separation for m in means):
                break
        else:
            raise ParameterError(
                f"cannot place {spec.num_classes} means {spec.separation} apart in {spec.input_dim} dims")
        means.append(v)
    return np.array(means)


def gen_synthetic(spec):
    """Gaussian blobs split 80/20 per class into (train, test)."""
    rng = XorShiftRng(spec.seed)
    means = class_means(spec, rng.split())
    noise_rng = rng.split()
    n_train = int(round(0.8 * spec.samples_per_class))
    xs_tr, ys_tr, xs_te, ys_te = [], [], [], []
    for k in range(spec.num_classes):
        x = means[k] + spec.stddev * noise_rng.standard_normal((spec.samples_per_class, spec.input_dim))
        xs_tr.append(x[:n_train])
        xs_te.append(x[n_train:])
        ys_tr += [k] * n_train
        ys_te += [k] * (spec.samples_per_class - n_train)
    d = spec.input_dim
    train = Dataset(np.vstack(xs_tr).reshape(-1, d), ys_tr, spec.num_classes)
    test = Dataset(np.vstack(xs_te).reshape(-1, d), ys_te, spec.num_classes)
    return train, test


def standardize(train, test):
    """Per-feature z-scoring with statistics of ``train``."""
    mu = train.inputs.mean(axis=0)
    sd = train.inputs.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (Dataset((train.inputs - mu) / sd, train.labels, train.num_classes),
            Dataset((test.inputs - mu) / sd, test.labels, test.num_classes))


def limit_per_class(ds, count):
    """The first ``count`` samples of every class, in dataset order."""
    keep = sorted(i for idx in ds.per_class.values() for i in idx[:count])
    return ds.subset(keep)


def task_view(ds, classes, seed):
    """Indices of all samples whose label is in ``classes``, shuffled by ``seed``."""
    missing = [k for k in classes if k not in ds.per_class]
    if missing:
        raise DataError(f"class {missing[0]} has no samples in the dataset")
    idx = sorted(i for k in classes for i in ds.per_class[k])
    order = XorShiftRng(seed).permutation(len(idx))
    return [idx[o] for o in order]
