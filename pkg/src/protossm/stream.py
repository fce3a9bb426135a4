"""Online class-incremental training loop with reservoir replay."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import feedback as mf
from .data import task_view
from .errors import DataError, EvaluationError, ParameterError
from .metrics import average_accuracy, average_forgetting, incremental_curve
from .numerics import adam_step, softmax_nll
from .prototypes import PrototypeBank, apa_loss, register_classes, update_prototypes
from .rng import XorShiftRng
from .sdsm import FEEDBACK_PARAMS, SdsmConfig, SdsmModel, forward, predict


@dataclass
class TaskSchedule:
    """Ordered class lists, one per task.

    With ``allow_repeats`` a class may appear in several tasks; its training
    samples are then split into disjoint equal shares, one per occurrence.
    """

    tasks: list
    batch_size: int = 10
    allow_repeats: bool = False

    def __post_init__(self):
        self.tasks = [list(map(int, t)) for t in self.tasks]
        flat = [k for t in self.tasks for k in t]
        if not self.tasks or any(not t for t in self.tasks):
            raise ParameterError("schedule needs at least one non-empty task")
        if any(len(t) != len(set(t)) for t in self.tasks):
            raise ParameterError("a task lists the same class twice")
        if not self.allow_repeats and len(flat) != len(set(flat)):
            raise ParameterError("task class lists must be disjoint")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be positive, got {self.batch_size}")

    @classmethod
    def split(cls, num_classes, classes_per_task, batch_size=10):
        if num_classes % classes_per_task:
            raise ParameterError(f"{classes_per_task} classes per task does not divide {num_classes}")
        tasks = [list(range(s, s + classes_per_task)) for s in range(0, num_classes, classes_per_task)]
        return cls(tasks, batch_size)


class ReplayBuffer:
    """Fixed-capacity exemplar store filled by reservoir sampling."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ParameterError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.inputs = []
        self.labels = []
        self.seen_count = 0

    def __len__(self):
        return len(self.labels)

    def sample(self, k, rng):
        """Up to ``k`` distinct stored exemplars, uniformly without replacement."""
        k = min(k, len(self))
        idx = rng.sample(len(self), k)
        return [self.inputs[i] for i in idx], [self.labels[i] for i in idx]


def reservoir_slot(seen_count, capacity, draw):
    """Slot that the item number ``seen_count`` (0-based) goes to, or -1.

    ``draw`` is uniform on ``[0, seen_count]``.  Works elementwise on arrays.
    """
    if np.ndim(draw):
        return np.where(draw < capacity, draw, -1)
    return draw if draw < capacity else -1


def reservoir_insert(buf, item, rng):
    x, y = item
    n = buf.seen_count
    if len(buf) < buf.capacity:
        buf.inputs.append(np.array(x, dtype=np.float64))
        buf.labels.append(int(y))
    else:
        slot = reservoir_slot(n, buf.capacity, rng.integers(n + 1))
        if slot >= 0:
            buf.inputs[slot] = np.array(x, dtype=np.float64)
            buf.labels[slot] = int(y)
    buf.seen_count = n + 1


@dataclass
class TrainConfig:
    tau: float = 0.1
    alpha: float = 0.9
    lam: float = 1.0
    m: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    buffer_capacity: int = 100
    replay_batch_size: int = 10
    epochs_per_batch: int = 1
    seed: int = 0
    use_apa: bool = True
    use_mf: bool = True
    feedback_rows: str = "first"
    freeze_feedback: bool = False
    normalize_prototypes: bool = False
    inference: str = "prototype"
    refresh_hidden: bool = False

    def __post_init__(self):
        checks = [
            ("tau", self.tau > 0), ("lam", self.lam >= 0), ("m", self.m >= 1),
            ("alpha", 0 <= self.alpha <= 1), ("lr", self.lr > 0), ("eps", self.eps > 0),
            ("beta1", 0 <= self.beta1 < 1), ("beta2", 0 <= self.beta2 < 1),
            ("buffer_capacity", self.buffer_capacity >= 1),
            ("replay_batch_size", self.replay_batch_size >= 0),
            ("epochs_per_batch", self.epochs_per_batch >= 1),
            ("feedback_rows", self.feedback_rows in ("first", "both")),
            ("inference", self.inference in ("prototype", "logits")),
        ]
        for name, ok in checks:
            if not ok:
                err = ParameterError(f"invalid value for {name}: {getattr(self, name)!r}")
                err.field = name
                raise err


@dataclass
class StepLosses:
    l_apa: float
    l_task: float
    l_total: float


def current_feedback(bank, cfg):
    return mf.refresh(bank, cfg.m, cfg.feedback_rows).signal if cfg.use_mf else None


def train_step(model, bank, cfg, new_batch, buf, rng):
    """One optimisation step on the new batch plus a replay draw.

    ``new_batch`` is ``(inputs [B, d], labels [B])``.  Returns the APA term,
    the cross-entropy term and their weighted sum.
    """
    x_new = np.atleast_2d(np.asarray(new_batch[0], dtype=np.float64))
    y_new = np.atleast_1d(np.asarray(new_batch[1], dtype=np.int64))
    if len(y_new) == 0:
        raise DataError("empty training batch")

    x, y = x_new, y_new
    if cfg.replay_batch_size and len(buf):
        rx, ry = buf.sample(cfg.replay_batch_size, rng)
        x = np.vstack([x_new, np.array(rx)])
        y = np.concatenate([y_new, np.array(ry, dtype=np.int64)])

    fb = current_feedback(bank, cfg)
    trace = forward(x, model, fb)
    if not (np.all(np.isfinite(trace.hidden.values)) and np.all(np.isfinite(trace.logits.values))):
        raise EvaluationError("forward pass produced non-finite values")
    fresh = register_classes(trace.hidden.values, y, bank)

    l_task = softmax_nll(trace.logits, y, 1.0)
    if cfg.use_apa:
        l_apa = apa_loss(trace.hidden, y, bank)
        total = l_apa + cfg.lam * l_task
    else:
        l_apa = None
        total = cfg.lam * l_task
    if not math.isfinite(float(total)):
        raise EvaluationError(f"non-finite loss {float(total)}")
    total.backward()

    for name, p in model.named_parameters():
        if p.grad is None:
            continue
        if cfg.freeze_feedback and name in FEEDBACK_PARAMS:
            p.tensor.grad = None
            continue
        adam_step(p, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

    hidden = trace.hidden.values
    if cfg.refresh_hidden:
        hidden = forward(x, model, fb).hidden.values
    update_prototypes(hidden, y, bank, skip=set(fresh))
    for item in zip(x_new, y_new):
        reservoir_insert(buf, item, rng)
    return StepLosses(0.0 if l_apa is None else float(l_apa), float(l_task), float(total))


@dataclass
class RunLedger:
    R: list
    avg_accuracy: float
    avg_forgetting: float
    seed: int
    config_hash: str
    config: dict = field(default_factory=dict)
    steps: list = field(default_factory=list, repr=False)
    model: SdsmModel = field(default=None, repr=False, compare=False)
    bank: PrototypeBank = field(default=None, repr=False, compare=False)

    @property
    def curve(self):
        return incremental_curve(self.R)

    def metrics_dict(self):
        return {
            "avg_accuracy": self.avg_accuracy,
            "avg_forgetting": self.avg_forgetting,
            "accuracy_matrix": self.R,
            "incremental_accuracy": self.curve,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
        }

    def metrics_json(self):
        return json.dumps(self.metrics_dict(), indent=2, sort_keys=True) + "\n"

    def accuracy_csv(self):
        T = len(self.R)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["after_task"] + [f"task_{j}" for j in range(T)])
        for i, row in enumerate(self.R):
            w.writerow([i] + [f"{v:.6f}" for v in row] + [""] * (T - len(row)))
        return buf.getvalue()

    def steps_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "task", "l_apa", "l_task", "l_total"])
        for step, task, losses in self.steps:
            w.writerow([step, task, repr(losses.l_apa), repr(losses.l_task), repr(losses.l_total)])
        return buf.getvalue()


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate(model, bank, cfg, ds, classes, batch=512):
    """Accuracy of the configured inference rule on the samples of ``classes``."""
    idx = [i for k in classes for i in ds.per_class.get(k, [])]
    if not idx:
        raise DataError(f"no test samples for classes {classes}")
    fb = current_feedback(bank, cfg)
    correct = 0
    for s in range(0, len(idx), batch):
        chunk = idx[s:s + batch]
        pred = predict(ds.inputs[chunk], model, bank, fb, cfg.inference)
        correct += int(np.sum(pred == ds.labels[chunk]))
    return correct / len(idx)


def run_stream(schedule, train, test, model_cfg, cfg, config_echo=None, access_log=None):
    """Train through ``schedule`` once, evaluating every seen task after each task.

    ``access_log``, if a list, receives ``(task_index, sample_index)`` for every
    read of a training sample from ``train``.
    """
    for t, classes in enumerate(schedule.tasks):
        for k in classes:
            if k not in train.per_class:
                raise DataError(f"class {k} (task {t}) missing from training data")
            if k not in test.per_class:
                raise DataError(f"class {k} (task {t}) missing from test data")
    if not isinstance(model_cfg, SdsmConfig):
        model_cfg = SdsmConfig(**model_cfg)

    root = XorShiftRng(cfg.seed)
    model = SdsmModel(model_cfg, root.split())
    shuffle_seed = root.next_u64()
    step_rng = root.split()
    bank = PrototypeBank(model_cfg.num_classes, model_cfg.hidden_dim, cfg.alpha, cfg.tau,
                         cfg.normalize_prototypes)
    buf = ReplayBuffer(cfg.buffer_capacity)

    occurrences = {}
    for t, classes in enumerate(schedule.tasks):
        for k in classes:
            occurrences.setdefault(k, []).append(t)

    R, steps = [], []
    step = 0
    for t, classes in enumerate(schedule.tasks):
        order = task_view(train, classes, (shuffle_seed + t) & ((1 << 64) - 1))
        if any(len(occurrences[k]) > 1 for k in classes):
            share = set()
            for k in classes:
                idx, reps = train.per_class[k], occurrences[k]
                o = reps.index(t)
                share.update(idx[o * len(idx) // len(reps):(o + 1) * len(idx) // len(reps)])
            order = [i for i in order if i in share]
        for s in range(0, len(order), schedule.batch_size):
            chunk = order[s:s + schedule.batch_size]
            if access_log is not None:
                access_log.extend((t, i) for i in chunk)
            batch = (train.inputs[chunk], train.labels[chunk])
            for _ in range(cfg.epochs_per_batch):
                losses = train_step(model, bank, cfg, batch, buf, step_rng)
                steps.append((step, t, losses))
                step += 1
        R.append([evaluate(model, bank, cfg, test, schedule.tasks[j]) for j in range(t + 1)])

    echo = config_echo if config_echo is not None else {
        "train": asdict(cfg), "model": asdict(model_cfg), "tasks": schedule.tasks,
        "batch_size": schedule.batch_size}
    with warnings.catch_warnings():
        # a single-task run has zero forgetting by definition
        warnings.simplefilter("ignore")
        forgetting = average_forgetting(R)
    return RunLedger(R, average_accuracy(R), forgetting, cfg.seed, config_hash(echo), echo,
                     steps, model, bank)
