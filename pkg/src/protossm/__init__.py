"""Selective state-space classifier with online prototypes for class-incremental streams."""

from .data import Dataset, SyntheticSpec, gen_synthetic, read_cifar10, read_cifar100, task_view
from .feedback import FeedbackState, feedback_matrix, feedback_signal, refresh
from .metrics import average_accuracy, average_forgetting, incremental_curve
from .numerics import Parameter, Tensor, adam_step, cosine_sim, grad_check, matmul, softmax_nll
from .prototypes import PrototypeBank, apa_loss, similarities, update_prototypes
from .rng import XorShiftRng
from .sdsm import SdsmConfig, SdsmModel, embed, forward, predict
from .stream import (ReplayBuffer, RunLedger, TaskSchedule, TrainConfig, reservoir_insert,
                     run_stream, train_step)

__version__ = "0.1.0"
