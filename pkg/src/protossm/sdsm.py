"""Patch-token selective state-space classifier.

An input vector is cut into ``L = d / patch_len`` patches, each patch is
embedded affinely into ``R^n``, and a diagonal gated recurrence runs over the
tokens::

    a_l = sigmoid(Ga u_l + base_a + WA fb)      # forget gate, in (0, 1)
    b_l = softplus(Gb u_l + base_b + WB fb)     # input gain, >= 0
    h_l = a_l * h_{l-1} + b_l * u_l,  h_0 = 0

The pooled state (last or mean over tokens) is the representation that the
prototype bank works in; ``logits = C h + head_b + WC fb`` feed the
cross-entropy term.  ``fb`` is the optional length-K feedback signal and the
three ``fb_W*`` projections start at zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, ParameterError, StateError
from .numerics import Parameter, Tensor, cosine_rows

POOLING_CODES = {"last": 0, "mean": 1}
CHECKPOINT_MAGIC = b"AMV1"


@dataclass(frozen=True)
class SdsmConfig:
    input_dim: int
    patch_len: int
    hidden_dim: int
    num_classes: int
    pooling: str = "mean"

    def __post_init__(self):
        for name in ("input_dim", "patch_len", "hidden_dim", "num_classes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if self.input_dim % self.patch_len:
            raise ParameterError(
                f"patch_len {self.patch_len} does not divide input_dim {self.input_dim}")
        if self.pooling not in POOLING_CODES:
            raise ParameterError(f"pooling must be one of {sorted(POOLING_CODES)}, got {self.pooling!r}")

    @property
    def seq_len(self):
        return self.input_dim // self.patch_len


@dataclass
class ForwardTrace:
    hidden: Tensor        # [B, n] or [n]
    logits: Tensor        # [B, K] or [K]
    forget_gates: Tensor  # [B, L, n]
    input_gates: Tensor   # [B, L, n]
    states: list = field(default_factory=list)


# declaration order; also the checkpoint serialization order
PARAM_NAMES = ("embed_W", "embed_b", "gate_Ga", "base_a", "gate_Gb", "base_b",
               "head_C", "head_b", "fb_WA", "fb_WB", "fb_WC")
FEEDBACK_PARAMS = ("fb_WA", "fb_WB", "fb_WC")


class SdsmModel:
    def __init__(self, config, rng=None):
        self.config = config
        n, p, K = config.hidden_dim, config.patch_len, config.num_classes

        def uniform(shape, fan_in):
            if rng is None:
                return np.zeros(shape)
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, shape)

        self.embed_W = Parameter(uniform((n, p), p))
        self.embed_b = Parameter(np.zeros(n))
        self.gate_Ga = Parameter(uniform((n, n), n))
        self.base_a = Parameter(np.zeros(n))
        self.gate_Gb = Parameter(uniform((n, n), n))
        self.base_b = Parameter(np.zeros(n))
        self.head_C = Parameter(uniform((K, n), n))
        self.head_b = Parameter(np.zeros(K))
        self.fb_WA = Parameter(np.zeros((n, K)))
        self.fb_WB = Parameter(np.zeros((n, K)))
        self.fb_WC = Parameter(np.zeros((K, K)))

    def parameters(self):
        return [getattr(self, name) for name in PARAM_NAMES]

    def named_parameters(self):
        return [(name, getattr(self, name)) for name in PARAM_NAMES]

    def copy(self):
        clone = SdsmModel(self.config)
        for name, p in self.named_parameters():
            setattr(clone, name, Parameter(Tensor(p.values.copy()), p.adam_m.copy(),
                                           p.adam_v.copy(), p.step_count))
        return clone


def _check_input(x, config):
    values = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if values.shape[-1:] != (config.input_dim,) or values.ndim > 2:
        raise DimensionError(f"expected input of length {config.input_dim}, got shape {values.shape}")
    return values


def embed(x, model):
    """Token sequence [L, n] (or [B, L, n] for a batch) for input ``x``."""
    cfg = model.config
    values = _check_input(x, cfg)
    patches = values.reshape(values.shape[:-1] + (cfg.seq_len, cfg.patch_len))
    return Tensor(patches) @ model.embed_W.tensor.T + model.embed_b.tensor


def forward(x, model, fb=None):
    """Run the gated recurrence on ``x`` ([d] or [B, d]) with optional feedback ``fb``."""
    cfg = model.config
    single = _check_input(x, cfg).ndim == 1
    if fb is not None:
        fb = np.asarray(fb.values if isinstance(fb, Tensor) else fb, dtype=np.float64)
        if fb.shape != (cfg.num_classes,):
            raise DimensionError(f"feedback signal must have length {cfg.num_classes}, got {fb.shape}")
    u = embed(x, model)
    if single:
        u = u.reshape(1, cfg.seq_len, cfg.hidden_dim)

    pre_a = u @ model.gate_Ga.tensor.T + model.base_a.tensor
    pre_b = u @ model.gate_Gb.tensor.T + model.base_b.tensor
    if fb is not None:
        pre_a = pre_a + model.fb_WA.tensor @ Tensor(fb)
        pre_b = pre_b + model.fb_WB.tensor @ Tensor(fb)
    a = pre_a.sigmoid()
    b = pre_b.softplus()

    states = []
    h = None
    for l in range(cfg.seq_len):
        drive = b[:, l, :] * u[:, l, :]
        h = drive if h is None else a[:, l, :] * h + drive
        states.append(h)

    if cfg.pooling == "last":
        hidden = h
    else:
        hidden = states[0]
        for s in states[1:]:
            hidden = hidden + s
        hidden = hidden / cfg.seq_len

    logits = hidden @ model.head_C.tensor.T + model.head_b.tensor
    if fb is not None:
        logits = logits + model.fb_WC.tensor @ Tensor(fb)
    if single:
        hidden, logits = hidden[0], logits[0]
    return ForwardTrace(hidden, logits, a, b, states)


def predict(x, model, bank, fb=None, rule="prototype"):
    """Class indices for ``x``: nearest seen prototype (cosine) or logit argmax.

    Ties go to the smallest class index.  Returns an int for a single input and
    an int array for a batch.
    """
    values = _check_input(x, model.config)
    trace = forward(values, model, fb)
    if rule == "logits":
        scores = np.atleast_2d(trace.logits.values)
    elif rule == "prototype":
        if not np.any(bank.seen):
            raise StateError("no seen prototypes to classify against")
        h = np.atleast_2d(trace.hidden.values)
        scores = cosine_rows(h, bank.protos, bank.seen).values
    else:
        raise ParameterError(f"unknown inference rule {rule!r}")
    labels = np.argmax(scores, axis=1)
    return int(labels[0]) if values.ndim == 1 else labels


def save_checkpoint(path, model, bank=None):
    """Write parameters (and optionally the prototype bank) in the AMV1 layout.

    Layout, all little-endian: ``b"AMV1"``; five uint32 (input_dim, patch_len,
    hidden_dim, num_classes, pooling code); each parameter in declaration
    order as float64; uint32 bank flag; if set, K seen bytes then K*n float64
    prototypes.
    """
    cfg = model.config
    chunks = [CHECKPOINT_MAGIC,
              struct.pack("<5I", cfg.input_dim, cfg.patch_len, cfg.hidden_dim,
                          cfg.num_classes, POOLING_CODES[cfg.pooling])]
    for p in model.parameters():
        chunks.append(p.values.astype("<f8").tobytes())
    chunks.append(struct.pack("<I", 0 if bank is None else 1))
    if bank is not None:
        chunks.append(np.asarray(bank.seen, dtype=np.uint8).tobytes())
        chunks.append(bank.protos.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns ``(model, seen, protos)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    d, p, n, K, code = struct.unpack_from("<5I", blob, 4)
    pooling = {v: k for k, v in POOLING_CODES.items()}.get(code)
    if pooling is None:
        raise FormatError(f"{path}: unknown pooling code {code}")
    model = SdsmModel(SdsmConfig(d, p, n, K, pooling))
    offset = 24
    for par in model.parameters():
        nbytes = par.values.size * 8
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated parameter block")
        par.values[...] = np.frombuffer(blob, "<f8", par.values.size, offset).reshape(par.shape)
        offset += nbytes
    (has_bank,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    seen = protos = None
    if has_bank:
        seen = np.frombuffer(blob, np.uint8, K, offset).astype(bool)
        offset += K
        protos = np.frombuffer(blob, "<f8", K * n, offset).reshape(K, n).copy()
        offset += K * n * 8
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return model, seen, protos
