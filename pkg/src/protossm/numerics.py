"""Dense float64 tensors with reverse-mode gradients, plus Adam.

Each operation returns a new ``Tensor`` that remembers its parents and a
closure mapping the output gradient to parent gradients.  ``backward()``
walks the graph built by the current forward pass in reverse topological
order, so the "tape" is rebuilt every time the forward pass is re-run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EvaluationError, ParameterError, StateError

COSINE_EPS = 1e-12


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array with an optional accumulated gradient."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, _parents=(), _backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def __len__(self):
        return len(self.values)

    def __float__(self):
        if self.values.size != 1:
            raise TypeError(f"only single-element tensors convert to float, shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor({self.values!r}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.values

    def item(self):
        return float(self)

    def detach(self):
        return Tensor(self.values.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.values.size != 1:
                raise StateError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.values)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor(a.values + b.values, _parents=(a, b), _backward=back)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.values, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

        return Tensor(a.values * b.values, _parents=(a, b), _backward=back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        src = self

        def back(g):
            full = np.zeros_like(src.values)
            np.add.at(full, index, g)
            return (full,)

        return Tensor(self.values[index], _parents=(self,), _backward=back)

    @property
    def T(self):
        if self.ndim != 2:
            raise DimensionError(f"transpose needs a matrix, got shape {self.shape}")
        return Tensor(self.values.T, _parents=(self,), _backward=lambda g: (g.T,))

    def reshape(self, *shape):
        src_shape = self.shape
        return Tensor(self.values.reshape(*shape), _parents=(self,),
                      _backward=lambda g: (g.reshape(src_shape),))

    def sum(self, axis=None):
        src_shape = self.shape

        def back(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src_shape),)

        return Tensor(self.values.sum(axis=axis), _parents=(self,), _backward=back)

    def mean(self, axis=None):
        count = self.values.size if axis is None else self.shape[axis]
        return self.sum(axis) / count

    def sigmoid(self):
        out = _sigmoid(self.values)
        return Tensor(out, _parents=(self,), _backward=lambda g: (g * out * (1.0 - out),))

    def softplus(self):
        x = self.values
        return Tensor(np.logaddexp(0.0, x), _parents=(self,),
                      _backward=lambda g: (g * _sigmoid(x),))


def _sigmoid(x):
    # exp of a non-positive argument only, so no overflow for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def stack(tensors, axis=0):
    tensors = list(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor(np.stack([t.values for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=back)


def matmul(a, b):
    """Matrix product with numpy ``@`` semantics (1-D and batched operands allowed)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs arrays, got shapes {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if inner_a != inner_b:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        av, bv = a.values, b.values
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        ga = _unbroadcast(ga, a2.shape).reshape(av.shape)
        gb = _unbroadcast(gb, b2.shape).reshape(bv.shape)
        return ga, gb

    return Tensor(a.values @ b.values, _parents=(a, b), _backward=back)


def cosine_sim(u, v, eps=COSINE_EPS):
    """Cosine similarity of two vectors; exactly 0 if either norm is below ``eps``."""
    u, v = _as_tensor(u), _as_tensor(v)
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if u.ndim != 1 or u.shape != v.shape:
        raise DimensionError(f"cosine_sim needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = float(np.sqrt(u.values @ u.values))
    nv = float(np.sqrt(v.values @ v.values))
    if nu < eps or nv < eps:
        return Tensor(0.0, _parents=(u, v), _backward=lambda g: (None, None))
    s = float(u.values @ v.values) / (nu * nv)

    def back(g):
        gu = g * (v.values / (nu * nv) - s * u.values / (nu * nu))
        gv = g * (u.values / (nu * nv) - s * v.values / (nv * nv))
        return gu, gv

    return Tensor(s, _parents=(u, v), _backward=back)


def cosine_rows(h, protos, active=None, eps=COSINE_EPS, fill=-np.inf):
    """Row-wise cosine similarity of ``h`` [B, n] against constant ``protos`` [K, n].

    Columns where ``active`` is False are set to ``fill``.  Gradients flow into
    ``h`` only.
    """
    h = _as_tensor(h)
    P = np.asarray(protos, dtype=np.float64)
    if h.ndim != 2 or P.ndim != 2 or h.shape[1] != P.shape[1]:
        raise DimensionError(f"cosine_rows shape mismatch: {h.shape} vs {P.shape}")
    K = P.shape[0]
    active = np.ones(K, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    hn = np.sqrt(np.einsum("bi,bi->b", h.values, h.values))
    pn = np.sqrt(np.einsum("ki,ki->k", P, P))
    live_h = hn >= eps
    live_p = active & (pn >= eps)
    safe_h = np.where(live_h, hn, 1.0)
    safe_p = np.where(live_p, pn, 1.0)
    Phat = P / safe_p[:, None] * live_p[:, None]
    dots = h.values @ Phat.T
    s = dots / safe_h[:, None] * live_h[:, None]
    out = np.where(active[None, :], s, fill)

    def back(g):
        g = np.where(active[None, :], g, 0.0) * live_h[:, None]
        # d s_bk / d h_b = phat_k / |h_b| - s_bk h_b / |h_b|^2
        gh = (g @ Phat) / safe_h[:, None]
        gh -= (g * s).sum(axis=1)[:, None] * h.values / (safe_h ** 2)[:, None]
        return (gh,)

    return Tensor(out, _parents=(h,), _backward=back)


def softmax_nll(scores, target, tau=1.0):
    """Temperature-scaled softmax cross-entropy.

    ``scores`` is [K] with an integer ``target`` or [B, K] with a target per
    row, in which case the mean over rows is returned.  Entries equal to
    ``-inf`` take no probability mass.
    """
    scores = _as_tensor(scores)
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    single = scores.ndim == 1
    z = scores.values[None, :] if single else scores.values
    if z.ndim != 2 or z.shape[1] < 1:
        raise DimensionError(f"softmax_nll needs [K] or [B, K] scores, got {scores.shape}")
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if targets.shape != (z.shape[0],):
        raise DimensionError(f"{targets.size} targets for {z.shape[0]} score rows")
    K = z.shape[1]
    if np.any(targets < 0) or np.any(targets >= K):
        raise IndexError(f"target out of range [0, {K}): {targets.tolist()}")
    rows = np.arange(z.shape[0])
    if not np.all(np.isfinite(z[rows, targets])):
        raise StateError("target score is not finite")
    zt = z / tau
    zmax = zt.max(axis=1, keepdims=True)
    shifted = zt - zmax
    ex = np.exp(shifted)
    denom = ex.sum(axis=1)
    nll = np.log(denom) - shifted[rows, targets]
    nll = np.maximum(nll, 0.0)
    B = z.shape[0]
    probs = ex / denom[:, None]

    def back(g):
        d = probs.copy()
        d[rows, targets] -= 1.0
        d *= g / (tau * B)
        return (d[0] if single else d,)

    return Tensor(nll.mean(), _parents=(scores,), _backward=back)


@dataclass(eq=False)
class Parameter:
    """A trainable tensor together with its Adam moment estimates."""

    tensor: Tensor
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        if not isinstance(self.tensor, Tensor):
            self.tensor = Tensor(self.tensor)
        self.tensor.requires_grad = True
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.tensor.values)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.tensor.values)

    @property
    def values(self):
        return self.tensor.values

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape


def adam_step(p, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of ``p`` in place; clears the gradient."""
    if p.tensor.grad is None:
        raise StateError("adam_step called on a parameter without a gradient")
    if lr <= 0 or eps <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1):
        raise ParameterError(f"invalid Adam hyperparameters lr={lr} betas=({beta1}, {beta2}) eps={eps}")
    g = p.tensor.grad
    p.step_count += 1
    t = p.step_count
    p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
    p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
    m_hat = p.adam_m / (1.0 - beta1 ** t)
    v_hat = p.adam_v / (1.0 - beta2 ** t)
    p.tensor.values -= lr * m_hat / (np.sqrt(v_hat) + eps)
    p.tensor.grad = None


def grad_check(fn, params, h=1e-5):
    """Largest relative gap between reverse-mode and central-difference gradients.

    ``fn`` takes no arguments and returns a scalar ``Tensor`` built from
    ``params`` (Tensors or Parameters).  The denominator of each relative error
    is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if h <= 0:
        raise ParameterError(f"step h must be positive, got {h}")
    tensors = [p.tensor if isinstance(p, Parameter) else p for p in params]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    out = fn()
    if not math.isfinite(float(out)):
        raise EvaluationError(f"function value is not finite: {float(out)}")
    out.backward()
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in tensors]

    def value():
        v = float(fn())
        if not math.isfinite(v):
            raise EvaluationError(f"function value is not finite: {v}")
        return v

    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.values.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(num), 1e-8)
            worst = max(worst, abs(gflat[i] - num) / denom)
    for t in tensors:
        t.grad = None
    return worst
