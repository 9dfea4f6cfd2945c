"""Tape-free reverse-mode differentiation over numpy arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. :func:`backward` walks the
graph in reverse topological order. Ops are deliberately coarse (a whole
linear layer, a whole attention core, a whole RNN unroll) so the Python
overhead per training step stays small.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ConfigurationError, DataError, DimensionError, UsageError
from .params import Gradients, ParamSet


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward_fn) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def param_tensors(params: ParamSet) -> tuple[dict[str, Tensor], Gradients]:
    """Wrap each entry of ``params`` as a gradient-tracking leaf.

    Leaf gradients are views into the returned :class:`Gradients`, so after
    :func:`backward` the gradients are already laid out like ``params``.
    """
    grads = params.zeros_like()
    leaves = {name: Tensor(arr, True, grads[name]) for name, arr in params.items()}
    return leaves, grads


def backward(loss: Tensor) -> None:
    if not isinstance(loss, Tensor) or loss._backward is None:
        raise UsageError("backward() needs the scalar output of a recorded forward pass")
    if loss.value.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")

    order, seen, stack = [], set(), [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64)
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(
        value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def total(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _result(a.value * mask, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]

    def grad(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _result(a.value.mean(axis=axis), (a,), grad)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not train or rate <= 0.0:
        return a
    if rng is None:
        raise UsageError("dropout in train mode needs a random generator")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep
    return _result(a.value * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# layers


def linear(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``."""
    x = as_tensor(x)
    if w.value.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not conform to weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.value.reshape(-1, w.shape[0])
    y = x2 @ w.value
    if b is not None:
        y += b.value
    out_shape = lead + (w.shape[1],)

    def grad(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.value.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return _result(y.reshape(out_shape), parents, grad)


def attention_core(q: Tensor, k: Tensor, v: Tensor, heads: int, weights_out: list | None = None) -> Tensor:
    """Per-head scaled dot-product attention on already-projected ``[batch, seq, d]``."""
    for t in (k, v):
        if t.shape != q.shape:
            raise DimensionError(f"attention: q/k/v shapes differ: {q.shape} vs {t.shape}")
    if q.value.ndim != 3:
        raise DimensionError(f"attention: expected [batch, seq, d], got {q.shape}")
    d = q.shape[-1]
    if heads < 1 or d % heads:
        raise ConfigurationError(f"attention: model width {d} is not divisible by {heads} heads")
    qv = np.ascontiguousarray(q.value)
    kv = np.ascontiguousarray(k.value)
    vv = np.ascontiguousarray(v.value)
    out, attn = kernels.active.attention_forward(qv, kv, vv, heads)
    if weights_out is not None:
        weights_out.append(attn)

    def grad(g):
        return kernels.active.attention_backward(np.ascontiguousarray(g), qv, kv, vv, attn, heads)

    return _result(out, (q, k, v), grad)


def multi_head_attention(q, k, v, heads: int, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                         weights_out: list | None = None) -> Tensor:
    """Project q/k/v, attend per head, concatenate heads, project the output.

    Accepts ``[seq, d]`` (single sequence) or ``[batch, seq, d]`` inputs.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    single = q.value.ndim == 2
    d = q.shape[-1]
    if heads < 1 or d % heads:
        raise ConfigurationError(f"attention: model width {d} is not divisible by {heads} heads")
    for name, w in (("query", wq), ("key", wk), ("value", wv), ("output", wo)):
        if w.shape != (d, d):
            raise DimensionError(f"attention: {name} projection is {w.shape}, expected {(d, d)}")
    if single:
        q, k, v = (reshape(t, (1,) + t.shape) for t in (q, k, v))
    ctx = attention_core(linear(q, wq), linear(k, wk), linear(v, wv), heads, weights_out)
    out = linear(ctx, wo)
    return reshape(out, out.shape[1:]) if single else out


def elman_rnn(x, w_in: Tensor, w_rec: Tensor, bias: Tensor) -> Tensor:
    """Final hidden state of an Elman cell fed ``x[:, t]`` as scalar tokens."""
    xv = np.ascontiguousarray(as_tensor(x).value)
    if xv.ndim != 2:
        raise DimensionError(f"elman_rnn: expected [batch, steps], got {xv.shape}")
    hidden = w_rec.shape[0]
    if w_in.shape != (1, hidden) or w_rec.shape != (hidden, hidden) or bias.shape != (hidden,):
        raise DimensionError(
            f"elman_rnn: inconsistent cell shapes {w_in.shape}, {w_rec.shape}, {bias.shape}"
        )
    hs = kernels.active.elman_forward(xv, w_in.value, w_rec.value, bias.value)

    def grad(g):
        return kernels.active.elman_backward(np.ascontiguousarray(g), xv, w_rec.value, hs)

    return _result(hs[-1].copy(), (w_in, w_rec, bias), grad)


# ---------------------------------------------------------------------------
# losses


def softmax(logits) -> np.ndarray:
    return kernels.active.softmax_rows(as_tensor(logits).value)


def _check_labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    ok = (labels == 0) | (labels == 1)
    if not ok.all():
        raise DataError(f"label {labels[~ok][0]!r} outside {{0, 1}}")
    return labels.astype(np.intp)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch."""
    logits = as_tensor(logits)
    if logits.value.ndim != 2 or logits.shape[0] < 1:
        raise DimensionError(f"cross_entropy: expected [batch>=1, classes], got {logits.shape}")
    labels = _check_labels(labels, logits.shape[0])
    loss, dlogits = kernels.active.softmax_xent(np.ascontiguousarray(logits.value), labels)
    return _result(np.array(loss), (logits,), lambda g: (dlogits * g,))


def per_example_cross_entropy(logits, labels) -> np.ndarray:
    logits = np.ascontiguousarray(as_tensor(logits).value)
    labels = _check_labels(labels, logits.shape[0])
    return kernels.active.xent_per_example(logits, labels)


def distillation(old_logits, new_logits: Tensor, temperature: float) -> Tensor:
    """``T^2 * mean KL(softmax(old/T) || softmax(new/T))``; ``old_logits`` is a constant."""
    if not temperature > 0:
        raise ConfigurationError(f"distillation temperature must be > 0, got {temperature}")
    old = np.ascontiguousarray(as_tensor(old_logits).value)
    new_logits = as_tensor(new_logits)
    if old.shape != new_logits.shape:
        raise DimensionError(f"distillation: {old.shape} vs {new_logits.shape}")
    loss, dnew = kernels.active.distill_kl(old, np.ascontiguousarray(new_logits.value), temperature)
    return _result(np.array(loss), (new_logits,), lambda g: (dnew * g,))
