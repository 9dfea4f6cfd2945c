"""Pure-numpy reference implementations of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_ckernels`` extension. This module is always importable and is the
fallback whenever the extension is missing or disabled.
"""

import numpy as np

NAME = "numpy"


def softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    n = logits.shape[0]
    logp = log_softmax_rows(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), grad


def xent_per_example(logits, labels):
    logp = log_softmax_rows(logits)
    return -logp[np.arange(logits.shape[0]), labels]


def distill_kl(old_logits, new_logits, temperature):
    """``T^2 * mean KL(softmax(old/T) || softmax(new/T))`` and its gradient w.r.t. new."""
    n = new_logits.shape[0]
    t = float(temperature)
    logp = log_softmax_rows(old_logits / t)
    logq = log_softmax_rows(new_logits / t)
    p = np.exp(logp)
    loss = (p * (logp - logq)).sum() * t * t / n
    grad = (np.exp(logq) - p) * (t / n)
    return float(loss), grad


def attention_forward(q, k, v, heads):
    """Scaled dot-product attention over ``[batch, seq, d]`` with ``heads`` heads.

    Returns the concatenated head outputs ``[batch, seq, d]`` and the
    attention weights ``[batch, heads, seq, seq]``.
    """
    b, s, d = q.shape
    hd = d // heads
    scale = 1.0 / np.sqrt(hd)
    qh = q.reshape(b, s, heads, hd).transpose(0, 2, 1, 3)
    kh = k.reshape(b, s, heads, hd).transpose(0, 2, 1, 3)
    vh = v.reshape(b, s, heads, hd).transpose(0, 2, 1, 3)
    weights = softmax_rows((qh @ kh.transpose(0, 1, 3, 2)) * scale)
    out = (weights @ vh).transpose(0, 2, 1, 3).reshape(b, s, d)
    return out, weights


def attention_backward(grad_out, q, k, v, weights, heads):
    b, s, d = q.shape
    hd = d // heads
    scale = 1.0 / np.sqrt(hd)
    qh = q.reshape(b, s, heads, hd).transpose(0, 2, 1, 3)
    kh = k.reshape(b, s, heads, hd).transpose(0, 2, 1, 3)
    vh = v.reshape(b, s, heads, hd).transpose(0, 2, 1, 3)
    go = grad_out.reshape(b, s, heads, hd).transpose(0, 2, 1, 3)
    gw = go @ vh.transpose(0, 1, 3, 2)
    gv = weights.transpose(0, 1, 3, 2) @ go
    gs = weights * (gw - (gw * weights).sum(axis=-1, keepdims=True)) * scale
    gq = gs @ kh
    gk = gs.transpose(0, 1, 3, 2) @ qh

    def merge(t):
        return np.ascontiguousarray(t.transpose(0, 2, 1, 3).reshape(b, s, d))

    return merge(gq), merge(gk), merge(gv)


def elman_forward(x, w_in, w_rec, bias):
    """Run ``h_t = tanh(x_t * w_in + h_{t-1} @ w_rec + bias)`` over scalar tokens.

    ``x`` is ``[batch, steps]``; returns all hidden states ``[steps + 1, batch, hidden]``
    with ``h_0 = 0``.
    """
    b, steps = x.shape
    hidden = w_rec.shape[0]
    hs = np.zeros((steps + 1, b, hidden))
    w_in = w_in.reshape(hidden)
    for t in range(steps):
        hs[t + 1] = np.tanh(np.outer(x[:, t], w_in) + hs[t] @ w_rec + bias)
    return hs


def elman_backward(grad_last, x, w_rec, hs):
    """Backpropagation through time from a gradient on the final hidden state."""
    steps = x.shape[1]
    hidden = w_rec.shape[0]
    g_in = np.zeros(hidden)
    g_rec = np.zeros((hidden, hidden))
    g_bias = np.zeros(hidden)
    dh = grad_last
    for t in range(steps, 0, -1):
        da = dh * (1.0 - hs[t] * hs[t])
        g_in += x[:, t - 1] @ da
        g_rec += hs[t - 1].T @ da
        g_bias += da.sum(axis=0)
        dh = da @ w_rec.T
    return g_in.reshape(1, hidden), g_rec, g_bias


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """In-place Adam update of flat float64 arrays; ``step`` is the 1-based count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def byte_histogram(data):
    return np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256).astype(np.int64)


def count_redirections(data, start):
    """Non-overlapping ``//`` occurrences whose first byte sits at offset >= ``start``."""
    return data.count(b"//", start)
