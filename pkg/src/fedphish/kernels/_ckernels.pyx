# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_numpy.py`` (same signatures, same math)."""

import numpy as np

from libc.math cimport exp, log, pow, sqrt, tanh
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


cdef void _mm(const double* a, const double* b, double* c, int m, int k, int n,
              bint trans_a, bint trans_b, double beta) noexcept nogil:
    # Row-major c[m, n] = op(a)[m, k] @ op(b)[k, n] + beta * c, via column-major dgemm on transposes.
    cdef char ta = b'T' if trans_a else b'N'
    cdef char tb = b'T' if trans_b else b'N'
    cdef int lda = m if trans_a else k
    cdef int ldb = k if trans_b else n
    cdef double alpha = 1.0
    dgemm(&tb, &ta, &n, &m, &k, &alpha, <double*> b, &ldb, <double*> a, &lda, &beta, c, &n)


def softmax_rows(z):
    z = np.ascontiguousarray(z, dtype=np.float64)
    out = np.empty_like(z)
    if z.size:
        _softmax2d(z.reshape(-1, z.shape[z.ndim - 1]), out.reshape(-1, z.shape[z.ndim - 1]))
    return out


cdef void _softmax2d(const double[:, ::1] z, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = z.shape[0], c = z.shape[1]
    cdef double mx, s
    for i in range(n):
        mx = z[i, 0]
        for j in range(1, c):
            if z[i, j] > mx:
                mx = z[i, j]
        s = 0.0
        for j in range(c):
            out[i, j] = exp(z[i, j] - mx)
            s += out[i, j]
        for j in range(c):
            out[i, j] /= s


def log_softmax_rows(z):
    z = np.ascontiguousarray(z, dtype=np.float64)
    out = np.empty_like(z)
    if z.size:
        _log_softmax2d(z.reshape(-1, z.shape[z.ndim - 1]), out.reshape(-1, z.shape[z.ndim - 1]))
    return out


cdef void _log_softmax2d(const double[:, ::1] z, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = z.shape[0], c = z.shape[1]
    cdef double mx, s
    for i in range(n):
        mx = z[i, 0]
        for j in range(1, c):
            if z[i, j] > mx:
                mx = z[i, j]
        s = 0.0
        for j in range(c):
            s += exp(z[i, j] - mx)
        s = log(s)
        for j in range(c):
            out[i, j] = z[i, j] - mx - s


def softmax_xent(const double[:, ::1] logits, const Py_ssize_t[::1] labels):
    cdef Py_ssize_t i, j, n = logits.shape[0], c = logits.shape[1]
    grad_arr = np.empty((n, c))
    cdef double[:, ::1] grad = grad_arr
    cdef double mx, s, loss = 0.0
    with nogil:
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            s = 0.0
            for j in range(c):
                s += exp(logits[i, j] - mx)
            loss -= logits[i, labels[i]] - mx - log(s)
            for j in range(c):
                grad[i, j] = exp(logits[i, j] - mx) / s
            grad[i, labels[i]] -= 1.0
            for j in range(c):
                grad[i, j] /= n
    return loss / n, grad_arr


def xent_per_example(const double[:, ::1] logits, const Py_ssize_t[::1] labels):
    cdef Py_ssize_t i, j, n = logits.shape[0], c = logits.shape[1]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double mx, s
    with nogil:
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            s = 0.0
            for j in range(c):
                s += exp(logits[i, j] - mx)
            out[i] = -(logits[i, labels[i]] - mx - log(s))
    return out_arr


def distill_kl(old_logits, new_logits, double temperature):
    cdef const double[:, ::1] old = np.ascontiguousarray(old_logits, dtype=np.float64)
    cdef const double[:, ::1] new = np.ascontiguousarray(new_logits, dtype=np.float64)
    cdef Py_ssize_t i, j, n = new.shape[0], c = new.shape[1]
    grad_arr = np.empty((n, c))
    cdef double[:, ::1] grad = grad_arr
    cdef double t = temperature, mo, mn, so, sn, lp, lq, p, loss = 0.0
    with nogil:
        for i in range(n):
            mo = old[i, 0] / t
            mn = new[i, 0] / t
            for j in range(1, c):
                if old[i, j] / t > mo:
                    mo = old[i, j] / t
                if new[i, j] / t > mn:
                    mn = new[i, j] / t
            so = 0.0
            sn = 0.0
            for j in range(c):
                so += exp(old[i, j] / t - mo)
                sn += exp(new[i, j] / t - mn)
            so = log(so)
            sn = log(sn)
            for j in range(c):
                lp = old[i, j] / t - mo - so
                lq = new[i, j] / t - mn - sn
                p = exp(lp)
                loss += p * (lp - lq)
                grad[i, j] = (exp(lq) - p) * (t / n)
    return loss * t * t / n, grad_arr


def attention_forward(q, k, v, int heads):
    cdef const double[:, :, ::1] qm = q
    cdef const double[:, :, ::1] km = k
    cdef const double[:, :, ::1] vm = v
    cdef Py_ssize_t b = qm.shape[0], s = qm.shape[1], d = qm.shape[2]
    cdef Py_ssize_t hd = d // heads
    out_arr = np.zeros((b, s, d))
    w_arr = np.empty((b, heads, s, s))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, :, :, ::1] w = w_arr
    cdef double scale = 1.0 / sqrt(<double> hd)
    cdef Py_ssize_t bi, h, i, j, c, off
    cdef double acc, mx, tot
    with nogil:
        for bi in range(b):
            for h in range(heads):
                off = h * hd
                for i in range(s):
                    mx = -1e308
                    for j in range(s):
                        acc = 0.0
                        for c in range(hd):
                            acc = acc + qm[bi, i, off + c] * km[bi, j, off + c]
                        acc = acc * scale
                        w[bi, h, i, j] = acc
                        if acc > mx:
                            mx = acc
                    tot = 0.0
                    for j in range(s):
                        w[bi, h, i, j] = exp(w[bi, h, i, j] - mx)
                        tot = tot + w[bi, h, i, j]
                    for j in range(s):
                        w[bi, h, i, j] = w[bi, h, i, j] / tot
                        for c in range(hd):
                            out[bi, i, off + c] += w[bi, h, i, j] * vm[bi, j, off + c]
    return out_arr, w_arr


def attention_backward(grad_out, q, k, v, weights, int heads):
    cdef const double[:, :, ::1] go = grad_out
    cdef const double[:, :, ::1] qm = q
    cdef const double[:, :, ::1] km = k
    cdef const double[:, :, ::1] vm = v
    cdef const double[:, :, :, ::1] w = weights
    cdef Py_ssize_t b = qm.shape[0], s = qm.shape[1], d = qm.shape[2]
    cdef Py_ssize_t hd = d // heads
    gq_arr = np.zeros((b, s, d))
    gk_arr = np.zeros((b, s, d))
    gv_arr = np.zeros((b, s, d))
    gs_arr = np.empty(s)
    cdef double[:, :, ::1] gq = gq_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef double[:, :, ::1] gv = gv_arr
    cdef double[::1] gs = gs_arr
    cdef double scale = 1.0 / sqrt(<double> hd)
    cdef Py_ssize_t bi, h, i, j, c, off
    cdef double acc, dot
    with nogil:
        for bi in range(b):
            for h in range(heads):
                off = h * hd
                for i in range(s):
                    dot = 0.0
                    for j in range(s):
                        acc = 0.0
                        for c in range(hd):
                            acc = acc + go[bi, i, off + c] * vm[bi, j, off + c]
                            gv[bi, j, off + c] += w[bi, h, i, j] * go[bi, i, off + c]
                        gs[j] = acc
                        dot = dot + acc * w[bi, h, i, j]
                    for j in range(s):
                        acc = w[bi, h, i, j] * (gs[j] - dot) * scale
                        for c in range(hd):
                            gq[bi, i, off + c] += acc * km[bi, j, off + c]
                            gk[bi, j, off + c] += acc * qm[bi, i, off + c]
    return gq_arr, gk_arr, gv_arr


def elman_forward(x, w_in, w_rec, bias):
    cdef const double[:, ::1] xm = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] win = np.ascontiguousarray(w_in, dtype=np.float64).reshape(-1)
    cdef const double[:, ::1] wr = np.ascontiguousarray(w_rec, dtype=np.float64)
    cdef const double[::1] bm = np.ascontiguousarray(bias, dtype=np.float64)
    cdef int b = xm.shape[0], steps = xm.shape[1], hidden = wr.shape[0]
    hs_arr = np.zeros((steps + 1, b, hidden))
    cdef double[:, :, ::1] hs = hs_arr
    cdef Py_ssize_t t, i, j
    with nogil:
        for t in range(steps):
            _mm(&hs[t, 0, 0], &wr[0, 0], &hs[t + 1, 0, 0], b, hidden, hidden, False, False, 0.0)
            for i in range(b):
                for j in range(hidden):
                    hs[t + 1, i, j] = tanh(hs[t + 1, i, j] + xm[i, t] * win[j] + bm[j])
    return hs_arr


def elman_backward(grad_last, x, w_rec, hs_arr):
    cdef const double[:, ::1] xm = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] wr = np.ascontiguousarray(w_rec, dtype=np.float64)
    cdef const double[:, :, ::1] hs = hs_arr
    cdef int b = xm.shape[0], steps = xm.shape[1], hidden = wr.shape[0]
    dh_arr = np.array(grad_last, dtype=np.float64, order="C", copy=True)
    da_arr = np.empty((b, hidden))
    g_in_arr = np.zeros(hidden)
    g_rec_arr = np.zeros((hidden, hidden))
    g_bias_arr = np.zeros(hidden)
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] da = da_arr
    cdef double[::1] g_in = g_in_arr
    cdef double[:, ::1] g_rec = g_rec_arr
    cdef double[::1] g_bias = g_bias_arr
    cdef Py_ssize_t t, i, j
    cdef double h
    with nogil:
        for t in range(steps, 0, -1):
            for i in range(b):
                for j in range(hidden):
                    h = hs[t, i, j]
                    da[i, j] = dh[i, j] * (1.0 - h * h)
                    g_in[j] += xm[i, t - 1] * da[i, j]
                    g_bias[j] += da[i, j]
            _mm(&hs[t - 1, 0, 0], &da[0, 0], &g_rec[0, 0], hidden, b, hidden, True, False, 1.0)
            _mm(&da[0, 0], &wr[0, 0], &dh[0, 0], b, hidden, hidden, False, True, 0.0)
    return g_in_arr.reshape(1, hidden), g_rec_arr, g_bias_arr


def adam_update(double[::1] param, const double[::1] grad, double[::1] m, double[::1] v,
                long step, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double c1 = 1.0 - pow(beta1, <double> step)
    cdef double c2 = 1.0 - pow(beta2, <double> step)
    cdef double g
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = m[i] * beta1 + (1.0 - beta1) * g
            v[i] = v[i] * beta2 + (1.0 - beta2) * g * g
            param[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)


def byte_histogram(const unsigned char[::1] data):
    counts_arr = np.zeros(256, dtype=np.int64)
    cdef long long[::1] counts = counts_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(data.shape[0]):
            counts[data[i]] += 1
    return counts_arr


def count_redirections(bytes data, Py_ssize_t start):
    cdef const unsigned char* p = data
    cdef Py_ssize_t n = len(data), i = start if start > 0 else 0, count = 0
    while i + 1 < n:
        if p[i] == 47 and p[i + 1] == 47:
            count += 1
            i += 2
        else:
            i += 1
    return count
