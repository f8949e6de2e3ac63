"""Numpy building blocks with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` takes ``(cache, upstream)`` and returns the input gradient plus
a dict of parameter gradients.  Arrays are ``(batch, length, features)``.

Parameter gradients are reductions over the rows of the batch.  When
``segments`` (a list of row slices covering the batch in order) is passed,
each reduction is evaluated per slice and the partial sums are added in slice
order; this makes gradients of a concatenated batch bit-identical to the sum
of gradients computed on the slices separately.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -1e9


def _reduce_rows(fn, segments, *arrays):
    """``fn`` applied to each row slice of ``arrays`` and summed in order."""
    if segments is None:
        return fn(*arrays)
    total = None
    for sl in segments:
        part = fn(*(a[sl] for a in arrays))
        total = part if total is None else total + part
    return total


def _bgrad(dy):
    return dy.sum(axis=tuple(range(dy.ndim - 1)))


def linear_forward(x, W, b):
    return x @ W + b, x


def _wgrad(x, dy):
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def linear_backward(cache, dy, W, segments=None):
    x = cache
    dW = _reduce_rows(_wgrad, segments, x, dy)
    db = _reduce_rows(_bgrad, segments, dy)
    return dy @ W.T, dW, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, dy):
    return dy * mask


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def layer_norm_forward(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layer_norm_backward(cache, dy, segments=None):
    xhat, inv, g = cache
    dg = _reduce_rows(lambda a, d: (a * d).reshape(-1, a.shape[-1]).sum(axis=0),
                      segments, xhat, dy)
    db = _reduce_rows(_bgrad, segments, dy)
    dxhat = dy * g
    n = xhat.shape[-1]
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, dg, db


def attention_forward(x, p, prefix, heads, valid=None, layer_norm=False):
    """Multi-head self-attention with output projection and identity skip.

    ``valid`` (B, L) marks rows that may be attended to; ``None`` attends to
    every row including zero padding.
    """
    B, L, H = x.shape
    d = H // heads
    q, cq = linear_forward(x, p[prefix + "Wq"], p[prefix + "bq"])
    k, ck = linear_forward(x, p[prefix + "Wk"], p[prefix + "bk"])
    v, cv = linear_forward(x, p[prefix + "Wv"], p[prefix + "bv"])
    split = lambda t: t.reshape(B, L, heads, d).transpose(0, 2, 1, 3)
    qh, kh, vh = split(q), split(k), split(v)
    scale = 1.0 / np.sqrt(d)
    s = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if valid is not None:
        s = s + np.where(valid, 0.0, NEG_INF).astype(s.dtype)[:, None, None, :]
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    pr = e / e.sum(axis=-1, keepdims=True)
    oh = pr @ vh
    o = oh.transpose(0, 2, 1, 3).reshape(B, L, H)
    out, co = linear_forward(o, p[prefix + "Wo"], p[prefix + "bo"])
    y = x + out
    cln = None
    if layer_norm:
        y, cln = layer_norm_forward(y, p[prefix + "ln_g"], p[prefix + "ln_b"])
    return y, (cq, ck, cv, qh, kh, vh, pr, co, cln, scale, heads)


def attention_backward(cache, dy, p, prefix, segments=None):
    cq, ck, cv, qh, kh, vh, pr, co, cln, scale, heads = cache
    grads = {}
    if cln is not None:
        dy, grads[prefix + "ln_g"], grads[prefix + "ln_b"] = layer_norm_backward(cln, dy, segments)
    B, L, H = dy.shape
    d = H // heads
    dx = dy.copy()
    do, grads[prefix + "Wo"], grads[prefix + "bo"] = linear_backward(co, dy, p[prefix + "Wo"], segments)
    doh = do.reshape(B, L, heads, d).transpose(0, 2, 1, 3)
    dpr = doh @ vh.transpose(0, 1, 3, 2)
    dvh = pr.transpose(0, 1, 3, 2) @ doh
    ds = pr * (dpr - (dpr * pr).sum(axis=-1, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = ds.transpose(0, 1, 3, 2) @ qh
    merge = lambda t: t.transpose(0, 2, 1, 3).reshape(B, L, H)
    for name, cache_, dh in (("q", cq, dqh), ("k", ck, dkh), ("v", cv, dvh)):
        W = p[prefix + "W" + name]
        dxi, grads[prefix + "W" + name], grads[prefix + "b" + name] = linear_backward(
            cache_, merge(dh), W, segments)
        dx += dxi
    return dx, grads


def lstm_forward(x, p, prefix):
    """Unidirectional LSTM over positions; gate order input, forget, cell, output."""
    B, L, _ = x.shape
    Wx, Wh, b = p[prefix + "Wx"], p[prefix + "Wh"], p[prefix + "b"]
    H = Wh.shape[0]
    zx = x @ Wx + b
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    hs = np.empty((B, L, H), dtype=x.dtype)
    steps = []
    for t in range(L):
        z = zx[:, t] + h @ Wh
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        steps.append((i, f, g, o, c_prev, h_prev, tc))
    return hs, (x, steps)


def lstm_backward(cache, dhs, p, prefix, segments=None):
    x, steps = cache
    Wx, Wh = p[prefix + "Wx"], p[prefix + "Wh"]
    B, L, H = dhs.shape
    dz_all = np.empty((B, L, 4 * H), dtype=dhs.dtype)
    hprev_all = np.empty((B, L, H), dtype=dhs.dtype)
    dh_next = np.zeros((B, H), dtype=dhs.dtype)
    dc_next = np.zeros((B, H), dtype=dhs.dtype)
    for t in range(L - 1, -1, -1):
        i, f, g, o, c_prev, h_prev, tc = steps[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dc_next = dc * f
        dh_next = dz @ Wh.T
        dz_all[:, t] = dz
        hprev_all[:, t] = h_prev
    grads = {
        prefix + "Wx": _reduce_rows(_wgrad, segments, x, dz_all),
        prefix + "Wh": _reduce_rows(_wgrad, segments, hprev_all, dz_all),
        prefix + "b": _reduce_rows(_bgrad, segments, dz_all),
    }
    return dz_all @ Wx.T, grads


def residual_forward(x, p, prefix):
    a, c1 = linear_forward(x, p[prefix + "W1"], p[prefix + "b1"])
    r, m = relu_forward(a)
    out, c2 = linear_forward(r, p[prefix + "W2"], p[prefix + "b2"])
    return x + out, (c1, m, c2)


def residual_backward(cache, dy, p, prefix, segments=None):
    c1, m, c2 = cache
    grads = {}
    dr, grads[prefix + "W2"], grads[prefix + "b2"] = linear_backward(c2, dy, p[prefix + "W2"], segments)
    da = relu_backward(m, dr)
    dx, grads[prefix + "W1"], grads[prefix + "b1"] = linear_backward(c1, da, p[prefix + "W1"], segments)
    return dy + dx, grads
