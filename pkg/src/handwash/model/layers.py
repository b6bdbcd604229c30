"""Batched layer kernels with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward(dout, cache)`` returns ``(dinput, grads)``. The leading axis is
always the batch. Feature maps are laid out ``(batch, positions, channels)``.
"""

import numpy as np

from .._validation import check_shape


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _same_pad(k):
    left = (k - 1) // 2
    return left, k - 1 - left


def conv_forward(x, W, b):
    """Same-padded 1-D cross-correlation over positions, bias add, ReLU.

    ``x``: (B, D, C_in); ``W``: (C_out, C_in, k) -> (B, D, C_out). Computed
    as one matmul per filter tap over shifted views of the padded input.
    """
    B, D, c_in = x.shape
    c_out, w_in, k = W.shape
    if w_in != c_in:
        raise ValueError(f"conv: expected {w_in} input channels, got {c_in} (input shape {x.shape})")
    check_shape(b, (c_out,), "conv bias")
    left, right = _same_pad(k)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    taps = np.ascontiguousarray(W.transpose(2, 1, 0))  # (k, C_in, C_out)
    z = xp[:, 0:D] @ taps[0]
    for j in range(1, k):
        z += xp[:, j:j + D] @ taps[j]
    z += b
    return np.maximum(z, 0.0), (xp, taps, z > 0)


def conv_backward(dout, cache):
    xp, taps, active = cache
    k, c_in, c_out = taps.shape
    B, D, _ = dout.shape
    dz = (dout * active).reshape(B * D, c_out)
    dtaps = np.empty_like(taps)
    dxp = np.zeros_like(xp)
    for j in range(k):
        dtaps[j] = xp[:, j:j + D].reshape(B * D, c_in).T @ dz
        dxp[:, j:j + D] += (dz @ taps[j].T).reshape(B, D, c_in)
    left, _ = _same_pad(k)
    return dxp[:, left:left + D], {"W": dtaps.transpose(2, 1, 0), "b": dz.sum(axis=0)}


def se_forward(x, W1, b1, W2, b2):
    """Squeeze (mean over positions), excite (ReLU then sigmoid), rescale channels."""
    if x.shape[2] != W1.shape[1] or W2.shape[0] != x.shape[2]:
        raise ValueError(
            f"squeeze-excite: expected {W1.shape[1]} channels, got {x.shape[2]} (input shape {x.shape})"
        )
    s = x.mean(axis=1)
    z1 = s @ W1.T + b1
    e1 = np.maximum(z1, 0.0)
    g = sigmoid(e1 @ W2.T + b2)
    return x * g[:, None, :], (x, s, z1 > 0, e1, g, W1, W2)


def se_backward(dout, cache):
    x, s, active, e1, g, W1, W2 = cache
    D = x.shape[1]
    dx = dout * g[:, None, :]
    dg = (dout * x).sum(axis=1)
    dz2 = dg * g * (1.0 - g)
    dW2 = dz2.T @ e1
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ W2) * active
    dW1 = dz1.T @ s
    db1 = dz1.sum(axis=0)
    ds = dz1 @ W1
    dx += ds[:, None, :] / D
    return dx, {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def attention_forward(x, wq, bq, wk, bk, wv, bv):
    """Scaled dot-product self-attention over scalar tokens.

    ``x``: (B, D); position i is projected to ``q_i = x_i*wq + bq`` and
    likewise for keys and values. Returns the attended values ``(B, D, d)``.

    With scalar tokens the score ``q_i.k_j / sqrt(d)`` equals
    ``rho_i * x_j`` plus a term constant along j, which softmax ignores, and
    the output is ``m_i * wv + bv`` with ``m_i = sum_j a_ij x_j``. Both are
    evaluated in that closed form.
    """
    d = wq.shape[0]
    for name, w in (("wq", wq), ("bq", bq), ("wk", wk), ("bk", bk), ("wv", wv), ("bv", bv)):
        check_shape(w, (d,), f"attention {name}")
    scale = 1.0 / np.sqrt(d)
    rho = scale * (x * (wq @ wk) + bq @ wk)
    # row max of rho_i * x_j without materialising it twice
    row_max = np.where(rho >= 0, rho * x.max(axis=1, keepdims=True), rho * x.min(axis=1, keepdims=True))
    a = rho[:, :, None] * x[:, None, :]
    a -= row_max[:, :, None]
    np.exp(a, out=a)
    a /= a.sum(axis=-1, keepdims=True)
    m = (a @ x[:, :, None])[:, :, 0]
    out = m[:, :, None] * wv + bv
    return out, (x, a, m, rho, scale, wq, bq, wk, wv)


def attention_weights(cache):
    return cache[1]


def _rmatvec(a, v):
    """``sum_i a[b, i, j] * v[b, i]`` for every (b, j)."""
    return (v[:, None, :] @ a)[:, 0, :]


def attention_backward(dout, cache):
    x, a, m, rho, scale, wq, bq, wk, wv = cache
    dm = dout @ wv
    grads = {
        "wv": np.tensordot(dout, m, axes=([0, 1], [0, 1])),
        "bv": dout.sum(axis=(0, 1)),
    }
    # d score_ij = a_ij * dm_i * (x_j - m_i)
    second = (a @ (x * x)[:, :, None])[:, :, 0]
    drho = dm * (second - m * m)
    w = dm * rho
    dx = _rmatvec(a, dm) + x * _rmatvec(a, w) - _rmatvec(a, w * m)
    dx += drho * scale * (wq @ wk)
    g1 = scale * (drho * x).sum()
    g2 = scale * drho.sum()
    grads["wq"] = g1 * wk
    grads["bq"] = g2 * wk
    grads["wk"] = g1 * wq + g2 * bq
    grads["bk"] = np.zeros_like(wk)
    return dx, grads


def lstm_forward(u, h, c, Wx, Wh, b):
    """One LSTM cell update; gate rows are ordered input, forget, candidate, output."""
    H = Wh.shape[1]
    if Wx.shape[1] != u.shape[1]:
        raise ValueError(f"lstm: expected input width {Wx.shape[1]}, got {u.shape[1]}")
    if h.shape[1] != H or c.shape[1] != H:
        raise ValueError(f"lstm: expected state width {H}, got h {h.shape}, c {c.shape}")
    z = u @ Wx.T + h @ Wh.T + b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (u, h, c, i, f, g, o, tc, Wx, Wh)


def lstm_backward(dh, dc, cache):
    """Returns ``(du, dh_prev, dc_prev, grads)`` given gradients on the new state."""
    u, h, c, i, f, g, o, tc, Wx, Wh = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c
    dg = dc * i
    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=1)
    grads = {"Wx": dz.T @ u, "Wh": dz.T @ h, "b": dz.sum(axis=0)}
    return dz @ Wx, dz @ Wh, dc * f, grads


def dense_forward(x, W, b, relu=True):
    if W.shape[1] != x.shape[1]:
        raise ValueError(f"dense: expected input width {W.shape[1]}, got {x.shape[1]}")
    z = x @ W.T + b
    if relu:
        return np.maximum(z, 0.0), (x, W, z > 0)
    return z, (x, W, None)


def dense_backward(dout, cache):
    x, W, active = cache
    dz = dout if active is None else dout * active
    return dz @ W, {"W": dz.T @ x, "b": dz.sum(axis=0)}
