"""Forward pass, window-to-window recurrence and backpropagation through it.

One step consumes the current window's features together with the previous
window's activation vector (CNN output followed by LSTM hidden state) and the
LSTM cell state. Both reset to zero at the start of every event.
"""

from dataclasses import dataclass

import numpy as np

from .._validation import check_shape
from . import layers as L


@dataclass(frozen=True)
class StepProbs:
    probs: np.ndarray

    @property
    def label_index(self):
        return int(np.argmax(self.probs))


def _weights(params, dtype=np.float64):
    return {k: np.asarray(v, dtype=dtype) for k, v in params.tensors.items()}


def _finite(x, layer):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"numeric overflow in layer {layer}")
    return x


def _step(w, spec, feats, a_prev, c_prev, keep_cache=False):
    F = spec.feature_dim
    x = np.concatenate([(feats - w["norm.mean"]) / w["norm.std"], a_prev], axis=1)
    caches = {}
    h = x[:, :, None]
    for i in range(len(spec.conv_layers)):
        h, caches[f"conv{i}"] = L.conv_forward(h, w[f"conv{i}.W"], w[f"conv{i}.b"])
        _finite(h, f"conv{i}")
    h, caches["se"] = L.se_forward(h, w["se.W1"], w["se.b1"], w["se.W2"], w["se.b2"])
    pool = _finite(h.mean(axis=1), "se/pool")
    att, caches["attn"] = L.attention_forward(
        x, w["attn.wq"], w["attn.bq"], w["attn.wk"], w["attn.bk"], w["attn.wv"], w["attn.bv"]
    )
    _finite(att, "attention")
    u = np.concatenate([x, att.reshape(x.shape[0], -1)], axis=1)
    hid = spec.lstm_cells
    h_prev = a_prev[:, spec.cnn_out_dim:]
    h_new, c_new, caches["lstm"] = L.lstm_forward(u, h_prev, c_prev, w["lstm.Wx"], w["lstm.Wh"], w["lstm.b"])
    _finite(c_new, "lstm")
    a_new = np.concatenate([pool, h_new], axis=1)
    z = a_new
    for j in range(len(spec.dense_layers)):
        z, caches[f"dense{j}"] = L.dense_forward(z, w[f"dense{j}.W"], w[f"dense{j}.b"])
        _finite(z, f"dense{j}")
    logits, caches["out"] = L.dense_forward(z, w["out.W"], w["out.b"], relu=False)
    probs = L.softmax(_finite(logits, "out"))
    if not keep_cache:
        return probs, a_new, c_new, None
    caches["D"] = x.shape[1]
    caches["F"] = F
    caches["hid"] = hid
    return probs, a_new, c_new, caches


def _backward_step(w, spec, caches, dlogits, da_next, dc_next, grads):
    """Accumulate parameter gradients for one step; return (da_prev, dc_prev)."""
    dz, g = L.dense_backward(dlogits, caches["out"])
    _add(grads, "out", g)
    for j in reversed(range(len(spec.dense_layers))):
        dz, g = L.dense_backward(dz, caches[f"dense{j}"])
        _add(grads, f"dense{j}", g)
    da = dz + da_next
    C = spec.cnn_out_dim
    dpool, dh = da[:, :C], da[:, C:]
    du, dh_prev, dc_prev, g = L.lstm_backward(dh, dc_next, caches["lstm"])
    _add(grads, "lstm", g)
    D = caches["D"]
    B = dlogits.shape[0]
    dx = du[:, :D].copy()
    datt = du[:, D:].reshape(B, D, spec.attn_dim)
    dxa, g = L.attention_backward(datt, caches["attn"])
    _add(grads, "attn", g)
    dx += dxa
    dmap = np.broadcast_to(dpool[:, None, :] / D, (B, D, C))
    dmap, g = L.se_backward(dmap, caches["se"])
    _add(grads, "se", g)
    for i in reversed(range(len(spec.conv_layers))):
        dmap, g = L.conv_backward(dmap, caches[f"conv{i}"])
        _add(grads, f"conv{i}", g)
    dx += dmap[:, :, 0]
    da_prev = dx[:, caches["F"]:].copy()
    da_prev[:, C:] += dh_prev
    return da_prev, dc_prev


def _add(grads, prefix, g):
    for k, v in g.items():
        name = f"{prefix}.{k}"
        if name in grads:
            grads[name] += v
        else:
            grads[name] = v.copy()


def zero_state(spec, batch=1, dtype=np.float64):
    return (np.zeros((batch, spec.activation_dim), dtype=dtype),
            np.zeros((batch, spec.lstm_cells), dtype=dtype))


def forward(params, features, prev=None, cell=None):
    """Classify one window.

    Returns ``(StepProbs, activation_vector, cell_state)``; pass the last two
    back in for the next window of the same event. ``prev``/``cell`` default
    to zero vectors (first window of an event).
    """
    spec = params.spec
    feats = np.asarray(getattr(features, "values", features), dtype=np.float64)
    check_shape(feats, (spec.feature_dim,), "features")
    if prev is None:
        prev = np.zeros(spec.activation_dim)
    if cell is None:
        cell = np.zeros(spec.lstm_cells)
    prev = np.asarray(prev, dtype=np.float64)
    cell = np.asarray(cell, dtype=np.float64)
    check_shape(prev, (spec.activation_dim,), "activation vector")
    check_shape(cell, (spec.lstm_cells,), "lstm cell state")
    probs, a, c, _ = _step(_weights(params), spec, feats[None], prev[None], cell[None])
    return StepProbs(probs[0]), a[0], c[0]


def _pad_batch(X, dtype=np.float64):
    T = max(x.shape[0] for x in X)
    F = X[0].shape[1]
    out = np.zeros((len(X), T, F), dtype=dtype)
    for b, x in enumerate(X):
        out[b, :x.shape[0]] = x
    return out


def predict_proba_sequences(params, X, dtype=np.float64):
    """Per-window class probabilities for a list of events, batched across events."""
    spec = params.spec
    X = [np.asarray(x, dtype=np.float64) for x in X]
    for i, x in enumerate(X):
        check_shape(x, (x.shape[0], spec.feature_dim), f"event {i} features")
    nonempty = [i for i, x in enumerate(X) if x.shape[0] > 0]
    out = [np.zeros((x.shape[0], spec.num_classes)) for x in X]
    if not nonempty:
        return out
    w = _weights(params, dtype)
    Xp = _pad_batch([X[i] for i in nonempty], dtype)
    B, T, _ = Xp.shape
    a, c = zero_state(spec, B, dtype)
    probs = np.empty((B, T, spec.num_classes), dtype=dtype)
    for t in range(T):
        probs[:, t], a, c, _ = _step(w, spec, Xp[:, t], a, c)
    for b, i in enumerate(nonempty):
        out[i] = probs[b, :X[i].shape[0]]
    return out


def loss_and_gradients(params, X, y, dtype=np.float64):
    """Mean cross-entropy over all labelled windows and its gradient.

    ``y`` holds class indices per window; negative entries are unlabelled and
    contribute neither loss nor gradient. Backpropagation runs through the
    whole activation-vector recurrence of each event. ``dtype`` selects the
    arithmetic precision (training uses float32, gradient checks float64).
    """
    spec = params.spec
    w = _weights(params, dtype)
    Xp = _pad_batch(X, dtype)
    B, T, _ = Xp.shape
    Y = np.full((B, T), -1, dtype=np.int64)
    for b, v in enumerate(y):
        Y[b, :len(v)] = v
    n_labelled = int((Y >= 0).sum())
    if n_labelled == 0:
        raise ValueError("batch has no labelled windows")
    a, c = zero_state(spec, B, dtype)
    caches, probs_t = [], []
    loss = 0.0
    rows = np.arange(B)
    for t in range(T):
        probs, a, c, cache = _step(w, spec, Xp[:, t], a, c, keep_cache=True)
        caches.append(cache)
        probs_t.append(probs)
        m = Y[:, t] >= 0
        if m.any():
            p = probs[rows[m], Y[m, t]]
            loss -= np.log(np.maximum(p, np.finfo(p.dtype).tiny)).sum()
    loss /= n_labelled
    grads = {}
    da, dc = zero_state(spec, B, dtype)
    for t in reversed(range(T)):
        dlogits = probs_t[t].copy()
        m = Y[:, t] >= 0
        dlogits[rows[m], Y[m, t]] -= 1.0
        dlogits[~m] = 0.0
        dlogits /= n_labelled
        da, dc = _backward_step(w, spec, caches[t], dlogits, da, dc, grads)
    ordered = {k: grads[k] for k in params.trainable()}
    return float(loss), ordered


def gradients(params, batch):
    """Gradient of the mean cross-entropy over a TrainingBatch-like ``(X, y)`` pair."""
    X, y = batch
    if len(X) == 0:
        raise ValueError("empty batch")
    return loss_and_gradients(params, X, y)[1]


def mean_loss(params, X, y, dtype=np.float64):
    """Mean cross-entropy over the labelled windows of ``X`` (forward only)."""
    probs = predict_proba_sequences(params, X, dtype)
    total, n = 0.0, 0
    for p, v in zip(probs, y):
        v = np.asarray(v)
        m = v >= 0
        total -= np.log(np.maximum(p[m, v[m]], np.finfo(p.dtype).tiny)).sum()
        n += int(m.sum())
    if n == 0:
        raise ValueError("no labelled windows")
    return total / n
