import logging

import numpy as np

from .network import loss_and_gradients, mean_loss
from .spec import FROZEN, init_params

log = logging.getLogger(__name__)


class Adam:
    """Plain Adam over a dict of float64 arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, weights, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            weights[k] -= corr * self.m[k] / (np.sqrt(self.v[k]) + self.eps)


def fit_normalizer(params, X):
    """Set ``norm.mean``/``norm.std`` from the stacked training windows."""
    stacked = np.concatenate([x for x in X if x.shape[0]], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    params.tensors["norm.mean"] = mean.astype(params.tensors["norm.mean"].dtype)
    params.tensors["norm.std"] = std.astype(params.tensors["norm.std"].dtype)
    return params


def train(spec, X, y, lr=1e-3, epochs=10, seed=0, batch_size=16, init=None, classes=None,
          normalize=True, dtype=np.float32):
    """Fit the network with Adam on mean cross-entropy.

    ``X`` is a list of per-event feature sequences and ``y`` aligned class
    indices (negative = unlabelled). Events are shuffled into minibatches with
    a generator seeded by ``seed``, so equal seeds give bit-identical weights.
    Arithmetic runs in ``dtype`` (float32 by default, for speed). The
    returned parameters are float32; if the final training loss ended up
    above the initial one the initial parameters are returned instead.
    """
    labelled = np.concatenate([np.asarray(v)[np.asarray(v) >= 0] for v in y])
    if np.unique(labelled).size < 2:
        raise ValueError("degenerate dataset")
    params = init if init is not None else init_params(spec, seed, classes)
    params = params.astype(np.float32)
    if init is None and normalize:
        fit_normalizer(params, X)
    if epochs == 0:
        return params
    rng = np.random.default_rng(seed)
    work = params.astype(dtype)
    opt = Adam(lr)
    n = len(X)
    trainable = {k: v for k, v in work.tensors.items() if k not in FROZEN}
    initial = mean_loss(params, X, y, dtype)
    for epoch in range(epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            bx, by = [X[i] for i in idx], [y[i] for i in idx]
            if not any((np.asarray(v) >= 0).any() for v in by):
                continue
            loss, grads = loss_and_gradients(work, bx, by, dtype)
            opt.step(trainable, grads)
            running += loss * len(idx)
        log.debug("epoch %d loss %.4f", epoch, running / n)
    result = work.astype(np.float32)
    final = mean_loss(result, X, y, dtype)
    if final > initial:
        log.warning("training loss rose from %.4f to %.4f; keeping initial weights", initial, final)
        return params
    return result
