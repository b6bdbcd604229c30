"""Hybrid CNN + attention/LSTM step classifier on a small numpy autodiff core."""

import numpy as np

from .estimator import HybridStepClassifier
from .flops import FlopReport, count_flops
from .io import load_model, save_model
from .layers import (
    attention_forward, conv_forward, lstm_forward, se_forward,
)
from .network import (
    StepProbs, forward, gradients, loss_and_gradients, mean_loss, predict_proba_sequences,
)
from .spec import ModelParams, ModelSpec, init_params
from .train import train


def conv_block(x, W, b):
    """Convolution + ReLU on a single ``(positions, channels)`` feature map."""
    x = x[None] if x.ndim == 2 else x
    out, _ = conv_forward(x, W, b)
    return out[0] if out.shape[0] == 1 else out


def squeeze_excite(x, W1, b1, W2, b2):
    x = x[None] if x.ndim == 2 else x
    out, _ = se_forward(x, W1, b1, W2, b2)
    return out[0] if out.shape[0] == 1 else out


def self_attention(x, wq, bq, wk, bk, wv, bv, return_weights=False):
    """Attention over the scalar positions of ``x`` (shape ``(D,)``)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.size == 0:
        raise ValueError("self_attention needs a non-empty sequence")
    out, cache = attention_forward(x[None], wq, bq, wk, bk, wv, bv)
    if return_weights:
        return out[0], cache[1][0]
    return out[0]


def lstm_step(x, state, Wx, Wh, b):
    """One LSTM update for a single vector; ``state`` is ``(h, c)``."""
    h, c = state
    h_new, c_new, _ = lstm_forward(x[None], h[None], c[None], Wx, Wh, b)
    return h_new[0], c_new[0]


__all__ = [
    "FlopReport", "HybridStepClassifier", "ModelParams", "ModelSpec", "StepProbs",
    "conv_block", "count_flops", "forward", "gradients", "init_params", "load_model",
    "loss_and_gradients", "lstm_step", "mean_loss", "predict_proba_sequences", "save_model",
    "self_attention", "squeeze_excite", "train",
]
