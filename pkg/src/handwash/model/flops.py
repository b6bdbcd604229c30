"""Analytic FLOP counts for one forward step of the network.

Counting rules: every scalar multiply, add, subtract and divide is one FLOP.
A dot product of length n starts from a zero accumulator (n multiplies plus n
adds) and a bias add is one more, so a dense n -> m layer costs m * (2n + 1).
ReLU, sigmoid, tanh, exp and max are free. Same-padded convolutions count the
padded taps.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class FlopReport:
    per_layer: dict
    total: int

    def __getitem__(self, layer):
        return self.per_layer[layer]


def dense_flops(n_in, n_out):
    return n_out * (2 * n_in + 1)


def count_flops(spec):
    F, D, d = spec.feature_dim, spec.input_dim, spec.attn_dim
    per = {"norm": 2 * F}
    c_in = 1
    for i, (k, c_out) in enumerate(spec.conv_layers):
        per[f"conv{i}"] = D * c_out * (2 * c_in * k + 1)
        c_in = c_out
    C, h = spec.cnn_out_dim, spec.se_units
    per["se"] = C * (D + 1) + dense_flops(C, h) + dense_flops(h, C) + C * D
    per["pool"] = C * (D + 1)
    per["attention"] = 3 * D * dense_flops(1, d) + D * D * (2 * d + 1) + 3 * D * D + 2 * D * D * d
    H = spec.lstm_cells
    per["lstm"] = 4 * H * (2 * spec.lstm_input_dim + 2 * H + 1) + 4 * H
    n = spec.activation_dim
    for j, m in enumerate(spec.dense_layers):
        per[f"dense{j}"] = dense_flops(n, m)
        n = m
    per["out"] = dense_flops(n, spec.num_classes)
    per["softmax"] = 3 * spec.num_classes
    return FlopReport(per, sum(per.values()))
