"""Architecture description and weight container for the hybrid step classifier."""

from dataclasses import asdict, dataclass, field

import numpy as np

from .._validation import check_positive_int
from ..signal import feature_dim as _feature_dim

PAPER_CONV_LAYERS = ((3, 128), (5, 256), (7, 512))
LAYER_KIND = {"conv": 0.0, "lstm": 0.5, "dense": 1.0}


@dataclass(frozen=True)
class ModelSpec:
    """Layer sizes of the CNN + attention/LSTM network with its dense head.

    ``se_hidden`` overrides the squeeze-excite bottleneck width; it is set
    explicitly on pruned specs so the bottleneck keeps its trained size.
    """

    conv_layers: tuple = PAPER_CONV_LAYERS
    se_reduction: int = 4
    lstm_cells: int = 50
    dense_layers: tuple = (250, 250, 250)
    num_classes: int = 10
    feature_dim: int = _feature_dim()
    attn_dim: int = 4
    se_hidden: int | None = None

    def __post_init__(self):
        conv = tuple((int(k), int(n)) for k, n in self.conv_layers)
        if not conv:
            raise ValueError("at least one convolutional layer is required")
        for k, n in conv:
            check_positive_int(k, "filter_size")
            check_positive_int(n, "num_filters")
        object.__setattr__(self, "conv_layers", conv)
        dense = tuple(int(w) for w in self.dense_layers)
        for w in dense:
            check_positive_int(w, "dense width")
        object.__setattr__(self, "dense_layers", dense)
        for name in ("se_reduction", "lstm_cells", "num_classes", "feature_dim", "attn_dim"):
            check_positive_int(getattr(self, name), name)
        if self.se_hidden is not None:
            check_positive_int(self.se_hidden, "se_hidden")

    @property
    def cnn_out_dim(self):
        return self.conv_layers[-1][1]

    @property
    def activation_dim(self):
        return self.cnn_out_dim + self.lstm_cells

    @property
    def input_dim(self):
        return self.feature_dim + self.activation_dim

    @property
    def lstm_input_dim(self):
        return self.input_dim * (1 + self.attn_dim)

    @property
    def se_units(self):
        if self.se_hidden is not None:
            return self.se_hidden
        return max(1, self.cnn_out_dim // self.se_reduction)

    @property
    def prunable_layers(self):
        names = [f"conv{i}" for i in range(len(self.conv_layers))]
        names.append("lstm")
        names.extend(f"dense{j}" for j in range(len(self.dense_layers)))
        return tuple(names)

    def units(self, layer):
        kind, idx = split_layer(layer)
        if kind == "conv":
            return self.conv_layers[idx][1]
        if kind == "lstm":
            return self.lstm_cells
        return self.dense_layers[idx]

    def with_units(self, layer, n):
        """Copy of this spec with ``layer`` resized to ``n`` output units."""
        kind, idx = split_layer(layer)
        fields = self.to_dict()
        fields["se_hidden"] = self.se_units
        if kind == "conv":
            conv = list(self.conv_layers)
            conv[idx] = (conv[idx][0], n)
            fields["conv_layers"] = conv
        elif kind == "lstm":
            fields["lstm_cells"] = n
        else:
            dense = list(self.dense_layers)
            dense[idx] = n
            fields["dense_layers"] = dense
        return ModelSpec.from_dict(fields)

    def param_shapes(self):
        """Ordered mapping of tensor name to shape."""
        shapes = {"norm.mean": (self.feature_dim,), "norm.std": (self.feature_dim,)}
        c_in = 1
        for i, (k, n) in enumerate(self.conv_layers):
            shapes[f"conv{i}.W"] = (n, c_in, k)
            shapes[f"conv{i}.b"] = (n,)
            c_in = n
        c, h = self.cnn_out_dim, self.se_units
        shapes.update({"se.W1": (h, c), "se.b1": (h,), "se.W2": (c, h), "se.b2": (c,)})
        d = self.attn_dim
        for p in ("q", "k", "v"):
            shapes[f"attn.w{p}"] = (d,)
            shapes[f"attn.b{p}"] = (d,)
        hidden = self.lstm_cells
        shapes["lstm.Wx"] = (4 * hidden, self.lstm_input_dim)
        shapes["lstm.Wh"] = (4 * hidden, hidden)
        shapes["lstm.b"] = (4 * hidden,)
        n_in = self.activation_dim
        for j, w in enumerate(self.dense_layers):
            shapes[f"dense{j}.W"] = (w, n_in)
            shapes[f"dense{j}.b"] = (w,)
            n_in = w
        shapes["out.W"] = (self.num_classes, n_in)
        shapes["out.b"] = (self.num_classes,)
        return shapes

    def to_dict(self):
        d = asdict(self)
        d["conv_layers"] = [list(c) for c in self.conv_layers]
        d["dense_layers"] = list(self.dense_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conv_layers"] = tuple(tuple(c) for c in d["conv_layers"])
        d["dense_layers"] = tuple(d["dense_layers"])
        return cls(**d)


def split_layer(layer):
    if layer == "lstm":
        return "lstm", 0
    for kind in ("conv", "dense"):
        if layer.startswith(kind) and layer[len(kind):].isdigit():
            return kind, int(layer[len(kind):])
    raise ValueError(f"unknown prunable layer {layer!r}")


FROZEN = ("norm.mean", "norm.std")


@dataclass
class ModelParams:
    """Weights for a :class:`ModelSpec`, one named tensor per layer parameter.

    ``norm.*`` hold the input standardisation fitted on the training features
    and are not trained by gradient descent.
    """

    spec: ModelSpec
    tensors: dict
    version: str = "1"
    classes: tuple = field(default_factory=lambda: tuple(range(1, 11)))

    def __post_init__(self):
        shapes = self.spec.param_shapes()
        if list(self.tensors) != list(shapes):
            missing = set(shapes) ^ set(self.tensors)
            if missing:
                raise ValueError(f"parameter names do not match spec: {sorted(missing)}")
            self.tensors = {k: self.tensors[k] for k in shapes}
        for name, shape in shapes.items():
            t = np.asarray(self.tensors[name])
            if t.shape != tuple(shape):
                raise ValueError(f"{name}: expected shape {tuple(shape)}, got {t.shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"{name}: non-finite weights")
            self.tensors[name] = t
        self.classes = tuple(int(c) for c in self.classes)
        if len(self.classes) != self.spec.num_classes:
            raise ValueError("class list length must equal num_classes")

    def __getitem__(self, name):
        return self.tensors[name]

    def trainable(self):
        return [k for k in self.tensors if k not in FROZEN]

    def copy(self):
        return ModelParams(self.spec, {k: v.copy() for k, v in self.tensors.items()},
                           self.version, self.classes)

    def astype(self, dtype):
        return ModelParams(self.spec, {k: v.astype(dtype) for k, v in self.tensors.items()},
                           self.version, self.classes)


def init_params(spec, seed=0, classes=None, dtype=np.float32):
    """Seeded uniform fan-in initialisation.

    Every weight is drawn from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; biases
    start at zero except the LSTM forget gate, which starts at 1.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in spec.param_shapes().items():
        if name == "norm.mean":
            t = np.zeros(shape)
        elif name == "norm.std":
            t = np.ones(shape)
        elif name.endswith(".b") or name.startswith("se.b") or name.startswith("attn.b"):
            t = np.zeros(shape)
        elif name.startswith("attn.w"):
            t = rng.uniform(-1.0, 1.0, size=shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            t = rng.uniform(-bound, bound, size=shape)
        tensors[name] = t
    hidden = spec.lstm_cells
    tensors["lstm.b"][hidden:2 * hidden] = 1.0
    if classes is None:
        classes = tuple(range(1, spec.num_classes + 1))
    params = ModelParams(spec, tensors, classes=classes)
    return params.astype(dtype)
