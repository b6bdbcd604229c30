"""Run configuration: every tunable default in one flat, serialisable record.

Config files are either a JSON object or ``key = value`` lines (``#`` starts
a comment; values are parsed as JSON when possible, else kept as strings).
"""

import json
from dataclasses import asdict, dataclass, fields, replace

from ..assess import DEFAULT_MIN_WINDOWS
from ..compress import NUDGE, S_MAX, SIGMA0
from ..context import ContextConfig
from ..model.spec import PAPER_CONV_LAYERS, ModelSpec
from ..signal import (DEFAULT_ECDF_POINTS, DEFAULT_FILTER, DEFAULT_OVERLAP, DEFAULT_RATE_HZ,
                      DEFAULT_WINDOW_SECONDS, WindowFeatureExtractor, feature_dim)
from .synthetic import STEPS, SyntheticSpec

_TUPLE_FIELDS = ("conv_layers", "dense_layers", "filter_taps", "step_order", "alphas")


@dataclass(frozen=True)
class RunConfig:
    # signal
    rate_hz: float = DEFAULT_RATE_HZ
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    overlap: float = DEFAULT_OVERLAP
    ecdf_points: int = DEFAULT_ECDF_POINTS
    filter_taps: tuple = DEFAULT_FILTER.taps
    # model
    conv_layers: tuple = PAPER_CONV_LAYERS
    se_reduction: int = 4
    lstm_cells: int = 50
    dense_layers: tuple = (250, 250, 250)
    attn_dim: int = 4
    include_null: bool = False
    # training
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 16
    # compression
    alpha: float = 0.5
    iters: int = 100
    s_max: float = S_MAX
    sigma0: float = SIGMA0
    nudge: float = NUDGE
    fill_budget: bool = True
    agent_lr: float = 1e-3
    fine_tune_epochs: int = 0
    alphas: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    # evaluation
    userdep_epochs: int = None
    min_windows: int = DEFAULT_MIN_WINDOWS
    latency_repeats: int = 30
    # synthetic data
    participants: int = 14
    sessions_per_participant: int = 19
    step_order: tuple = STEPS
    step_seconds: float = 2.5
    noise_sigma: float = 0.3
    jitter: float = 0.0
    # context
    door_beacon_id: str = "door"
    rssi_threshold_db: float = -60.0
    tz_offset_s: int = 0
    # global
    seed: int = 0

    def __post_init__(self):
        for name in _TUPLE_FIELDS:
            value = getattr(self, name)
            if name == "conv_layers":
                value = tuple(tuple(int(v) for v in layer) for layer in value)
            else:
                value = tuple(value)
            object.__setattr__(self, name, value)

    def extractor(self):
        return WindowFeatureExtractor(self.window_seconds, self.overlap, self.ecdf_points,
                                      self.filter_taps).fit()

    def model_spec(self, num_classes=None):
        return ModelSpec(conv_layers=self.conv_layers, se_reduction=self.se_reduction,
                         lstm_cells=self.lstm_cells, dense_layers=self.dense_layers,
                         num_classes=num_classes or (11 if self.include_null else 10),
                         feature_dim=feature_dim(self.ecdf_points), attn_dim=self.attn_dim)

    def classifier_params(self, epochs=None):
        return dict(conv_layers=self.conv_layers, lstm_cells=self.lstm_cells,
                    dense_layers=self.dense_layers, attn_dim=self.attn_dim,
                    se_reduction=self.se_reduction, include_null=self.include_null, lr=self.lr,
                    epochs=self.epochs if epochs is None else epochs,
                    batch_size=self.batch_size, random_state=self.seed)

    def synthetic_spec(self):
        return SyntheticSpec(seed=self.seed, participants=self.participants,
                             sessions_per_participant=self.sessions_per_participant,
                             step_order=self.step_order, step_seconds=self.step_seconds,
                             noise_sigma=self.noise_sigma, jitter=self.jitter, rate_hz=self.rate_hz)

    def context_config(self):
        return ContextConfig(door_beacon_id=self.door_beacon_id,
                             rssi_threshold_db=self.rssi_threshold_db, tz_offset_s=self.tz_offset_s)

    def update(self, **overrides):
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self):
        return asdict(self)


def _parse_value(raw):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config_text(text):
    stripped = text.strip()
    if stripped.startswith("{"):
        return json.loads(stripped)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def load_config(path=None, **overrides):
    cfg = RunConfig()
    if path:
        with open(path) as fh:
            cfg = cfg.update(**parse_config_text(fh.read()))
    return cfg.update(**overrides)
