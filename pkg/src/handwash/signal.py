"""Sensor preprocessing: FIR smoothing, sliding windows and per-window features.

The nine channels are always ordered ``ax, ay, az, gx, gy, gz, mx, my, mz``.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_fraction, check_positive_int

CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz")
N_CHANNELS = len(CHANNELS)
STAT_NAMES = ("mean", "std", "kurtosis", "skew")
CSV_HEADER = ("t_ns",) + CHANNELS

DEFAULT_RATE_HZ = 50.0
DEFAULT_WINDOW_SECONDS = 0.06
DEFAULT_OVERLAP = 0.7
DEFAULT_ECDF_POINTS = 5
RATE_TOLERANCE = 0.05


@dataclass(frozen=True)
class SampleSeries:
    """A timestamped 9-axis IMU stream.

    ``data`` has shape ``(n_samples, 9)``; ``labels`` (optional) holds the
    per-sample step label, 0 meaning "no step".
    """

    t_ns: np.ndarray
    data: np.ndarray
    rate_hz: float = DEFAULT_RATE_HZ
    labels: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t_ns, dtype=np.int64)
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != N_CHANNELS:
            raise ValueError(f"expected (n, {N_CHANNELS}) sample matrix, got {data.shape}")
        if t.shape != (data.shape[0],):
            raise ValueError(f"timestamps {t.shape} do not match {data.shape[0]} samples")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(data)):
            raise ValueError("sample matrix contains NaN or Inf (partial rows are not allowed)")
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        object.__setattr__(self, "t_ns", t)
        object.__setattr__(self, "data", data)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != t.shape:
                raise ValueError("labels must align with samples")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class FilterSpec:
    taps: tuple
    kind: str = "low-pass"

    def __post_init__(self):
        taps = tuple(float(t) for t in self.taps)
        if len(taps) < 1:
            raise ValueError("filter needs at least one tap")
        if len(taps) % 2 == 0:
            raise ValueError("filter length must be odd")
        if abs(math.fsum(taps) - 1.0) > 1e-9:
            raise ValueError("filter taps must sum to 1 (unit DC gain)")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def moving_average(cls, n=5):
        return cls(taps=(1.0 / n,) * n)


DEFAULT_FILTER = FilterSpec.moving_average(5)


@dataclass(frozen=True)
class Window:
    start_index: int
    channels: np.ndarray  # (9, length_samples)

    @property
    def length_samples(self):
        return self.channels.shape[1]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple = field(default=(), compare=False)

    def __len__(self):
        return self.values.shape[0]


def feature_layout(k):
    """Names for each slot of a feature vector with ``k`` ECDF points."""
    names = []
    for ch in CHANNELS:
        names.extend(f"{ch}.{s}" for s in STAT_NAMES)
        names.extend(f"{ch}.ecdf{i}" for i in range(1, k + 1))
    return tuple(names)


def feature_dim(k=DEFAULT_ECDF_POINTS):
    return N_CHANNELS * (4 + k)


def window_length(window_seconds, rate_hz):
    n = int(math.floor(window_seconds * rate_hz + 0.5))
    if n < 1:
        raise ValueError(f"window of {window_seconds}s at {rate_hz} Hz holds no samples")
    return n


def hop_length(length_samples, overlap_fraction):
    return max(1, int(math.floor(length_samples * (1.0 - overlap_fraction) + 0.5)))


def fir_filter(series, spec=DEFAULT_FILTER):
    """Convolve every channel with ``spec.taps`` using reflect padding.

    Output length equals input length; timestamps and labels are kept.
    """
    if len(series) == 0:
        raise ValueError("empty input")
    taps = np.asarray(spec.taps)
    half = (taps.size - 1) // 2
    if half == 0:
        return replace(series, data=series.data * taps[0])
    padded = np.pad(series.data, ((half, half), (0, 0)), mode="reflect")
    out = np.empty_like(series.data)
    for c in range(N_CHANNELS):
        out[:, c] = np.convolve(padded[:, c], taps, mode="valid")
    return replace(series, data=out)


def _window_starts(n_samples, length, hop):
    if length > n_samples:
        return np.empty(0, dtype=np.int64)
    return np.arange(0, n_samples - length + 1, hop, dtype=np.int64)


def make_windows(series, window_seconds=DEFAULT_WINDOW_SECONDS, overlap_fraction=DEFAULT_OVERLAP):
    check_fraction(overlap_fraction, "overlap_fraction")
    length = window_length(window_seconds, series.rate_hz)
    hop = hop_length(length, overlap_fraction)
    starts = _window_starts(len(series), length, hop)
    return [Window(int(s), series.data[s:s + length].T.copy()) for s in starts]


def _moments(x):
    """Population mean/std, excess kurtosis and skew along the last axis.

    Constant rows get kurtosis = skew = 0 instead of NaN.
    """
    n = x.shape[-1]
    mean = x.mean(axis=-1)
    d = x - mean[..., None]
    m2 = (d * d).sum(axis=-1) / n
    m3 = (d ** 3).sum(axis=-1) / n
    m4 = (d ** 4).sum(axis=-1) / n
    scale = np.maximum(1.0, np.abs(mean))
    degenerate = m2 <= (1e-12 * scale) ** 2
    safe = np.where(degenerate, 1.0, m2)
    skew = np.where(degenerate, 0.0, m3 / safe ** 1.5)
    kurt = np.where(degenerate, 0.0, m4 / safe ** 2 - 3.0)
    std = np.where(degenerate, 0.0, np.sqrt(m2))
    return np.stack([mean, std, kurt, skew], axis=-1)


def _ecdf_indices(n, k):
    # 0-based order-statistic index of ceil(p * n) for p = (2i - 1) / 2k
    i = np.arange(1, k + 1)
    return -((-(2 * i - 1) * n) // (2 * k)) - 1


def _ecdf(x, k):
    idx = _ecdf_indices(x.shape[-1], k)
    return np.sort(x, axis=-1)[..., idx]


def stat_features(window):
    return _moments(np.asarray(window.channels, dtype=np.float64))


def ecdf_features(window, k=DEFAULT_ECDF_POINTS):
    check_positive_int(k, "k")
    return _ecdf(np.asarray(window.channels, dtype=np.float64), k)


def feature_vector(window, k=DEFAULT_ECDF_POINTS):
    values = np.concatenate([stat_features(window), ecdf_features(window, k)], axis=1).ravel()
    return FeatureVector(values, feature_layout(k))


def extract_features(series, window_seconds=DEFAULT_WINDOW_SECONDS,
                     overlap_fraction=DEFAULT_OVERLAP, k=DEFAULT_ECDF_POINTS):
    """Feature matrix ``(n_windows, 9 * (4 + k))`` for an already-filtered series.

    Vectorised equivalent of calling :func:`feature_vector` on every window.
    """
    check_fraction(overlap_fraction, "overlap_fraction")
    check_positive_int(k, "k")
    length = window_length(window_seconds, series.rate_hz)
    hop = hop_length(length, overlap_fraction)
    starts = _window_starts(len(series), length, hop)
    if starts.size == 0:
        return np.empty((0, feature_dim(k)))
    views = sliding_window_view(series.data, length, axis=0)[starts]  # (w, 9, length)
    feats = np.concatenate([_moments(views), _ecdf(views, k)], axis=2)
    return feats.reshape(starts.size, -1)


def window_labels(labels, length, hop):
    """Majority per-sample label of each window (ties go to the smaller label)."""
    labels = np.asarray(labels, dtype=np.int64)
    starts = _window_starts(labels.size, length, hop)
    if starts.size == 0:
        return np.empty(0, dtype=np.int64)
    views = sliding_window_view(labels, length)[starts]
    n_labels = int(labels.max()) + 1
    counts = np.zeros((starts.size, n_labels), dtype=np.int64)
    for j in range(length):
        np.add.at(counts, (np.arange(starts.size), views[:, j]), 1)
    return counts.argmax(axis=1)


def read_sensor_csv(path, rate_hz=DEFAULT_RATE_HZ):
    """Load a sensor CSV (``t_ns,ax,...,mz[,label]``) into a SampleSeries.

    Streams whose median sampling interval is more than 5% off ``rate_hz``
    are rejected rather than resampled.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(h.strip() for h in next(reader))
        if header[:10] != CSV_HEADER or len(header) not in (10, 11):
            raise ValueError(f"{path}: unexpected header {header}")
        has_label = len(header) == 11
        if has_label and header[10] != "label":
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: empty input")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
    t = np.array([int(r[0]) for r in rows], dtype=np.int64)
    data = np.array([[float(v) for v in r[1:10]] for r in rows])
    labels = np.array([int(r[10]) for r in rows], dtype=np.int64) if has_label else None
    if labels is not None and (labels.min() < 0 or labels.max() > 10):
        raise ValueError(f"{path}: labels must be in 0..10")
    if t.size > 1:
        dt = float(np.median(np.diff(t)))
        measured = 1e9 / dt if dt > 0 else float("inf")
        if abs(measured - rate_hz) > RATE_TOLERANCE * rate_hz:
            raise ValueError(f"{path}: stream runs at {measured:.2f} Hz, expected {rate_hz} Hz")
    return SampleSeries(t, data, rate_hz, labels)


def write_sensor_csv(path, series):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        has_label = series.labels is not None
        writer.writerow(CSV_HEADER + (("label",) if has_label else ()))
        for i in range(len(series)):
            row = [str(int(series.t_ns[i]))] + [repr(float(v)) for v in series.data[i]]
            if has_label:
                row.append(str(int(series.labels[i])))
            writer.writerow(row)


class WindowFeatureExtractor(TransformerMixin, BaseEstimator):
    """Filter, window and featurise a list of sample series.

    ``transform`` maps each :class:`SampleSeries` to a ``(n_windows, n_features)``
    matrix, so a list of events becomes a ragged list of matrices.
    """

    def __init__(self, window_seconds=DEFAULT_WINDOW_SECONDS, overlap=DEFAULT_OVERLAP,
                 ecdf_points=DEFAULT_ECDF_POINTS, filter_taps=DEFAULT_FILTER.taps):
        self.window_seconds = window_seconds
        self.overlap = overlap
        self.ecdf_points = ecdf_points
        self.filter_taps = filter_taps

    def fit(self, X=None, y=None):
        check_fraction(self.overlap, "overlap")
        check_positive_int(self.ecdf_points, "ecdf_points")
        self.filter_ = FilterSpec(tuple(self.filter_taps))
        self.n_features_out_ = feature_dim(self.ecdf_points)
        return self

    def _filter(self):
        return getattr(self, "filter_", None) or FilterSpec(tuple(self.filter_taps))

    def transform(self, X):
        if isinstance(X, SampleSeries):
            X = [X]
        spec = self._filter()
        return [
            extract_features(fir_filter(s, spec), self.window_seconds, self.overlap, self.ecdf_points)
            for s in X
        ]

    def transform_labels(self, X):
        """Window-majority step labels for each labelled series in ``X``."""
        if isinstance(X, SampleSeries):
            X = [X]
        out = []
        for s in X:
            if s.labels is None:
                raise ValueError("series carries no labels")
            length = window_length(self.window_seconds, s.rate_hz)
            out.append(window_labels(s.labels, length, hop_length(length, self.overlap)))
        return out

    def get_feature_names_out(self, input_features=None):
        return np.asarray(feature_layout(self.ecdf_points), dtype=object)
