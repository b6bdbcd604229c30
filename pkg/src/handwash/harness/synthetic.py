"""Synthetic labelled handwashing sessions.

Each step is a fixed 9-channel motif: a per-channel offset plus a sinusoid at a
step-specific frequency (steps occupy disjoint frequency bands). The motif
table is built once from a constant seed, so every dataset shares it; the
dataset seed only drives noise and per-participant jitter.
"""

import json
import os
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from ..signal import DEFAULT_RATE_HZ, SampleSeries, read_sensor_csv, write_sensor_csv

STEPS = tuple(range(1, 11))
MOTIF_SEED = 20211
MAX_MOTIF_CORRELATION = 0.4
OFFSET_SCALE = 9.0
BAND_START_HZ = 0.6
BAND_WIDTH_HZ = 0.35
NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    participants: int = 14
    sessions_per_participant: int = 19
    step_order: tuple = STEPS
    step_seconds: float | tuple = 2.5
    noise_sigma: float = 0.3
    jitter: float = 0.0
    rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        object.__setattr__(self, "step_order", tuple(int(s) for s in self.step_order))
        if any(s not in STEPS for s in self.step_order):
            raise ValueError("step_order entries must be in 1..10")
        if any(d <= 0 for d in self.durations()):
            raise ValueError("step durations must be positive")
        if self.participants < 1 or self.sessions_per_participant < 1:
            raise ValueError("need at least one participant and one session")
        if self.noise_sigma < 0 or self.jitter < 0:
            raise ValueError("noise_sigma and jitter must be non-negative")

    def durations(self):
        if isinstance(self.step_seconds, (tuple, list)):
            if len(self.step_seconds) != len(self.step_order):
                raise ValueError("one duration per step in step_order is required")
            return tuple(float(d) for d in self.step_seconds)
        return (float(self.step_seconds),) * len(self.step_order)


@dataclass
class Session:
    participant: int
    session: int
    series: SampleSeries
    start_ns: int
    end_ns: int
    meta: dict = field(default_factory=dict)

    @property
    def duration_s(self):
        return (self.end_ns - self.start_ns) / NS_PER_S


def _render(table, step, t, jitter_offsets=None, jitter_gain=None):
    freq, offsets, amps, phases = table
    k = step - 1
    off = offsets[k] if jitter_offsets is None else offsets[k] + jitter_offsets[k]
    amp = amps[k] if jitter_gain is None else amps[k] * jitter_gain[k]
    return off + amp * np.sin(2 * np.pi * freq[k] * t[:, None] + phases[k])


def motif_correlations(table=None, seconds=4.0, rate_hz=DEFAULT_RATE_HZ):
    """Pairwise Pearson correlation of the flattened zero-noise step motifs."""
    table = table or motif_table()
    t = np.arange(int(seconds * rate_hz)) / rate_hz
    flat = np.stack([_render(table, s, t).ravel() for s in STEPS])
    return np.corrcoef(flat)


def _simplex(n):
    """``n`` unit vectors in ``n - 1`` dimensions with pairwise cosine ``-1/(n-1)``."""
    centred = np.eye(n) - 1.0 / n
    basis = np.linalg.svd(centred)[2][:n - 1]
    v = centred @ basis.T
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@lru_cache(maxsize=1)
def motif_table():
    """(frequencies, offsets, amplitudes, phases) for steps 1-10.

    Offsets are a randomly rotated regular simplex so that no two steps share
    a channel-level signature.
    """
    freq = BAND_START_HZ + BAND_WIDTH_HZ * np.arange(len(STEPS))
    rng = np.random.default_rng(MOTIF_SEED)
    base = _simplex(len(STEPS))
    while True:
        rotation = np.linalg.qr(rng.normal(size=(9, 9)))[0]
        offsets = OFFSET_SCALE * base @ rotation
        amps = rng.uniform(0.5, 1.0, size=(10, 9))
        phases = rng.uniform(0, 2 * np.pi, size=(10, 9))
        table = (freq, offsets, amps, phases)
        corr = motif_correlations(table)
        if np.abs(corr[~np.eye(10, dtype=bool)]).max() < MAX_MOTIF_CORRELATION:
            return table


def _participant_jitter(spec, participant):
    if spec.jitter == 0:
        return None, None
    rng = np.random.default_rng([spec.seed, participant, 1])
    offsets = spec.jitter * rng.normal(size=(10, 9))
    gain = np.clip(1.0 + spec.jitter * rng.normal(size=(10, 9)), 0.1, None)
    return offsets, gain


def render_session(spec, participant, session, steps=None):
    """One labelled session; ``steps`` overrides (a subset of) the step order."""
    table = motif_table()
    order = spec.step_order if steps is None else tuple(steps)
    durations = dict(zip(spec.step_order, spec.durations()))
    j_off, j_gain = _participant_jitter(spec, participant)
    chunks, labels = [], []
    for step in order:
        n = int(round(durations.get(step, spec.durations()[0]) * spec.rate_hz))
        t = np.arange(n) / spec.rate_hz
        chunks.append(_render(table, step, t, j_off, j_gain))
        labels.append(np.full(n, step, dtype=np.int64))
    data = np.concatenate(chunks)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, participant, session, 2])
        data = data + spec.noise_sigma * rng.normal(size=data.shape)
    n = data.shape[0]
    dt = NS_PER_S / spec.rate_hz
    t_ns = np.round(np.arange(n) * dt).astype(np.int64)
    series = SampleSeries(t_ns, data, spec.rate_hz, np.concatenate(labels))
    return Session(participant, session, series, int(t_ns[0]), int(round(n * dt)),
                   {"steps": list(order)})


def generate(spec):
    """All sessions of a synthetic dataset, ordered by (participant, session)."""
    return [
        render_session(spec, p, s)
        for p in range(spec.participants)
        for s in range(spec.sessions_per_participant)
    ]


def session_filename(participant, session):
    return f"p{participant:02d}_s{session:02d}.csv"


def write_dataset(out_dir, sessions, spec=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"spec": _spec_dict(spec) if spec else None, "sessions": []}
    for s in sessions:
        name = session_filename(s.participant, s.session)
        write_sensor_csv(os.path.join(out_dir, name), s.series)
        manifest["sessions"].append({
            "file": name, "participant": s.participant, "session": s.session,
            "start_ns": s.start_ns, "end_ns": s.end_ns, **s.meta,
        })
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_dataset(data_dir, rate_hz=DEFAULT_RATE_HZ):
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    sessions = []
    for entry in manifest["sessions"]:
        series = read_sensor_csv(os.path.join(data_dir, entry["file"]), rate_hz)
        meta = {k: v for k, v in entry.items()
                if k not in ("file", "participant", "session", "start_ns", "end_ns")}
        sessions.append(Session(entry["participant"], entry["session"], series,
                                entry["start_ns"], entry["end_ns"], meta))
    return sessions


def _spec_dict(spec):
    d = asdict(spec)
    d["step_order"] = list(spec.step_order)
    if isinstance(spec.step_seconds, tuple):
        d["step_seconds"] = list(spec.step_seconds)
    return d
