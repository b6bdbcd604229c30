"""Handwashing quality verdict: which steps were performed, whether the wash
lasted long enough, and the feedback messages spoken back to the user."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int
from .model.network import predict_proba_sequences
from .signal import SampleSeries, WindowFeatureExtractor

STEPS = tuple(range(1, 11))
MIN_DURATION_S = 20.0
DEFAULT_MIN_WINDOWS = 3
SEPARATOR = "; "
NS_PER_S = 1_000_000_000

FEEDBACK = {
    1: "Didn't rub both hands palm to palm",
    2: "Didn't rub right palm over left dorsum properly",
    3: "Didn't rub left palm over right dorsum properly",
    4: "Didn't put palm to palm with fingers interlaced properly",
    5: "Didn't clean right fingertips interlocked in left palm properly",
    6: "Didn't clean left fingertips interlocked in right palm properly",
    7: "Didn't rub left thumb clasped in right palm properly",
    8: "Didn't rub right thumb clasped in left palm properly",
    9: "Didn't rotationally rub right fingers on left palm properly",
    10: "Didn't rotationally rub left fingers on right palm properly",
}
SHORT_DURATION = "Didn't wash hands for enough duration"
PERFECT = "Great job! You washed your hands perfectly."


@dataclass(frozen=True)
class HandwashEvent:
    series: SampleSeries
    start_time: int
    end_time: int

    def __post_init__(self):
        if self.end_time <= self.start_time:
            raise ValueError("end_time must be after start_time")

    @property
    def duration_s(self):
        return (self.end_time - self.start_time) / NS_PER_S


@dataclass(frozen=True)
class StepTimeline:
    window_index: np.ndarray
    steps: np.ndarray
    probs: np.ndarray

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class QualityReport:
    performed_steps: frozenset
    missed_steps: tuple
    duration_s: float
    duration_ok: bool
    messages: tuple

    @property
    def utterance(self):
        return SEPARATOR.join(self.messages)

    @property
    def verdict(self):
        return "good" if not self.missed_steps and self.duration_ok else "needs_improvement"

    def to_text(self):
        """One line per message, then a ``#``-prefixed key=value trailer."""
        lines = list(self.messages)
        performed = ",".join(str(s) for s in sorted(self.performed_steps))
        missed = ",".join(str(s) for s in self.missed_steps)
        lines.append(f"# performed={performed} missed={missed} "
                     f"duration_s={self.duration_s:.3f} verdict={self.verdict}")
        return "\n".join(lines) + "\n"


def classify_event(params, event, extractor=None):
    """Per-window step predictions for one event, carrying state across windows."""
    series = event.series if isinstance(event, HandwashEvent) else event
    if len(series) == 0:
        raise ValueError("empty input")
    extractor = extractor or WindowFeatureExtractor()
    feats = extractor.transform([series])[0]
    if feats.shape[0] == 0:
        empty = np.empty(0, dtype=np.int64)
        return StepTimeline(empty, empty, np.empty(0))
    probs = predict_proba_sequences(params, [feats])[0]
    classes = np.asarray(params.classes)
    idx = probs.argmax(axis=1)
    return StepTimeline(np.arange(len(idx)), classes[idx], probs[np.arange(len(idx)), idx])


def detect_steps(timeline, min_windows=DEFAULT_MIN_WINDOWS):
    """Steps predicted for at least ``min_windows`` windows."""
    check_positive_int(min_windows, "min_windows")
    steps = np.asarray(timeline.steps if isinstance(timeline, StepTimeline) else timeline)
    labels, counts = np.unique(steps, return_counts=True)
    return frozenset(int(s) for s, c in zip(labels, counts) if c >= min_windows and int(s) in STEPS)


def build_report(performed, duration_s):
    performed = frozenset(int(s) for s in performed)
    if not performed <= set(STEPS):
        raise ValueError("performed steps must be within 1..10")
    if duration_s < 0:
        raise ValueError("duration_s must be non-negative")
    missed = tuple(s for s in STEPS if s not in performed)
    ok = duration_s >= MIN_DURATION_S
    messages = [FEEDBACK[s] for s in missed]
    if not ok:
        messages.append(SHORT_DURATION)
    if not messages:
        messages = [PERFECT]
    return QualityReport(performed, missed, float(duration_s), ok, tuple(messages))


def assess_event(params, event, extractor=None, min_windows=DEFAULT_MIN_WINDOWS):
    timeline = classify_event(params, event, extractor)
    return build_report(detect_steps(timeline, min_windows), event.duration_s)
