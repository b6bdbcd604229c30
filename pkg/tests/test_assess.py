from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from handwash.assess import (
    FEEDBACK, PERFECT, SHORT_DURATION, HandwashEvent, StepTimeline, assess_event, build_report,
    classify_event, detect_steps,
)
from handwash.harness.synthetic import SyntheticSpec, render_session
from handwash.signal import SampleSeries, make_windows

GOLDEN = Path(__file__).parent / "golden" / "feedback.txt"
ALL = set(range(1, 11))


def test_feedback_strings_match_golden_file():
    golden = GOLDEN.read_bytes().decode("utf-8").splitlines()
    ours = [FEEDBACK[k] for k in range(1, 11)] + [SHORT_DURATION, PERFECT]
    assert [s.encode() for s in ours] == [s.encode() for s in golden]


def test_perfect_wash():
    r = build_report(ALL, 25)
    assert r.messages == ("Great job! You washed your hands perfectly.",)
    assert r.missed_steps == () and r.duration_ok


def test_missed_step_four():
    assert build_report(ALL - {4}, 25).messages == (
        "Didn't put palm to palm with fingers interlaced properly",)


def test_short_duration():
    assert build_report(ALL, 19).messages == ("Didn't wash hands for enough duration",)


def test_missed_four_and_short():
    r = build_report(ALL - {4}, 19)
    assert r.messages == ("Didn't put palm to palm with fingers interlaced properly",
                          "Didn't wash hands for enough duration")
    assert r.utterance == ("Didn't put palm to palm with fingers interlaced properly; "
                           "Didn't wash hands for enough duration")


def test_empty_wash_lists_everything_in_order():
    r = build_report(set(), 0)
    assert len(r.messages) == 11
    assert r.messages[:10] == tuple(FEEDBACK[k] for k in range(1, 11))
    assert r.messages[-1] == SHORT_DURATION


def test_duration_boundary():
    assert build_report(ALL, 20.0).duration_ok
    assert not build_report(ALL, 19.999).duration_ok


@given(st.sets(st.integers(1, 10)), st.floats(0, 100))
def test_partition_property(performed, duration):
    r = build_report(performed, duration)
    assert set(r.performed_steps) | set(r.missed_steps) == ALL
    assert not set(r.performed_steps) & set(r.missed_steps)
    assert list(r.missed_steps) == sorted(r.missed_steps)
    assert r.duration_ok == (duration >= 20)


def test_build_report_rejects_bad_input():
    with pytest.raises(ValueError):
        build_report({11}, 30)
    with pytest.raises(ValueError):
        build_report(ALL, -1)


def test_report_text_has_trailer():
    text = build_report(ALL - {2, 7}, 21.5).to_text()
    lines = text.splitlines()
    assert lines[:2] == [FEEDBACK[2], FEEDBACK[7]]
    assert lines[-1] == "# performed=1,3,4,5,6,8,9,10 missed=2,7 duration_s=21.500 verdict=needs_improvement"


def test_detect_steps():
    assert detect_steps(StepTimeline(np.array([]), np.array([]), np.array([]))) == frozenset()
    assert detect_steps([1, 1, 2], min_windows=2) == {1}
    with pytest.raises(ValueError):
        detect_steps([1], min_windows=0)


def test_event_duration_from_markers():
    s = SampleSeries(np.arange(5) * 20_000_000, np.zeros((5, 9)))
    ev = HandwashEvent(s, 1_000_000_000, 23_500_000_000)
    assert ev.duration_s == 22.5
    with pytest.raises(ValueError):
        HandwashEvent(s, 5, 5)


def test_short_event_gives_empty_timeline(trained_desk):
    cfg, params = trained_desk
    s = SampleSeries(np.arange(5) * 20_000_000, np.zeros((5, 9)))
    assert len(classify_event(params, s, cfg.extractor())) == 0


def test_timeline_length_matches_window_count(trained_desk):
    cfg, params = trained_desk
    session = render_session(cfg.synthetic_spec(), 0, 0)
    tl = classify_event(params, session.series, cfg.extractor())
    assert len(tl) == len(make_windows(session.series, cfg.window_seconds, cfg.overlap))
    assert np.all((tl.probs >= 0) & (tl.probs <= 1))


def test_single_step_event_majority(trained_desk):
    cfg, params = trained_desk
    spec = cfg.synthetic_spec()
    session = render_session(spec, 0, 7, steps=[3])
    tl = classify_event(params, session.series, cfg.extractor())
    values, counts = np.unique(tl.steps, return_counts=True)
    assert values[counts.argmax()] == 3


def test_missing_step_is_reported(trained_desk):
    cfg, params = trained_desk
    spec = SyntheticSpec(**{**cfg.synthetic_spec().__dict__, "step_seconds": 2.5})
    steps = [s for s in range(1, 11) if s != 4]
    session = render_session(spec, 1, 9, steps=steps)
    event = HandwashEvent(session.series, session.start_ns, session.start_ns + 25 * 10 ** 9)
    report = assess_event(params, event, cfg.extractor(), cfg.min_windows)
    assert report.performed_steps == ALL - {4}
    assert report.messages == (FEEDBACK[4],)
