"""Reminder and interaction engine.

A pure state machine: every transition is ``step(state, event) -> (state,
actions)`` and all time arrives on the events, so replaying a script always
gives the same action trace. Beacon readings feed a trailing RSSI window used
to detect entering the home; a clock tick checks the hourly routine reminder.
"""

import json
import re
from dataclasses import dataclass, field, replace

NS_PER_S = 1_000_000_000
NS_PER_MIN = 60 * NS_PER_S
NS_PER_HOUR = 60 * NS_PER_MIN

RSSI_WINDOW_NS = 15 * NS_PER_S
RSSI_THRESHOLD_DB = -60.0
DAY_START_HOUR = 9
DAY_END_HOUR = 21
ROUTINE_INTERVAL_NS = NS_PER_HOUR
MAX_REPROMPTS = 2

IDLE, PROMPTED, AWAITING_START, COLLECTING, REPORTING = (
    "Idle", "Prompted", "AwaitingStart", "Collecting", "Reporting")
PHASES = (IDLE, PROMPTED, AWAITING_START, COLLECTING, REPORTING)

CONFIRM_START, DONE, SNOOZE, DECLINE, UNKNOWN = "ConfirmStart", "Done", "Snooze", "Decline", "Unknown"

START_WORDS = ("yes", "yeah", "yep", "sure", "ok", "okay", "start", "starting", "washing", "now")
DONE_WORDS = ("done", "finished", "finish", "complete", "completed", "stop")
DECLINE_WORDS = ("no", "nope", "not", "don't", "dont", "skip", "cancel")
_SNOOZE = re.compile(r"\b(?:remind|later)\b.*?\b(\d+)\s*(?:min|minute|minutes|mins)\b")


@dataclass(frozen=True)
class BeaconReading:
    t_ns: int
    beacon_id: str
    rssi: float

    def __post_init__(self):
        if not -120.0 <= self.rssi <= 0.0:
            raise ValueError(f"rssi {self.rssi} outside [-120, 0] dB")


@dataclass(frozen=True)
class Intent:
    kind: str
    minutes: int = None

    def __post_init__(self):
        if self.kind not in (CONFIRM_START, DONE, SNOOZE, DECLINE, UNKNOWN):
            raise ValueError(f"unknown intent kind {self.kind!r}")
        if self.kind == SNOOZE and (self.minutes is None or self.minutes < 1):
            raise ValueError("snooze needs a positive number of minutes")


@dataclass(frozen=True)
class ContextConfig:
    door_beacon_id: str = "door"
    rssi_threshold_db: float = RSSI_THRESHOLD_DB
    rssi_window_ns: int = RSSI_WINDOW_NS
    day_start_hour: int = DAY_START_HOUR
    day_end_hour: int = DAY_END_HOUR
    routine_interval_ns: int = ROUTINE_INTERVAL_NS
    max_reprompts: int = MAX_REPROMPTS
    tz_offset_s: int = 0


@dataclass(frozen=True)
class ReminderState:
    config: ContextConfig = field(default_factory=ContextConfig)
    phase: str = IDLE
    last_handwash_time: int = None
    snooze_until: int = None
    rssi_window: tuple = ()
    reprompts: int = 0
    clock_ns: int = None

    @property
    def door_beacon_id(self):
        return self.config.door_beacon_id


# events
@dataclass(frozen=True)
class EntryDetected:
    t_ns: int


@dataclass(frozen=True)
class RoutineDue:
    t_ns: int


@dataclass(frozen=True)
class Utterance:
    t_ns: int
    text: str


@dataclass(frozen=True)
class Tick:
    t_ns: int


@dataclass(frozen=True)
class ReportDelivered:
    t_ns: int


EVENT_TYPES = (EntryDetected, RoutineDue, Utterance, Tick, ReportDelivered)


@dataclass(frozen=True)
class Action:
    t_ns: int
    kind: str
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"t_ns": self.t_ns, "action": self.kind, **self.detail}


REMIND, REPROMPT, START_SENSING, STOP_SENSING, ASSESS = (
    "RemindAction", "RepromptAction", "StartSensing", "StopSensing", "AssessAction")


def _check_clock(state, t_ns):
    if state.clock_ns is not None and t_ns < state.clock_ns:
        raise ValueError("non-monotonic clock")


def _evict(window, now, span):
    return tuple(r for r in window if now - r.t_ns < span)


def ingest_rssi(state, reading):
    """Append ``reading`` and drop readings 15 s or more older than it."""
    _check_clock(state, reading.t_ns)
    window = _evict(state.rssi_window + (reading,), reading.t_ns, state.config.rssi_window_ns)
    return replace(state, rssi_window=window, clock_ns=reading.t_ns)


def entry_detected(state, now):
    window = _evict(state.rssi_window, now, state.config.rssi_window_ns)
    if not window:
        return False
    if any(r.beacon_id != state.config.door_beacon_id for r in window):
        return False
    return sum(r.rssi for r in window) / len(window) > state.config.rssi_threshold_db


def local_hour(now, tz_offset_s=0):
    return int(((now // NS_PER_S + tz_offset_s) // 3600) % 24)


def snoozed(state, now):
    return state.snooze_until is not None and now < state.snooze_until


def routine_due(state, now):
    cfg = state.config
    if not cfg.day_start_hour <= local_hour(now, cfg.tz_offset_s) < cfg.day_end_hour:
        return False
    if state.last_handwash_time is not None and now - state.last_handwash_time < cfg.routine_interval_ns:
        return False
    return not snoozed(state, now)


def _has(words, tokens):
    return any(w in tokens for w in words)


def parse_intent(utterance):
    """Keyword intent; precedence Snooze > Done > ConfirmStart > Decline."""
    text = (utterance or "").lower()
    m = _SNOOZE.search(text)
    if m and int(m.group(1)) >= 1:
        return Intent(SNOOZE, int(m.group(1)))
    tokens = set(re.findall(r"[a-z']+", text))
    if _has(DONE_WORDS, tokens):
        return Intent(DONE)
    negated = _has(DECLINE_WORDS, tokens)
    if _has(START_WORDS, tokens) and not negated:
        return Intent(CONFIRM_START)
    if negated:
        return Intent(DECLINE)
    return Intent(UNKNOWN)


def step(state, event):
    """Apply one event; returns ``(new_state, actions)``. ``state`` is never mutated."""
    if not isinstance(event, EVENT_TYPES):
        raise TypeError(f"malformed event {event!r}")
    if not isinstance(event.t_ns, int) or isinstance(event.t_ns, bool):
        raise TypeError(f"malformed event time {event.t_ns!r}")
    _check_clock(state, event.t_ns)
    now = event.t_ns
    state = replace(state, clock_ns=now)
    phase = state.phase

    if isinstance(event, (EntryDetected, RoutineDue)):
        if phase != IDLE or snoozed(state, now):
            return state, []
        reason = "entry" if isinstance(event, EntryDetected) else "routine"
        return replace(state, phase=PROMPTED, reprompts=0), [Action(now, REMIND, {"reason": reason})]

    if isinstance(event, ReportDelivered):
        if phase != REPORTING:
            return state, []
        return replace(state, phase=IDLE, last_handwash_time=now), []

    if isinstance(event, Tick):
        return state, []

    if not isinstance(event.text, str):
        raise TypeError("utterance text must be a string")
    intent = parse_intent(event.text)
    if phase in (PROMPTED, AWAITING_START):
        if intent.kind == CONFIRM_START:
            return replace(state, phase=COLLECTING, reprompts=0), [Action(now, START_SENSING)]
        if intent.kind == SNOOZE:
            until = now + intent.minutes * NS_PER_MIN
            return replace(state, phase=IDLE, snooze_until=until, reprompts=0), []
        if intent.kind == DECLINE:
            return replace(state, phase=IDLE, reprompts=0), []
        if intent.kind == UNKNOWN:
            if state.reprompts < state.config.max_reprompts:
                n = state.reprompts + 1
                return replace(state, phase=AWAITING_START, reprompts=n), [Action(now, REPROMPT, {"attempt": n})]
            return replace(state, phase=IDLE, reprompts=0), []
        return state, []
    if phase == COLLECTING and intent.kind == DONE:
        return replace(state, phase=REPORTING), [Action(now, STOP_SENSING), Action(now, ASSESS)]
    return state, []


# -- simulation -------------------------------------------------------------

def parse_script_line(obj):
    """One script record to ``("rssi", BeaconReading)`` or ``("event", event)``."""
    if "t_ns" not in obj or "type" not in obj:
        raise ValueError(f"script record needs t_ns and type: {obj}")
    t = int(obj["t_ns"])
    kind = obj["type"]
    if kind == "rssi":
        return "rssi", BeaconReading(t, str(obj["beacon_id"]), float(obj["rssi"]))
    if kind == "utterance":
        return "event", Utterance(t, str(obj.get("text", "")))
    if kind == "tick":
        return "event", Tick(t)
    raise ValueError(f"unknown script record type {kind!r}")


def simulate(records, state=None):
    """Replay script records; returns ``(final_state, actions)``.

    Entry fires on the rising edge of :func:`entry_detected`, routine checks
    run on every tick, and a report is delivered right after each assessment.
    """
    state = state or ReminderState()
    actions = []
    was_inside = False
    for obj in records:
        kind, item = parse_script_line(obj) if isinstance(obj, dict) else obj
        if kind == "rssi":
            state = ingest_rssi(state, item)
            inside = entry_detected(state, item.t_ns)
            if inside and not was_inside:
                state, out = step(state, EntryDetected(item.t_ns))
                actions += out
            was_inside = inside
            continue
        state, out = step(state, item)
        actions += out
        if isinstance(item, Tick) and state.phase == IDLE and routine_due(state, item.t_ns):
            state, out = step(state, RoutineDue(item.t_ns))
            actions += out
        if any(a.kind == ASSESS for a in out):
            state, more = step(state, ReportDelivered(item.t_ns))
            actions += more
    return state, actions


def read_script(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def format_trace(actions):
    return "".join(json.dumps(a.to_dict(), sort_keys=True) + "\n" for a in actions)


def write_trace(path, actions):
    with open(path, "w") as fh:
        fh.write(format_trace(actions))
