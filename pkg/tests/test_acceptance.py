"""End-to-end acceptance checks. Each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also written to the terminal when output is captured.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from checks import check_invariants, finite_difference_check, enumerate_optimum, random_small_spec, replay_checked
from conftest import DESK_CONFIG, random_events, random_params, tiny_spec
import oracles
from handwash.assess import FEEDBACK, PERFECT, SHORT_DURATION, build_report
from handwash.cli import main
from handwash.compress import SparsityVector, apply_sparsity, search
from handwash.context import BeaconReading, ReminderState, entry_detected, format_trace, ingest_rssi, simulate
from handwash.harness import evaluation as ev
from handwash.harness.synthetic import generate, render_session
from handwash.model import ModelSpec, count_flops, init_params
from scripts import S, session_script

pytestmark = pytest.mark.slow

GOLDEN = Path(__file__).parent / "golden" / "feedback.txt"
ALPHAS = (0.3, 0.5, 0.7)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def searched(trained_desk):
    """Budgeted searches on the trained desk model, one per alpha, with run times."""
    cfg, params = trained_desk
    val_cfg = cfg.update(seed=cfg.seed + 100, participants=1, sessions_per_participant=2)
    X, y = ev.prepare(generate(val_cfg.synthetic_spec()), val_cfg)
    out = {}
    for alpha in ALPHAS:
        t = time.perf_counter()
        r = search(params, X, ev._encode(params, y), alpha, iters=cfg.iters, seed=cfg.seed,
                   fill=cfg.fill_budget)
        out[alpha] = (r, time.perf_counter() - t)
    return out


def test_1_budget_contract(searched, trained_desk, verdict):
    _, params = trained_desk
    n = count_flops(params.spec).total
    parts, ok = [], True
    for alpha, (r, secs) in searched.items():
        f = count_flops(r.params.spec).total
        ok &= f <= alpha * n and secs < 600
        parts.append(f"a={alpha}: {f}/{n} ({f / n:.3f}) in {secs:.0f}s")
    verdict(1, ok, "; ".join(parts))


def test_2_tradeoff_shape(desk_cfg, verdict):
    # a smaller cohort with a well-trained base keeps 3 alphas x 4 folds inside the limit
    cfg = desk_cfg.update(participants=4, sessions_per_participant=4, epochs=15)
    sessions = generate(cfg.synthetic_spec())
    t = time.perf_counter()
    rows = ev.alpha_sweep(sessions, ALPHAS, cfg)
    secs = time.perf_counter() - t
    flops = [r.flops for r in rows]
    acc = [r.accuracy for r in rows]
    increasing = all(a < b for a, b in zip(flops, flops[1:]))
    monotone = all(b >= a - 0.02 for a, b in zip(acc, acc[1:]))
    detail = ", ".join(f"a={r.alpha}: flops {r.flops} ({r.flops / r.baseline_flops:.3f} N) acc {r.accuracy:.4f}"
                       for r in rows)
    verdict(2, increasing and monotone and secs < 1800, f"{detail}; {secs:.0f}s")


def test_3_gradient_check(verdict):
    t = time.perf_counter()
    spec = tiny_spec()
    p = random_params(spec, 0, bias=0.5)
    X, y = random_events(spec, 2, (3, 2))
    worst = finite_difference_check(p, X, y, eps=1e-4)
    secs = time.perf_counter() - t
    top = max(worst, key=worst.get)
    ok = set(worst) == set(p.trainable()) and worst[top] < 1e-3 and secs < 60
    verdict(3, ok, f"{len(worst)} tensors, worst {top} rel err {worst[top]:.2e}, {secs:.1f}s")


def test_4_flops_oracle(verdict):
    t = time.perf_counter()
    mismatches = []
    for seed in range(50):
        spec = random_small_spec(np.random.default_rng(1000 + seed))
        a, b = count_flops(spec).total, oracles.count_forward_ops(init_params(spec, seed))
        if a != b:
            mismatches.append((seed, a, b))
    secs = time.perf_counter() - t
    verdict(4, not mismatches and secs < 60, f"50 specs, mismatches {mismatches}, {secs:.1f}s")


def test_5_synthetic_learnability(desk_cfg, verdict):
    # accuracy saturates well before the desk defaults; fewer epochs keep the
    # full 14 x 19 protocol inside the time limit on one core
    cfg = desk_cfg.update(epochs=3, userdep_epochs=15, jitter=0.0)
    t = time.perf_counter()
    sessions = generate(cfg.synthetic_spec())
    feats = ev.prepare(sessions, cfg)
    ud = ev.user_dependent_eval(sessions, cfg, feats)
    lo = ev.lopo(sessions, cfg, feats)
    secs = time.perf_counter() - t
    ok = (len(sessions) == 14 * 19 and min(ud.window_accuracy, ud.mean_accuracy) >= 0.95
          and min(lo.window_accuracy, lo.mean_accuracy) >= 0.85 and secs < 1200)
    verdict(5, ok, f"userdep {ud.window_accuracy:.4f} (mean/step {ud.mean_accuracy:.4f}), "
                   f"lopo {lo.window_accuracy:.4f} (mean/step {lo.mean_accuracy:.4f}), {secs:.0f}s")


def test_6_feedback_fidelity(verdict):
    golden = GOLDEN.read_bytes().split(b"\n")[:12]
    ours = [s.encode("utf-8") for s in [FEEDBACK[k] for k in range(1, 11)] + [SHORT_DURATION, PERFECT]]
    msgs = build_report(set(range(1, 11)) - {4}, 19).messages
    expected = ("Didn't put palm to palm with fingers interlaced properly",
                "Didn't wash hands for enough duration")
    verdict(6, ours == golden and msgs == expected, f"12 strings identical: {ours == golden}; case {msgs}")


def test_7_compression_oracle(verdict):
    t = time.perf_counter()
    spec = ModelSpec(conv_layers=((3, 5),), se_reduction=2, lstm_cells=5, dense_layers=(),
                     num_classes=3, feature_dim=3, attn_dim=1)
    p = random_params(spec, 1)
    X, y = random_events(spec, 3, (4, 3, 5), seed=2)
    levels = (0.0, 0.4, 0.8)
    layers = ("conv0", "lstm")
    (best, _), s = enumerate_optimum(
        p, X, y, layers, levels, 0.7, lambda q, s: apply_sparsity(q, SparsityVector(layers, s)))
    r = search(p, X, y, 0.7, iters=60, seed=0, levels=levels)
    secs = time.perf_counter() - t
    ok = abs(r.best_loss - best) <= 1e-9 * abs(best) and r.sparsity.s == s and secs < 120
    verdict(7, ok, f"search {r.best_loss:.12f} at {r.sparsity.s} vs enumeration {best:.12f} at {s}, {secs:.1f}s")


def test_8_state_machine_suite(verdict):
    identical = 0
    for seed in range(20):
        records = session_script(seed)
        first, second = format_trace(simulate(records)[1]), format_trace(simulate(records)[1])
        identical += first.encode() == second.encode()
        check_invariants(records, simulate(records)[1])
        replay_checked(records)

    def inside(values, beacon="door"):
        st = ReminderState()
        for i, v in enumerate(values):
            st = ingest_rssi(st, BeaconReading(i * S, beacon, v))
        return entry_detected(st, (len(values) - 1) * S)

    table = [inside([-50.0] * 15), not inside([-70.0] * 15), not inside([-60.0] * 15),
             not inside([-50.0] * 15, "hall")]
    verdict(8, identical == 20 and all(table), f"{identical}/20 traces byte-identical; entry table {table}")


def test_9_latency_ordering(searched, trained_desk, verdict):
    cfg, params = trained_desk
    compressed = searched[0.5][0].params
    events = [render_session(cfg.synthetic_spec(), p, 0).series for p in range(2)]
    base, small = ev.measure_latency_paired([params, compressed], events, 30, cfg)
    ok = small.median_s <= base.median_s
    verdict(9, ok, f"median uncompressed {base.median_s * 1e3:.2f} ms, "
                   f"compressed(a=0.5) {small.median_s * 1e3:.2f} ms over 30 paired repeats")


def _pipeline(root):
    base = ["--config", str(DESK_CONFIG), "--seed", "5"]
    data = root / "data"
    steps = [
        ["generate", "--out", data, "--participants", "2", "--sessions", "3"],
        ["train", "--data", data, "--out", root / "model.bin", "--epochs", "3"],
        ["compress", "--model", root / "model.bin", "--data", data, "--alpha", "0.5", "--iters", "10",
         "--out", root / "small.bin"],
        ["eval", "--data", data, "--mode", "lopo", "--out", root / "eval.csv", "--confusion", root / "cm.csv"],
    ]
    for args in steps:
        assert main(base + [str(a) for a in args]) == 0
    return {name: (root / name).read_bytes()
            for name in ("model.bin", "small.bin", "small.bin.trace.csv", "eval.csv", "cm.csv")}


def test_10_determinism(tmp_path, verdict):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    same = {k: a[k] == b[k] for k in a}
    verdict(10, all(same.values()), f"bit-identical outputs {same}")
