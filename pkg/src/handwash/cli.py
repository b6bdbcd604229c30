"""Command line entry point (``handwash <verb> ...``)."""

import argparse
import logging
import os
import sys

from . import context
from .assess import HandwashEvent, assess_event
from .compress import finalize, search, write_trace_csv
from .harness import evaluation as ev
from .harness.config import load_config
from .harness.synthetic import generate, read_dataset, write_dataset
from .model.estimator import HybridStepClassifier
from .model.flops import count_flops
from .model.io import load_model, save_model
from .signal import read_sensor_csv


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in text.replace(",", " ").split()]


def build_parser():
    p = argparse.ArgumentParser(prog="handwash", description="Handwashing quality pipeline")
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    p.add_argument("--config", default=None, help="JSON or key = value config file")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="write a synthetic labelled dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--participants", type=int)
    g.add_argument("--sessions", type=int, dest="sessions_per_participant")
    g.add_argument("--noise", type=float, dest="noise_sigma")
    g.add_argument("--jitter", type=float)
    g.add_argument("--step-seconds", type=float, dest="step_seconds")

    t = sub.add_parser("train", help="train the step classifier on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--participants", type=_ints, default=None, help="subset of participant ids")

    c = sub.add_parser("compress", help="search per-layer sparsities and prune a model")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True, help="validation dataset")
    c.add_argument("--alpha", type=float)
    c.add_argument("--iters", type=int)
    c.add_argument("--fine-tune-epochs", type=int, dest="fine_tune_epochs")
    c.add_argument("--out", required=True)
    c.add_argument("--trace", default=None, help="trace CSV (default: <out>.trace.csv)")

    e = sub.add_parser("eval", help="LOPO or user-dependent evaluation")
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=("lopo", "userdep"), default="lopo")
    e.add_argument("--out", default=None, help="per-step report CSV")
    e.add_argument("--confusion", default=None, help="confusion matrix CSV")

    s = sub.add_parser("sweep", help="accuracy/FLOPs trade-off over budgets")
    s.add_argument("--data", required=True)
    s.add_argument("--alphas", type=_floats)
    s.add_argument("--iters", type=int)
    s.add_argument("--out", default=None)

    a = sub.add_parser("assess", help="quality report for one recorded event")
    a.add_argument("--model", required=True)
    a.add_argument("--event", required=True, help="sensor CSV")
    a.add_argument("--start-ns", type=int, default=None, help="interaction start marker")
    a.add_argument("--end-ns", type=int, default=None, help="interaction end marker")

    m = sub.add_parser("simulate", help="replay a reminder session script")
    m.add_argument("--script", required=True)
    m.add_argument("--out", default=None, help="action trace JSONL (default stdout)")

    lt = sub.add_parser("latency", help="end-to-end event latency of one or more models")
    lt.add_argument("--model", required=True, nargs="+")
    lt.add_argument("--data", required=True)
    lt.add_argument("--repeats", type=int)
    lt.add_argument("--events", type=int, default=5, help="number of sessions to time")
    lt.add_argument("--out", default=None)
    return p


def _config(args, **overrides):
    return load_config(args.config, seed=args.seed, **overrides)


def _dataset(args, cfg):
    return read_dataset(args.data, cfg.rate_hz)


def cmd_generate(args):
    cfg = _config(args, participants=args.participants,
                  sessions_per_participant=args.sessions_per_participant,
                  noise_sigma=args.noise_sigma, jitter=args.jitter, step_seconds=args.step_seconds)
    spec = cfg.synthetic_spec()
    write_dataset(args.out, generate(spec), spec)
    print(f"wrote {spec.participants * spec.sessions_per_participant} sessions to {args.out}")


def cmd_train(args):
    cfg = _config(args, epochs=args.epochs)
    sessions = _dataset(args, cfg)
    if args.participants:
        sessions = [s for s in sessions if s.participant in set(args.participants)]
    X, y = ev.prepare(sessions, cfg)
    clf = HybridStepClassifier(**cfg.classifier_params()).fit(X, y)
    save_model(args.out, clf.params_)
    print(f"train window accuracy {clf.score(X, y):.4f}; FLOPs {count_flops(clf.params_.spec).total}")


def cmd_compress(args):
    cfg = _config(args, alpha=args.alpha, iters=args.iters, fine_tune_epochs=args.fine_tune_epochs)
    params = load_model(args.model)
    X, y = ev.prepare(_dataset(args, cfg), cfg)
    yi = ev._encode(params, y)
    result = search(params, X, yi, cfg.alpha, iters=cfg.iters, seed=cfg.seed, s_max=cfg.s_max,
                    sigma0=cfg.sigma0, nudge=cfg.nudge, lr=cfg.agent_lr, fill=cfg.fill_budget)
    pruned = finalize(params, result.sparsity, X, yi, cfg.fine_tune_epochs, cfg.seed, cfg.lr,
                      cfg.batch_size)
    save_model(args.out, pruned)
    write_trace_csv(args.trace or args.out + ".trace.csv", result.trace)
    flops = count_flops(pruned.spec).total
    print(f"FLOPs {flops} / budget {result.budget.max_flops:.0f} (baseline {result.budget.baseline_flops})")
    print("sparsity " + " ".join(f"{k}={v:.3f}" for k, v in result.sparsity.as_dict().items()))


def cmd_eval(args):
    cfg = _config(args)
    sessions = _dataset(args, cfg)
    report = ev.lopo(sessions, cfg) if args.mode == "lopo" else ev.user_dependent_eval(sessions, cfg)
    if args.out:
        ev.write_report_csv(args.out, report)
    if args.confusion:
        ev.write_confusion_csv(args.confusion, report)
    print(report.summary())


def cmd_sweep(args):
    cfg = _config(args, iters=args.iters, alphas=args.alphas)
    rows = ev.alpha_sweep(_dataset(args, cfg), cfg.alphas, cfg)
    if args.out:
        ev.write_sweep_csv(args.out, rows)
    for r in rows:
        print(f"alpha {r.alpha:.2f}  accuracy {r.accuracy:.4f}  FLOPs {r.flops} (<= {r.max_flops:.0f})")


def cmd_assess(args):
    cfg = _config(args)
    params = load_model(args.model)
    series = read_sensor_csv(args.event, cfg.rate_hz)
    start = args.start_ns if args.start_ns is not None else int(series.t_ns[0])
    end = args.end_ns if args.end_ns is not None else int(series.t_ns[-1])
    report = assess_event(params, HandwashEvent(series, start, end), cfg.extractor(), cfg.min_windows)
    sys.stdout.write(report.to_text())


def cmd_simulate(args):
    cfg = _config(args)
    state = context.ReminderState(config=cfg.context_config())
    _, actions = context.simulate(context.read_script(args.script), state)
    if args.out:
        context.write_trace(args.out, actions)
    else:
        sys.stdout.write(context.format_trace(actions))


def cmd_latency(args):
    cfg = _config(args, latency_repeats=args.repeats)
    sessions = _dataset(args, cfg)[:args.events]
    models = [load_model(path) for path in args.model]
    stats = ev.measure_latency_paired(models, [s.series for s in sessions], cfg.latency_repeats, cfg)
    rows = [(os.path.basename(path), count_flops(m.spec).total, st)
            for path, m, st in zip(args.model, models, stats)]
    if args.out:
        ev.write_latency_csv(args.out, rows)
    for name, flops, st in rows:
        print(f"{name}: FLOPs {flops}  median {st.median_s * 1e3:.2f} ms  p95 {st.p95_s * 1e3:.2f} ms")


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "compress": cmd_compress, "eval": cmd_eval,
    "sweep": cmd_sweep, "assess": cmd_assess, "simulate": cmd_simulate, "latency": cmd_latency,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.verb](args)
    except (ValueError, KeyError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
