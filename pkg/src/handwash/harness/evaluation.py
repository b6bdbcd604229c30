"""Evaluation protocols: per-step window accuracy, leave-one-participant-out,
user-dependent splits, compression budget sweeps and latency measurement."""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..assess import build_report, classify_event, detect_steps
from ..compress import evaluate, finalize, search
from ..model.estimator import HybridStepClassifier
from ..model.flops import count_flops
from .synthetic import STEPS

log = logging.getLogger(__name__)


def step_accuracy(predictions, ground_truth, steps=STEPS):
    """Per-step share of windows predicted correctly; steps never present are omitted."""
    pred = np.concatenate([np.ravel(p) for p in predictions]) if _ragged(predictions) else np.ravel(predictions)
    truth = np.concatenate([np.ravel(t) for t in ground_truth]) if _ragged(ground_truth) else np.ravel(ground_truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    out = {}
    for k in steps:
        m = truth == k
        if m.any():
            out[k] = float((pred[m] == k).sum() / m.sum())
    return out


def _ragged(x):
    return isinstance(x, (list, tuple)) and len(x) > 0 and np.ndim(x[0]) >= 1


def confusion(predictions, ground_truth, steps=STEPS):
    """Rows: true step; columns: predicted step (predictions outside ``steps`` dropped)."""
    pred = np.concatenate([np.ravel(p) for p in predictions])
    truth = np.concatenate([np.ravel(t) for t in ground_truth])
    index = {s: i for i, s in enumerate(steps)}
    mat = np.zeros((len(steps), len(steps)), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t in index and p in index:
            mat[index[t], index[p]] += 1
    return mat


@dataclass
class EvalReport:
    per_step: dict
    mean_accuracy: float
    window_accuracy: float
    confusion: np.ndarray
    support: dict
    total_flops: int = None
    latency_median_s: float = None
    latency_p95_s: float = None
    folds: list = field(default_factory=list)

    @classmethod
    def from_predictions(cls, predictions, ground_truth, total_flops=None):
        per_step = step_accuracy(predictions, ground_truth)
        truth = np.concatenate([np.ravel(t) for t in ground_truth])
        pred = np.concatenate([np.ravel(p) for p in predictions])
        m = np.isin(truth, STEPS)
        return cls(per_step=per_step,
                   mean_accuracy=float(np.mean(list(per_step.values()))) if per_step else float("nan"),
                   window_accuracy=float((pred[m] == truth[m]).mean()) if m.any() else float("nan"),
                   confusion=confusion(predictions, ground_truth),
                   support={k: int((truth == k).sum()) for k in STEPS},
                   total_flops=total_flops)

    @classmethod
    def average(cls, reports):
        """Average per-step accuracies over folds (each step over the folds where it occurs)."""
        per_step = {}
        for k in STEPS:
            vals = [r.per_step[k] for r in reports if k in r.per_step]
            if vals:
                per_step[k] = float(np.mean(vals))
        return cls(per_step=per_step,
                   mean_accuracy=float(np.mean([r.mean_accuracy for r in reports])),
                   window_accuracy=float(np.mean([r.window_accuracy for r in reports])),
                   confusion=sum(r.confusion for r in reports),
                   support={k: sum(r.support[k] for r in reports) for k in STEPS},
                   total_flops=reports[0].total_flops, folds=list(reports))

    def rows(self):
        for k in STEPS:
            acc = self.per_step.get(k)
            yield {"step": k, "support": self.support[k], "accuracy": "" if acc is None else repr(acc)}
        yield {"step": "mean", "support": sum(self.support.values()), "accuracy": repr(self.mean_accuracy)}
        yield {"step": "window", "support": sum(self.support.values()), "accuracy": repr(self.window_accuracy)}

    def summary(self):
        lines = [f"mean per-step accuracy {self.mean_accuracy:.4f}",
                 f"window accuracy        {self.window_accuracy:.4f}"]
        if self.total_flops is not None:
            lines.append(f"model FLOPs            {self.total_flops}")
        if self.latency_median_s is not None:
            lines.append(f"latency median/p95     {self.latency_median_s * 1e3:.2f} / "
                         f"{self.latency_p95_s * 1e3:.2f} ms")
        lines += [f"  step {k:2d}: {self.per_step[k]:.4f}" for k in self.per_step]
        return "\n".join(lines)


def write_report_csv(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("step", "support", "accuracy"))
        writer.writeheader()
        writer.writerows(report.rows())


def write_confusion_csv(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + list(STEPS))
        for k, row in zip(STEPS, report.confusion):
            writer.writerow([k] + [int(v) for v in row])


def prepare(sessions, cfg):
    """Feature matrices and window labels for each session."""
    ext = cfg.extractor()
    series = [s.series for s in sessions]
    return ext.transform(series), ext.transform_labels(series)


def _by_participant(sessions):
    out = {}
    for i, s in enumerate(sessions):
        out.setdefault(s.participant, []).append(i)
    return out


def _fit(X, y, cfg, epochs=None):
    return HybridStepClassifier(**cfg.classifier_params(epochs)).fit(X, y)


def _report(clf, X, y):
    return EvalReport.from_predictions(clf.predict(X), y, count_flops(clf.params_.spec).total)


def lopo_folds(sessions):
    """``(participant, train_indices, test_indices)`` per held-out participant."""
    groups = _by_participant(sessions)
    if len(groups) < 2:
        raise ValueError("leave-one-participant-out needs at least 2 participants")
    for p in sorted(groups):
        test = groups[p]
        train = [i for q in sorted(groups) if q != p for i in groups[q]]
        yield p, train, test


def lopo(sessions, cfg, features=None):
    X, y = features or prepare(sessions, cfg)
    reports = []
    for p, train_idx, test_idx in lopo_folds(sessions):
        clf = _fit([X[i] for i in train_idx], [y[i] for i in train_idx], cfg)
        rep = _report(clf, [X[i] for i in test_idx], [y[i] for i in test_idx])
        log.info("lopo fold %s: mean accuracy %.4f", p, rep.mean_accuracy)
        reports.append(rep)
    return EvalReport.average(reports)


def userdep_splits(sessions):
    """Per participant: all but the last session train, the last one tests."""
    for p, idx in sorted(_by_participant(sessions).items()):
        if len(idx) < 2:
            raise ValueError(f"participant {p} has a single session; cannot hold one out")
        idx = sorted(idx, key=lambda i: sessions[i].session)
        yield p, idx[:-1], idx[-1:]


def user_dependent_eval(sessions, cfg, features=None):
    X, y = features or prepare(sessions, cfg)
    epochs = cfg.userdep_epochs if cfg.userdep_epochs is not None else cfg.epochs
    reports = []
    for p, train_idx, test_idx in userdep_splits(sessions):
        clf = _fit([X[i] for i in train_idx], [y[i] for i in train_idx], cfg, epochs)
        rep = _report(clf, [X[i] for i in test_idx], [y[i] for i in test_idx])
        log.info("user-dependent %s: mean accuracy %.4f", p, rep.mean_accuracy)
        reports.append(rep)
    return EvalReport.average(reports)


def _encode(params, y):
    lookup = {c: i for i, c in enumerate(params.classes)}
    return [np.array([lookup.get(int(v), -1) for v in labels], dtype=np.int64) for labels in y]


def compress_and_evaluate(params, alpha, X_val, y_val, X_train, y_train, X_test, y_test, cfg):
    """Search, prune, optionally fine-tune and score one compressed model."""
    yv = _encode(params, y_val)
    result = search(params, X_val, yv, alpha, iters=cfg.iters, seed=cfg.seed, s_max=cfg.s_max,
                    sigma0=cfg.sigma0, nudge=cfg.nudge, lr=cfg.agent_lr, fill=cfg.fill_budget)
    pruned = finalize(params, result.sparsity, X_train, _encode(params, y_train),
                      cfg.fine_tune_epochs, cfg.seed, cfg.lr, cfg.batch_size)
    clf = HybridStepClassifier.from_params(pruned)
    return result, pruned, _report(clf, X_test, y_test)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    accuracy: float
    flops: int
    baseline_flops: int
    max_flops: float


def alpha_sweep(sessions, alphas, cfg, features=None):
    """LOPO accuracy and FLOPs of compressed models for each budget ``alpha``.

    Per fold one base model is trained; the first session of every training
    participant is held back as the search's validation set. FLOPs are the
    largest over folds.
    """
    alphas = [float(a) for a in alphas]
    if any(not 0 < a < 1 for a in alphas) or alphas != sorted(alphas):
        raise ValueError("alphas must be ascending and inside (0, 1)")
    X, y = features or prepare(sessions, cfg)
    acc = {a: [] for a in alphas}
    flops = {a: [] for a in alphas}
    baseline = None
    for p, train_idx, test_idx in lopo_folds(sessions):
        firsts = {}
        for i in train_idx:
            firsts.setdefault(sessions[i].participant, i)
        val_idx = sorted(firsts.values())
        fit_idx = [i for i in train_idx if i not in firsts.values()] or train_idx
        clf = _fit([X[i] for i in fit_idx], [y[i] for i in fit_idx], cfg)
        baseline = count_flops(clf.params_.spec).total
        for a in alphas:
            _, pruned, rep = compress_and_evaluate(
                clf.params_, a, [X[i] for i in val_idx], [y[i] for i in val_idx],
                [X[i] for i in fit_idx], [y[i] for i in fit_idx],
                [X[i] for i in test_idx], [y[i] for i in test_idx], cfg)
            acc[a].append(rep.mean_accuracy)
            flops[a].append(rep.total_flops)
            log.info("sweep fold %s alpha %.2f: accuracy %.4f flops %d", p, a, rep.mean_accuracy,
                     rep.total_flops)
    return [SweepRow(a, float(np.mean(acc[a])), int(max(flops[a])), baseline, a * baseline)
            for a in alphas]


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("alpha", "accuracy", "flops", "baseline_flops", "max_flops"))
        for r in rows:
            writer.writerow((repr(r.alpha), repr(r.accuracy), r.flops, r.baseline_flops, repr(r.max_flops)))


@dataclass(frozen=True)
class LatencyStats:
    median_s: float
    p95_s: float
    samples: tuple


def _latency_stats(samples):
    arr = np.asarray(samples)
    return LatencyStats(float(np.median(arr)), float(np.percentile(arr, 95)), tuple(arr.tolist()))


def run_event(params, series, duration_s, extractor, min_windows):
    timeline = classify_event(params, series, extractor)
    return build_report(detect_steps(timeline, min_windows), duration_s)


def measure_latency(params, events, repeats, cfg, clock=time.perf_counter):
    """Per-repeat mean wall-clock time of features -> windows -> report per event.

    ``events`` are SampleSeries; one warm-up pass runs first and is excluded.
    """
    return measure_latency_paired([params], events, repeats, cfg, clock)[0]


def measure_latency_paired(models, events, repeats, cfg, clock=time.perf_counter):
    """Like :func:`measure_latency` for several models, interleaved per repeat."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    ext = cfg.extractor()
    durations = [(s.t_ns[-1] - s.t_ns[0]) / 1e9 for s in events]

    def once(params):
        t0 = clock()
        for s, d in zip(events, durations):
            run_event(params, s, d, ext, cfg.min_windows)
        return (clock() - t0) / len(events)

    for params in models:
        once(params)
    samples = [[] for _ in models]
    for _ in range(repeats):
        for j, params in enumerate(models):
            samples[j].append(once(params))
    return [_latency_stats(s) for s in samples]


def write_latency_csv(path, named_stats):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("model", "flops", "median_s", "p95_s", "repeats"))
        for name, flops, st in named_stats:
            writer.writerow((name, flops, repr(st.median_s), repr(st.p95_s), len(st.samples)))


__all__ = [
    "EvalReport", "LatencyStats", "SweepRow", "alpha_sweep", "compress_and_evaluate", "confusion",
    "evaluate", "lopo", "lopo_folds", "measure_latency", "measure_latency_paired", "prepare",
    "step_accuracy", "user_dependent_eval", "userdep_splits", "write_confusion_csv",
    "write_latency_csv", "write_report_csv", "write_sweep_csv",
]
