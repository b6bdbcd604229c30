"""FLOPs-budgeted channel pruning driven by a small actor-critic search.

Each search iteration walks the prunable layers in order. For every layer
an embedding of its structure and FLOPs is fed to the actor, which emits a
sparsity ratio; the layer loses that fraction of its output units. The
pruned candidate is scored on held-out windows and the actor and critic are
updated jointly with Adam on::

    loss = mse(measured_val_loss, critic(sparsities)) * ln(candidate_flops)

The candidate with the lowest ``val_cross_entropy * ln(flops)`` among those
within budget is returned.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fraction
from .model.flops import count_flops
from .model.network import predict_proba_sequences
from .model.spec import LAYER_KIND, ModelParams, split_layer
from .model.train import Adam, train

log = logging.getLogger(__name__)

S_MAX = 0.8
HIDDEN = 300
EMBED_DIM = 5
SIGMA0 = 0.5
NUDGE = 0.05
TRACE_FIELDS = ("iteration", "loss", "val_accuracy", "flops", "feasible", "agent_loss", "sparsity")


@dataclass(frozen=True)
class CompressionBudget:
    alpha: float
    baseline_flops: int

    def __post_init__(self):
        check_fraction(self.alpha, "alpha", low_inclusive=False)
        if self.baseline_flops < 1 or self.max_flops < 1:
            raise ValueError("budget must allow at least one FLOP")

    @property
    def max_flops(self):
        return self.alpha * self.baseline_flops

    def allows(self, flops):
        return flops <= self.max_flops


@dataclass(frozen=True)
class LayerEmbedding:
    layer_index: float
    layer_kind: float
    layer_flops: float
    flops_reduced_so_far: float
    flops_remaining_after: float

    def as_array(self):
        return np.array([self.layer_index, self.layer_kind, self.layer_flops,
                         self.flops_reduced_so_far, self.flops_remaining_after])


@dataclass(frozen=True)
class SparsityVector:
    layers: tuple
    s: tuple

    def __post_init__(self):
        if len(self.layers) != len(self.s):
            raise ValueError("one sparsity ratio per prunable layer is required")
        for v in self.s:
            check_fraction(v, "sparsity")

    def as_dict(self):
        return dict(zip(self.layers, self.s))


def layer_embedding(spec, layer, reduced_so_far, baseline_flops, layers=None):
    """Embedding of ``layer`` within the (partially pruned) ``spec``.

    FLOPs fields are divided by the unpruned model's total.
    """
    layers = tuple(layers or spec.prunable_layers)
    idx = layers.index(layer)
    table = count_flops(spec).per_layer
    n = float(baseline_flops)
    kind, _ = split_layer(layer)
    return LayerEmbedding(
        layer_index=idx / (len(layers) - 1) if len(layers) > 1 else 0.0,
        layer_kind=LAYER_KIND[kind],
        layer_flops=table[layer] / n,
        flops_reduced_so_far=reduced_so_far / n,
        flops_remaining_after=sum(table[name] for name in layers[idx + 1:]) / n,
    )


# -- agent networks ---------------------------------------------------------

def _mlp_init(rng, sizes, zero=False):
    params = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(n_in)
        W = np.zeros((n_out, n_in)) if zero else rng.uniform(-bound, bound, size=(n_out, n_in))
        params.append([W, np.zeros(n_out)])
    return params


def _mlp_forward(params, x):
    acts = [x]
    h = x
    for i, (W, b) in enumerate(params):
        h = h @ W.T + b
        if i < len(params) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def _mlp_backward(params, acts, dout):
    grads = []
    d = dout
    for i in reversed(range(len(params))):
        W, _ = params[i]
        if i < len(params) - 1:
            d = d * (acts[i + 1] > 0)
        grads.append([d.T @ acts[i], d.sum(axis=0)])
        d = d @ W
    return grads[::-1], d


@dataclass
class AgentParams:
    """Actor (embedding -> sparsity) and critic (sparsities + FLOPs -> val loss) weights."""

    actor: list
    critic: list

    def flat(self):
        return {f"actor.{i}.{j}": t for i, layer in enumerate(self.actor) for j, t in enumerate(layer)} | \
            {f"critic.{i}.{j}": t for i, layer in enumerate(self.critic) for j, t in enumerate(layer)}


def init_agent(n_layers, seed=0, zero=False):
    rng = np.random.default_rng([seed, 17])
    actor = _mlp_init(rng, (EMBED_DIM, HIDDEN, HIDDEN, 1), zero)
    critic = _mlp_init(rng, (n_layers + 1, HIDDEN, HIDDEN, 1), zero)
    return AgentParams(actor, critic)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def actor_forward(agent, e, s_max=S_MAX):
    """Sparsity ratio for one layer embedding, in ``[0, s_max]``."""
    x = np.asarray(e.as_array() if isinstance(e, LayerEmbedding) else e, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("embedding must be finite")
    z, _ = _mlp_forward(agent.actor, x[None])
    return float(np.clip(_sigmoid(z[0, 0]), 0.0, s_max))


def critic_forward(agent, s, flops_ratio):
    x = np.concatenate([np.asarray(s, dtype=np.float64), [flops_ratio]])
    z, _ = _mlp_forward(agent.critic, x[None])
    return float(z[0, 0])


def compression_loss(y, critic_out, total_flops):
    """Mean squared error between ``y`` and ``critic_out`` times ``ln(total_flops)``."""
    if total_flops < 1:
        raise ValueError("total_flops must be >= 1 (log of a non-positive count)")
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(critic_out, dtype=np.float64)
    return float(np.mean((y - c) ** 2) * math.log(total_flops))


# -- pruning ----------------------------------------------------------------

def units_removed(n_units, s):
    check_fraction(s, "sparsity")
    return int(math.floor(s * n_units))


def unit_norms(params, layer):
    """L2 norm of each output unit's incoming weights."""
    kind, idx = split_layer(layer)
    t = params.tensors
    if kind == "conv":
        W = t[f"conv{idx}.W"]
        return np.sqrt((W.astype(np.float64) ** 2).reshape(W.shape[0], -1).sum(axis=1))
    if kind == "dense":
        W = t[f"dense{idx}.W"].astype(np.float64)
        return np.sqrt((W ** 2).sum(axis=1))
    H = params.spec.lstm_cells
    rows = [np.concatenate([t["lstm.Wx"][g * H:(g + 1) * H], t["lstm.Wh"][g * H:(g + 1) * H]], axis=1)
            for g in range(4)]
    stacked = np.concatenate(rows, axis=1).astype(np.float64)
    return np.sqrt((stacked ** 2).sum(axis=1))


def select_units(norms, s):
    """Sorted indices of the units kept after dropping the ``floor(s*n)`` weakest.

    Ties are broken by position (earlier units go first).
    """
    n = len(norms)
    drop = units_removed(n, s)
    order = np.lexsort((np.arange(n), norms))
    return np.sort(order[drop:])


def _drop_positions(spec, keep_act):
    """Columns of the step input ``x`` kept when activation slots are pruned."""
    F = spec.feature_dim
    return np.concatenate([np.arange(F), F + keep_act])


def _lstm_input_columns(spec, keep_x):
    """LSTM input is ``[x, attention(x) flattened position-major]``."""
    D, d = spec.input_dim, spec.attn_dim
    att_cols = (D + keep_x[:, None] * d + np.arange(d)[None, :]).ravel()
    return np.concatenate([keep_x, att_cols])


def prune_layer(params, layer, s):
    """Remove the ``floor(s * units)`` smallest-norm output units of ``layer``.

    Consumers of the layer's output are resized to match, including the
    activation-vector slots the network feeds back into its own input.
    """
    spec = params.spec
    n = spec.units(layer)
    keep = select_units(unit_norms(params, layer), s)
    if keep.size == n:
        return params.copy()
    t = {k: v.copy() for k, v in params.tensors.items()}
    kind, idx = split_layer(layer)
    new_spec = spec.with_units(layer, keep.size)
    act_keep = None
    if kind == "conv":
        t[f"conv{idx}.W"] = t[f"conv{idx}.W"][keep]
        t[f"conv{idx}.b"] = t[f"conv{idx}.b"][keep]
        if idx + 1 < len(spec.conv_layers):
            t[f"conv{idx + 1}.W"] = t[f"conv{idx + 1}.W"][:, keep]
        else:
            t["se.W1"] = t["se.W1"][:, keep]
            t["se.W2"] = t["se.W2"][keep]
            t["se.b2"] = t["se.b2"][keep]
            act_keep = keep
    elif kind == "lstm":
        H = spec.lstm_cells
        gate_rows = np.concatenate([g * H + keep for g in range(4)])
        t["lstm.Wx"] = t["lstm.Wx"][gate_rows]
        t["lstm.Wh"] = t["lstm.Wh"][gate_rows][:, keep]
        t["lstm.b"] = t["lstm.b"][gate_rows]
        act_keep = np.concatenate([np.arange(spec.cnn_out_dim), spec.cnn_out_dim + keep])
    else:
        t[f"dense{idx}.W"] = t[f"dense{idx}.W"][keep]
        t[f"dense{idx}.b"] = t[f"dense{idx}.b"][keep]
        nxt = f"dense{idx + 1}.W" if idx + 1 < len(spec.dense_layers) else "out.W"
        t[nxt] = t[nxt][:, keep]
    if act_keep is not None:
        if kind == "conv":
            act_keep = np.concatenate([act_keep, spec.cnn_out_dim + np.arange(spec.lstm_cells)])
        keep_x = _drop_positions(spec, act_keep)
        t["lstm.Wx"] = t["lstm.Wx"][:, _lstm_input_columns(spec, keep_x)]
        t["dense0.W" if spec.dense_layers else "out.W"] = \
            t["dense0.W" if spec.dense_layers else "out.W"][:, act_keep]
    return ModelParams(new_spec, t, params.version, params.classes)


def apply_sparsity(params, sparsity):
    for layer, s in zip(sparsity.layers, sparsity.s):
        params = prune_layer(params, layer, s)
    return params


def pruned_spec(spec, layers, s):
    for layer, v in zip(layers, s):
        spec = spec.with_units(layer, spec.units(layer) - units_removed(spec.units(layer), v))
    return spec


# -- search -----------------------------------------------------------------

def evaluate(params, X, y):
    """(mean cross-entropy, window accuracy) over labelled windows."""
    probs = predict_proba_sequences(params, X)
    total, correct, n = 0.0, 0, 0
    for p, v in zip(probs, y):
        v = np.asarray(v)
        m = v >= 0
        total -= np.log(np.maximum(p[m, v[m]], 1e-300)).sum()
        correct += int((p[m].argmax(axis=1) == v[m]).sum())
        n += int(m.sum())
    if n == 0:
        raise ValueError("validation data has no labelled windows")
    return float(total / n), correct / n


def candidate_key(val_loss, flops):
    """Ranking of feasible candidates: validation loss, then fewer FLOPs."""
    return (val_loss, flops)


@dataclass
class SearchResult:
    sparsity: SparsityVector
    params: ModelParams
    trace: list
    best_loss: float
    budget: CompressionBudget
    agent: AgentParams = field(repr=False, default=None)


def _truncated_normal(rng, sigma):
    if sigma <= 0:
        return 0.0
    while True:
        v = rng.normal(0.0, sigma)
        if abs(v) <= 2 * sigma:
            return v


def _snap(value, levels, up=False):
    if levels is None:
        return value
    levels = np.asarray(levels)
    if up:
        above = levels[levels >= value - 1e-12]
        return float(above.min()) if above.size else float(levels.max())
    return float(levels[np.argmin(np.abs(levels - value))])


def fill_budget(spec, layers, s_vec, budget, steps=30):
    """Scale ``s_vec`` toward zero as far as the budget allows (bisection on the factor)."""
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if budget.allows(count_flops(pruned_spec(spec, layers, [mid * v for v in s_vec])).total):
            hi = mid
        else:
            lo = mid
    return [hi * v for v in s_vec]


def search(params, X_val, y_val, alpha, iters=100, seed=0, s_max=S_MAX, layers=None, levels=None,
           sigma0=SIGMA0, nudge=NUDGE, lr=1e-3, agent=None, fill=False):
    """Search per-layer sparsities for ``params`` under ``alpha * FLOPs``.

    ``X_val``/``y_val`` are held-out event features and class indices used to
    score candidates. ``levels`` optionally restricts sparsities to a discrete
    set. With ``fill`` an under-budget candidate is relaxed toward zero
    sparsity until it nearly meets the budget, so the actor only chooses how
    pruning is spread over layers. Returns a :class:`SearchResult`.
    """
    if fill and levels is not None:
        raise ValueError("fill and levels cannot be combined")
    spec = params.spec
    layers = tuple(layers or spec.prunable_layers)
    baseline = count_flops(spec).total
    budget = CompressionBudget(alpha, baseline)
    if levels is not None:
        levels = tuple(sorted(float(v) for v in levels if 0 <= v <= s_max))
        if not levels:
            raise ValueError("no sparsity level within [0, s_max]")
    top = max(levels) if levels is not None else s_max
    if not budget.allows(count_flops(pruned_spec(spec, layers, [top] * len(layers))).total):
        raise ValueError("infeasible budget")
    rng = np.random.default_rng([seed, 23])
    agent = agent or init_agent(len(layers), seed)
    actor_params = [t for layer in agent.actor for t in layer]
    critic_params = [t for layer in agent.critic for t in layer]
    opt = Adam(lr)
    trace, best = [], None
    for it in range(iters):
        sigma = sigma0 * (1.0 - (it + 1) / iters)
        cur = spec
        reduced = 0
        raw, caches = [], []
        for layer in layers:
            e = layer_embedding(cur, layer, reduced, baseline, layers).as_array()
            z, acts = _mlp_forward(agent.actor, e[None])
            mu = _sigmoid(z[0, 0])
            s = float(np.clip(mu + _truncated_normal(rng, sigma), 0.0, s_max))
            s = _snap(s, levels)
            raw.append(s)
            caches.append((acts, mu))
            n = cur.units(layer)
            cur = cur.with_units(layer, n - units_removed(n, s))
            reduced = baseline - count_flops(cur).total
        flops = count_flops(cur).total
        feasible = budget.allows(flops)
        s_vec = list(raw)
        r = 0
        while not budget.allows(flops):
            r += 1
            s_vec = [_snap(min(s_max, v + r * nudge), levels, up=True) for v in raw]
            flops = count_flops(pruned_spec(spec, layers, s_vec)).total
        if fill:
            s_vec = fill_budget(spec, layers, s_vec, budget)
            flops = count_flops(pruned_spec(spec, layers, s_vec)).total
        candidate = apply_sparsity(params, SparsityVector(layers, tuple(s_vec)))
        val_loss, val_acc = evaluate(candidate, X_val, y_val)
        if not np.isfinite(val_loss):
            raise FloatingPointError("non-finite validation loss")

        # joint Adam step on the actor and critic
        x_c = np.concatenate([s_vec, [flops / baseline]])[None]
        pred, c_acts = _mlp_forward(agent.critic, x_c)
        log_f = math.log(flops)
        loss = compression_loss(val_loss, pred[0, 0], flops)
        dpred = np.array([[2.0 * (pred[0, 0] - val_loss) * log_f]])
        c_grads, dx = _mlp_backward(agent.critic, c_acts, dpred)
        a_grads = [[np.zeros_like(W), np.zeros_like(b)] for W, b in agent.actor]
        for i, (acts, mu) in enumerate(caches):
            dmu = dx[0, i] * mu * (1.0 - mu)
            g, _ = _mlp_backward(agent.actor, acts, np.array([[dmu]]))
            for layer_g, acc in zip(g, a_grads):
                acc[0] += layer_g[0]
                acc[1] += layer_g[1]
        grads = {}
        weights = {}
        for k, (t, g) in enumerate(zip(actor_params, [x for gl in a_grads for x in gl])):
            weights[f"a{k}"], grads[f"a{k}"] = t, g
        for k, (t, g) in enumerate(zip(critic_params, [x for gl in c_grads for x in gl])):
            weights[f"c{k}"], grads[f"c{k}"] = t, g
        opt.step(weights, grads)

        trace.append({
            "iteration": it, "loss": float(val_loss), "val_accuracy": float(val_acc), "flops": flops,
            "feasible": feasible, "agent_loss": float(loss), "sparsity": tuple(s_vec),
        })
        key = candidate_key(val_loss, flops)
        if best is None or key < best[0]:
            best = (key, tuple(s_vec), candidate)
        log.debug("iter %d flops %d val loss %.4f agent loss %.4f", it, flops, val_loss, loss)
    (best_loss, _), s_best, candidate = best
    return SearchResult(SparsityVector(layers, s_best), candidate, trace, best_loss, budget, agent)


def finalize(params, sparsity, X=None, y=None, fine_tune_epochs=0, seed=0, lr=1e-3, batch_size=16):
    """Prune ``params`` per ``sparsity``; optionally fine-tune the survivors."""
    pruned = apply_sparsity(params, sparsity)
    if fine_tune_epochs > 0:
        if X is None or y is None:
            raise ValueError("fine-tuning needs training data")
        pruned = train(pruned.spec, X, y, lr=lr, epochs=fine_tune_epochs, seed=seed,
                       batch_size=batch_size, init=pruned)
    return pruned


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for row in trace:
            writer.writerow([
                row["iteration"], repr(row["loss"]), repr(row["val_accuracy"]), row["flops"],
                int(row["feasible"]), repr(row["agent_loss"]),
                " ".join(repr(v) for v in row["sparsity"]),
            ])


class CompressionSearch(BaseEstimator):
    """Estimator wrapper: ``fit(X_val, y_val)`` searches and prunes ``base_params``.

    ``y_val`` holds per-window step labels (mapped onto the model's classes).
    """

    def __init__(self, base_params=None, alpha=0.5, iters=100, s_max=S_MAX, fine_tune_epochs=0,
                 fill=False, random_state=0):
        self.base_params = base_params
        self.fill = fill
        self.alpha = alpha
        self.iters = iters
        self.s_max = s_max
        self.fine_tune_epochs = fine_tune_epochs
        self.random_state = random_state

    def fit(self, X, y):
        if self.base_params is None:
            raise ValueError("base_params is required")
        lookup = {c: i for i, c in enumerate(self.base_params.classes)}
        y_idx = [np.array([lookup.get(int(v), -1) for v in labels]) for labels in y]
        result = search(self.base_params, X, y_idx, self.alpha, self.iters, self.random_state,
                        self.s_max, fill=self.fill)
        self.sparsity_ = result.sparsity
        self.trace_ = result.trace
        self.budget_ = result.budget
        self.best_loss_ = result.best_loss
        self.params_ = finalize(self.base_params, result.sparsity, X, y_idx,
                                self.fine_tune_epochs, self.random_state)
        self.flops_ = count_flops(self.params_.spec).total
        return self
