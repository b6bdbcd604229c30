import csv
import math

import numpy as np
import pytest

import oracles
from checks import enumerate_optimum
from conftest import random_events, random_params, tiny_spec
from handwash.compress import (
    CompressionBudget, LayerEmbedding, SparsityVector, actor_forward, apply_sparsity,
    compression_loss, fill_budget, finalize, init_agent, layer_embedding, prune_layer, pruned_spec,
    search, select_units, write_trace_csv,
)
from handwash.model import ModelSpec, count_flops, init_params, predict_proba_sequences

TOY = dict(conv_layers=((3, 2),), se_reduction=2, lstm_cells=2, dense_layers=(3,), num_classes=2,
           feature_dim=2, attn_dim=1)


def small_model(seed=0):
    spec = tiny_spec(conv_layers=((3, 4), (5, 6)), lstm_cells=4, dense_layers=(6, 5), feature_dim=4,
                     num_classes=3)
    return random_params(spec, seed)


# -- budget and embeddings --------------------------------------------------

def test_budget_invariants():
    b = CompressionBudget(0.5, 1000)
    assert b.max_flops == 500 and b.allows(500) and not b.allows(501)
    for alpha in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            CompressionBudget(alpha, 1000)
    with pytest.raises(ValueError):
        CompressionBudget(0.1, 5)


def test_toy_flops_by_hand():
    spec = ModelSpec(**TOY)
    # D = 2 features + 2 conv channels + 2 cells; every term from the counting rules
    expected = {"norm": 4, "conv0": 84, "se": 37, "pool": 14, "attention": 342, "lstm": 240,
                "dense0": 27, "out": 14, "softmax": 6}
    assert count_flops(spec).per_layer == expected
    assert count_flops(spec).total == 768


def test_toy_embedding_table():
    spec = ModelSpec(**TOY)
    n = 768
    table = [layer_embedding(spec, layer, 0, n).as_array() for layer in spec.prunable_layers]
    expected = [
        [0.0, 0.0, 84 / n, 0.0, 267 / n],
        [0.5, 0.5, 240 / n, 0.0, 27 / n],
        [1.0, 1.0, 27 / n, 0.0, 0.0],
    ]
    np.testing.assert_allclose(table, expected, atol=1e-15)


def test_embedding_first_and_last():
    spec = small_model().spec
    n = count_flops(spec).total
    layers = spec.prunable_layers
    assert layer_embedding(spec, layers[0], 0, n).flops_reduced_so_far == 0
    last = layer_embedding(spec, layers[-1], 123, n)
    assert last.flops_remaining_after == 0
    assert last.flops_reduced_so_far == pytest.approx(123 / n)
    for layer in layers:
        e = layer_embedding(spec, layer, 0, n).as_array()
        assert np.all((e >= 0) & (e <= 1))


# -- actor ------------------------------------------------------------------

def test_actor_zero_weights_gives_half():
    agent = init_agent(3, zero=True)
    assert actor_forward(agent, np.ones(5)) == 0.5


def test_actor_output_range():
    rng = np.random.default_rng(0)
    agent = init_agent(4, seed=1)
    for W, b in agent.actor:
        W *= 8.0
    for e in rng.normal(scale=3.0, size=(10_000, 5)):
        assert 0.0 <= actor_forward(agent, e) <= 0.8


def test_actor_matches_dense_oracle():
    agent = init_agent(4, seed=2)
    e = LayerEmbedding(0.25, 0.5, 0.1, 0.2, 0.3)
    ops = oracles.Ops()
    h = e.as_array().tolist()
    for W, b in agent.actor[:-1]:
        h = oracles.dense(ops, h, W.tolist(), b.tolist(), relu=True)
    z = oracles.dense(ops, h, agent.actor[-1][0].tolist(), agent.actor[-1][1].tolist(), relu=False)[0]
    expected = min(max(1 / (1 + math.exp(-z)), 0.0), 0.8)
    assert actor_forward(agent, e) == pytest.approx(expected, abs=1e-6)


def test_actor_rejects_non_finite():
    with pytest.raises(ValueError):
        actor_forward(init_agent(2), [0, 0, np.nan, 0, 0])


# -- pruning ----------------------------------------------------------------

def test_prune_zero_is_identity():
    p = small_model()
    for layer in p.spec.prunable_layers:
        q = prune_layer(p, layer, 0.0)
        assert q.spec == p.spec
        for k in p.tensors:
            assert q.tensors[k].tobytes() == p.tensors[k].tobytes()


def test_prune_half_of_128_filters():
    spec = ModelSpec(conv_layers=((3, 128), (5, 16), (7, 16)), lstm_cells=4, dense_layers=(8,))
    q = prune_layer(init_params(spec, 0), "conv0", 0.5)
    assert q.spec.conv_layers[0] == (3, 64)
    assert q.tensors["conv1.W"].shape == (16, 64, 5)


def test_prune_removes_two_smallest_norm_units():
    norms = np.array([3.0, 0.5, 2.0, 1.0])
    np.testing.assert_array_equal(select_units(norms, 0.5), [0, 2])
    spec = tiny_spec(dense_layers=(4,))
    p = random_params(spec)
    W = p.tensors["dense0.W"]
    W[:] = 0.0
    W[:, 0] = [3.0, 0.5, 2.0, 1.0]
    q = prune_layer(p, "dense0", 0.5)
    np.testing.assert_array_equal(q.tensors["dense0.W"][:, 0], [3.0, 2.0])
    assert q.tensors["out.W"].shape == (spec.num_classes, 2)


def test_prune_rejects_bad_ratio():
    p = small_model()
    for s in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            prune_layer(p, "conv0", s)


@pytest.mark.parametrize("layer", ["conv0", "conv1", "lstm", "dense0", "dense1"])
def test_pruned_models_run_and_are_consistent(layer):
    p = small_model(3)
    q = prune_layer(p, layer, 0.5)
    X, _ = random_events(q.spec)
    probs = predict_proba_sequences(q, X)
    assert all(np.allclose(pr.sum(axis=1), 1.0) for pr in probs)
    again = prune_layer(q, layer, 0.0)
    for k in q.tensors:
        assert again.tensors[k].tobytes() == q.tensors[k].tobytes()


def test_pruning_dead_dense_unit_leaves_outputs_unchanged():
    p = small_model(4)
    p.tensors["dense0.W"][2] = 0.0
    p.tensors["dense0.b"][2] = 0.0
    q = prune_layer(p, "dense0", 1 / 6 + 1e-9)
    assert q.spec.dense_layers[0] == 5
    X, _ = random_events(p.spec)
    for a, b in zip(predict_proba_sequences(p, X), predict_proba_sequences(q, X)):
        np.testing.assert_allclose(a, b, atol=1e-12)


# -- loss -------------------------------------------------------------------

def test_compression_loss_examples():
    assert compression_loss([1.0, 2.0], [1.0, 2.0], 1e9) == 0.0
    assert compression_loss(1.0, 0.0, math.e) == pytest.approx(1.0, abs=1e-15)
    assert compression_loss(0.5, 0.0, 10 ** 6) == pytest.approx(3.4539, abs=1e-4)


def test_compression_loss_is_multiplicative():
    base = compression_loss([1.0, 3.0], [0.0, 1.0], 5000)
    scaled = compression_loss(np.sqrt(7) * np.array([1.0, 3.0]), np.sqrt(7) * np.array([0.0, 1.0]), 5000)
    assert scaled == pytest.approx(7 * base, rel=1e-12)


def test_compression_loss_domain():
    with pytest.raises(ValueError):
        compression_loss(1.0, 0.0, 0.5)


# -- search -----------------------------------------------------------------

def val_data(spec, seed=5):
    X, y = random_events(spec, 4, (5, 4, 3, 6), seed)
    return X, y


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("seed", [0, 1])
def test_search_respects_budget(alpha, seed):
    p = small_model(seed)
    X, y = val_data(p.spec)
    r = search(p, X, y, alpha, iters=8, seed=seed)
    n = count_flops(p.spec).total
    assert count_flops(r.params.spec).total <= alpha * n
    assert all(row["flops"] <= alpha * n for row in r.trace)


def test_single_iteration_with_zero_agent():
    p = small_model()
    X, y = val_data(p.spec)
    agent = init_agent(len(p.spec.prunable_layers), zero=True)
    r = search(p, X, y, 0.9, iters=1, agent=agent)
    assert r.sparsity.s == (0.5,) * len(p.spec.prunable_layers)
    assert len(r.trace) == 1 and r.trace[0]["feasible"]


def test_search_is_deterministic():
    p = small_model()
    X, y = val_data(p.spec)
    a = search(p, X, y, 0.5, iters=6, seed=11)
    b = search(p, X, y, 0.5, iters=6, seed=11)
    assert a.sparsity == b.sparsity
    assert a.trace == b.trace


def _relaxed_overshoots(spec, layers, s, budget):
    return not budget.allows(count_flops(pruned_spec(spec, layers, [v * (1 - 1e-6) for v in s])).total)


@pytest.mark.parametrize("alpha", [0.3, 0.6, 0.9])
def test_fill_candidates_sit_on_the_budget(alpha):
    p = small_model()
    X, y = val_data(p.spec)
    layers = p.spec.prunable_layers
    budget = CompressionBudget(alpha, count_flops(p.spec).total)
    r = search(p, X, y, alpha, iters=5, seed=3, fill=True)
    for row in r.trace:
        assert row["flops"] <= budget.max_flops
        assert _relaxed_overshoots(p.spec, layers, row["sparsity"], budget)


def test_fill_budget_is_tight():
    p = small_model()
    layers = p.spec.prunable_layers
    budget = CompressionBudget(0.5, count_flops(p.spec).total)
    s = fill_budget(p.spec, layers, [0.8] * len(layers), budget)
    assert budget.allows(count_flops(pruned_spec(p.spec, layers, s)).total)
    assert _relaxed_overshoots(p.spec, layers, s, budget)
    assert len(set(np.round(s, 12))) == 1  # one common factor
    with pytest.raises(ValueError):
        search(p, *val_data(p.spec), 0.5, iters=1, fill=True, levels=(0.0, 0.5))


def test_infeasible_budget():
    p = small_model()
    X, y = val_data(p.spec)
    with pytest.raises(ValueError, match="infeasible budget"):
        search(p, X, y, 0.01, iters=2)


def test_search_finds_enumeration_optimum_on_discrete_levels():
    spec = ModelSpec(conv_layers=((3, 5),), se_reduction=2, lstm_cells=5, dense_layers=(),
                     num_classes=3, feature_dim=3, attn_dim=1)
    p = random_params(spec, 1)
    X, y = random_events(spec, 3, (4, 3, 5), seed=2)
    levels = (0.0, 0.4, 0.8)
    layers = ("conv0", "lstm")
    (loss, flops), s = enumerate_optimum(
        p, X, y, layers, levels, 0.7, lambda q, s: apply_sparsity(q, SparsityVector(layers, s)))
    r = search(p, X, y, 0.7, iters=60, seed=0, levels=levels)
    assert r.best_loss == pytest.approx(loss, rel=1e-9)
    assert r.sparsity.s == s and count_flops(r.params.spec).total == flops


# -- finalize and trace -----------------------------------------------------

def test_finalize_zero_sparsity_identity():
    p = small_model()
    layers = p.spec.prunable_layers
    q = finalize(p, SparsityVector(layers, (0.0,) * len(layers)))
    for k in p.tensors:
        assert q.tensors[k].tobytes() == p.tensors[k].tobytes()


def test_finalize_flops_and_surviving_weights():
    p = small_model(6)
    layers = p.spec.prunable_layers
    s = SparsityVector(layers, (0.5, 0.34, 0.25, 0.5, 0.2))
    q = finalize(p, s, fine_tune_epochs=0)
    expected = p.spec
    for layer, v in zip(layers, s.s):
        expected = expected.with_units(layer, expected.units(layer) - math.floor(v * expected.units(layer)))
    assert q.spec == expected
    assert count_flops(q.spec).total == oracles.count_forward_ops(q)
    # pruning only deletes entries: every surviving value is bit-equal to one in the original
    for k, t in q.tensors.items():
        assert np.isin(t, p.tensors[k]).all(), k
    keep = np.sort(np.argsort(np.linalg.norm(p.tensors["conv0.W"].reshape(4, -1), axis=1))[2:])
    np.testing.assert_array_equal(q.tensors["conv0.W"], p.tensors["conv0.W"][keep])


def test_fine_tune_needs_data():
    p = small_model()
    layers = p.spec.prunable_layers
    with pytest.raises(ValueError):
        finalize(p, SparsityVector(layers, (0.0,) * len(layers)), fine_tune_epochs=1)


def test_trace_csv(tmp_path):
    p = small_model()
    X, y = val_data(p.spec)
    r = search(p, X, y, 0.5, iters=3)
    path = tmp_path / "trace.csv"
    write_trace_csv(path, r.trace)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0])[:5] == ["iteration", "loss", "val_accuracy", "flops", "feasible"]
    assert [int(row["iteration"]) for row in rows] == [0, 1, 2]
    assert all(int(row["flops"]) <= 0.5 * r.budget.baseline_flops for row in rows)
