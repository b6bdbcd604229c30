from pathlib import Path

import numpy as np
import pytest

from handwash.harness.config import load_config
from handwash.harness.evaluation import prepare
from handwash.harness.synthetic import generate
from handwash.model.estimator import HybridStepClassifier
from handwash.model.spec import ModelSpec, init_params


def tiny_spec(**kw):
    base = dict(conv_layers=((3, 2), (5, 3)), se_reduction=2, lstm_cells=2, dense_layers=(3,),
                num_classes=3, feature_dim=4, attn_dim=2)
    base.update(kw)
    return ModelSpec(**base)


def random_params(spec, seed=0, bias=0.0, dtype=np.float64):
    """Seeded params with non-zero biases and normaliser so every path is exercised."""
    rng = np.random.default_rng(seed)
    p = init_params(spec, seed).astype(dtype)
    for k, v in p.tensors.items():
        if k == "norm.mean":
            p.tensors[k] = rng.normal(size=v.shape).astype(dtype)
        elif k == "norm.std":
            p.tensors[k] = rng.uniform(0.5, 2.0, size=v.shape).astype(dtype)
        elif k.endswith("b") or ".b" in k:
            p.tensors[k] = (bias + 0.3 * rng.normal(size=v.shape)).astype(dtype)
    return p


def random_events(spec, n_events=3, lengths=(4, 2, 3), seed=1):
    rng = np.random.default_rng(seed)
    X = [rng.normal(size=(lengths[i % len(lengths)], spec.feature_dim)) for i in range(n_events)]
    y = [rng.integers(0, spec.num_classes, size=x.shape[0]) for x in X]
    return X, y


@pytest.fixture
def spec():
    return tiny_spec()


DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.conf"


@pytest.fixture(scope="session")
def desk_cfg():
    return load_config(DESK_CONFIG)


@pytest.fixture(scope="session")
def trained_desk(desk_cfg):
    """A desk-scale classifier trained on a small synthetic dataset."""
    cfg = desk_cfg.update(participants=2, sessions_per_participant=6, epochs=40)
    sessions = generate(cfg.synthetic_spec())
    X, y = prepare(sessions, cfg)
    clf = HybridStepClassifier(**cfg.classifier_params()).fit(X, y)
    return cfg, clf.params_
