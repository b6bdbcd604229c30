import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .._validation import check_sequences
from .network import predict_proba_sequences
from .spec import PAPER_CONV_LAYERS, ModelSpec
from .train import train

STEPS = tuple(range(1, 11))
NULL_LABEL = 0


class HybridStepClassifier(ClassifierMixin, BaseEstimator):
    """Per-window handwashing step classifier over whole events.

    ``X`` is a list of events, each a ``(n_windows, n_features)`` matrix;
    ``y`` is the matching list of per-window step labels (1-10, 0 = none).
    Windows labelled 0 are ignored in training unless ``include_null``
    adds an explicit null class.
    """

    def __init__(self, conv_layers=PAPER_CONV_LAYERS, lstm_cells=50, dense_layers=(250, 250, 250),
                 attn_dim=4, se_reduction=4, include_null=False, lr=1e-3, epochs=10,
                 batch_size=16, random_state=0):
        self.conv_layers = conv_layers
        self.lstm_cells = lstm_cells
        self.dense_layers = dense_layers
        self.attn_dim = attn_dim
        self.se_reduction = se_reduction
        self.include_null = include_null
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def _class_list(self):
        return STEPS + ((NULL_LABEL,) if self.include_null else ())

    def _encode(self, y):
        lookup = {c: i for i, c in enumerate(self.classes_)}
        return [np.array([lookup.get(int(v), -1) for v in labels], dtype=np.int64) for labels in y]

    def fit(self, X, y):
        X, y = check_sequences(X, y)
        self.classes_ = np.array(self._class_list())
        spec = ModelSpec(
            conv_layers=tuple(self.conv_layers), se_reduction=self.se_reduction,
            lstm_cells=self.lstm_cells, dense_layers=tuple(self.dense_layers),
            num_classes=len(self.classes_), feature_dim=X[0].shape[1], attn_dim=self.attn_dim,
        )
        self.params_ = train(spec, X, self._encode(y), lr=self.lr, epochs=self.epochs,
                             seed=self.random_state, batch_size=self.batch_size,
                             classes=tuple(int(c) for c in self.classes_))
        self.n_features_in_ = spec.feature_dim
        return self

    @classmethod
    def from_params(cls, params):
        """Wrap already-trained (e.g. loaded or pruned) parameters."""
        spec = params.spec
        est = cls(conv_layers=spec.conv_layers, lstm_cells=spec.lstm_cells,
                  dense_layers=spec.dense_layers, attn_dim=spec.attn_dim,
                  se_reduction=spec.se_reduction, include_null=NULL_LABEL in params.classes)
        est.classes_ = np.array(params.classes)
        est.params_ = params
        est.n_features_in_ = spec.feature_dim
        return est

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("HybridStepClassifier is not fitted yet")

    def predict_proba(self, X):
        self._check_fitted()
        X = check_sequences(X, n_features=self.n_features_in_)
        return predict_proba_sequences(self.params_, X)

    def predict(self, X):
        return [self.classes_[p.argmax(axis=1)] if len(p) else np.empty(0, dtype=np.int64)
                for p in self.predict_proba(X)]

    def score(self, X, y, sample_weight=None):
        """Window accuracy over windows whose label is one of ``classes_``."""
        correct = total = 0
        for pred, labels in zip(self.predict(X), y):
            labels = np.asarray(labels)
            m = np.isin(labels, self.classes_)
            correct += int((pred[m] == labels[m]).sum())
            total += int(m.sum())
        return correct / total if total else float("nan")
