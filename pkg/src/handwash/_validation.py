"""Small input checks shared by the estimators and the functional API."""

import numbers

import numpy as np


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_fraction(value, name, low=0.0, high=1.0, low_inclusive=True, high_inclusive=False):
    value = float(value)
    ok_low = value >= low if low_inclusive else value > low
    ok_high = value <= high if high_inclusive else value < high
    if not (ok_low and ok_high and np.isfinite(value)):
        lb = "[" if low_inclusive else "("
        hb = "]" if high_inclusive else ")"
        raise ValueError(f"{name} must lie in {lb}{low}, {high}{hb}, got {value!r}")
    return value


def check_shape(array, expected, name):
    """Raise a ValueError naming both shapes when ``array`` does not match."""
    actual = tuple(np.shape(array))
    expected = tuple(expected)
    if actual != expected:
        raise ValueError(f"{name}: expected shape {expected}, got {actual}")
    return array


def check_finite(array, name):
    if not np.all(np.isfinite(array)):
        raise FloatingPointError(f"numeric overflow in {name}")
    return array


def check_sequences(X, y=None, n_features=None):
    """Validate a ragged list of per-event feature sequences (and labels).

    Each element of ``X`` is a 2-D ``(n_windows, n_features)`` array. Labels,
    when given, are aligned 1-D integer arrays.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    X = [np.asarray(x, dtype=np.float64) for x in X]
    if len(X) == 0:
        raise ValueError("expected at least one sequence")
    for i, x in enumerate(X):
        if x.ndim != 2:
            raise ValueError(f"sequence {i}: expected 2-D array, got {x.ndim}-D")
        if n_features is not None and x.shape[1] != n_features:
            raise ValueError(
                f"sequence {i}: expected {n_features} features, got {x.shape[1]}"
            )
        check_finite(x, f"input sequence {i}")
    if y is None:
        return X
    if isinstance(y, np.ndarray) and y.ndim == 1 and len(X) == 1:
        y = [y]
    y = [np.asarray(v, dtype=np.int64) for v in y]
    if len(y) != len(X):
        raise ValueError(f"got {len(X)} sequences but {len(y)} label arrays")
    for i, (x, v) in enumerate(zip(X, y)):
        if v.shape != (x.shape[0],):
            raise ValueError(
                f"sequence {i}: labels shape {v.shape} does not align with {x.shape[0]} windows"
            )
    return X, y
