import numpy as np

from ..errors import SchemaError

DIST_TOL = 1e-9


def argmax_first(scores) -> int:
    """Index of the maximum, lowest index on ties."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ValueError("cannot take argmax of an empty score vector")
    return int(np.argmax(scores))  # numpy returns the first occurrence


def normalize_rows(h: np.ndarray) -> np.ndarray:
    s = h.sum(axis=-1, keepdims=True)
    return h / s


def check_width(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise SchemaError(f"instance width {X.shape[1]} does not match model width {model.n_features}")
    return X


def is_distribution(p, tol=DIST_TOL) -> bool:
    p = np.asarray(p)
    return bool(np.all(p >= 0) and np.all(p <= 1 + tol) and np.all(np.abs(p.sum(axis=-1) - 1) <= tol))
