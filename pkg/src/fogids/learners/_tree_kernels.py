"""Compiled inner loops for CART growing and traversal.

A node owns the same contiguous slice ``[start, end)`` of every row of
``order``; row ``f`` of ``order`` lists the node's sample ids sorted by
feature ``f``. Splitting a node stably partitions every row of that slice,
so sortedness is kept without re-sorting.
"""

import numpy as np
from numba import njit

GINI = 0
ENTROPY = 1


@njit(cache=True)
def _impurity_sum(counts, total, criterion):
    # total * impurity(counts / total)
    if total <= 0.0:
        return 0.0
    if criterion == GINI:
        sq = 0.0
        for c in counts:
            sq += c * c
        return total - sq / total
    acc = 0.0
    for c in counts:
        if c > 0.0:
            acc -= c * np.log2(c / total)
    return acc


@njit(cache=True)
def best_split(X, y, w, order, start, end, features, n_classes, criterion):
    """Best (feature, threshold) among ``features`` for the node slice.

    Features are visited in the given order and thresholds in ascending
    order; a candidate replaces the incumbent only if strictly better, so
    passing ``features`` sorted gives lowest-index, lowest-threshold ties.
    Returns (feature, threshold, child_impurity_sum); feature is -1 if no
    feature has two distinct values in the node.
    """
    total = np.zeros(n_classes)
    f0 = features[0]
    for p in range(start, end):
        s = order[f0, p]
        total[y[s]] += w[s]
    w_total = total.sum()

    best_f = -1
    best_t = 0.0
    best_score = np.inf
    left = np.zeros(n_classes)
    right = np.zeros(n_classes)
    for fi in range(features.shape[0]):
        f = features[fi]
        lo = X[order[f, start], f]
        hi = X[order[f, end - 1], f]
        if lo == hi:
            continue
        left[:] = 0.0
        w_left = 0.0
        for p in range(start, end - 1):
            s = order[f, p]
            left[y[s]] += w[s]
            w_left += w[s]
            a = X[s, f]
            b = X[order[f, p + 1], f]
            if b <= a:
                continue
            for k in range(n_classes):
                right[k] = total[k] - left[k]
            w_right = w_total - w_left
            score = _impurity_sum(left, w_left, criterion) + _impurity_sum(right, w_right, criterion)
            if score < best_score:
                best_score = score
                best_f = f
                t = a + (b - a) / 2.0
                if t >= b:
                    t = a
                best_t = t
    return best_f, best_t, best_score


@njit(cache=True)
def partition(X, order, start, end, feature, threshold, goes_left, buf):
    """Stably split every row of the node slice; return the left size."""
    n_left = 0
    for p in range(start, end):
        s = order[feature, p]
        g = X[s, feature] <= threshold
        goes_left[s] = g
        if g:
            n_left += 1
    d = order.shape[0]
    for f in range(d):
        li = start
        ri = 0
        for p in range(start, end):
            s = order[f, p]
            if goes_left[s]:
                order[f, li] = s
                li += 1
            else:
                buf[ri] = s
                ri += 1
        for q in range(ri):
            order[f, li + q] = buf[q]
    return n_left


@njit(cache=True)
def node_histogram(y, w, order, start, end, n_classes):
    h = np.zeros(n_classes)
    for p in range(start, end):
        s = order[0, p]
        h[y[s]] += w[s]
    return h


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by every row of X (go left iff value <= threshold)."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out
