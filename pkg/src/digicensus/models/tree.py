"""CART regression tree grown by variance reduction.

Splits are chosen exhaustively over midpoints between consecutive distinct
values.  Ties go to the lowest feature index, then the lowest threshold, so
growth is deterministic for a given random stream.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

LEAF = -1


def resolve_max_features(rule, p: int) -> int:
    """Number of features tried at each node for the named rule.

    ``None``/"all" uses every feature, "sqrt" and "log" use the floor of the
    square root and base-2 logarithm (at least one), an int is taken as is
    and a float in (0, 1] as a fraction.
    """
    if p == 0:
        return 0
    if rule is None or rule == "all":
        return p
    if rule == "sqrt":
        return max(1, int(math.sqrt(p)))
    if rule in ("log", "log2"):
        return max(1, int(math.log2(p)))
    if isinstance(rule, (int, np.integer)) and not isinstance(rule, bool):
        if rule < 1:
            raise ValueError("max_features must be >= 1")
        return min(int(rule), p)
    if isinstance(rule, float) and 0 < rule <= 1:
        return max(1, int(rule * p))
    raise ValueError(f"unsupported max_features {rule!r}")


class TreeArrays:
    """Flat node storage; ``feature == LEAF`` marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "n_samples")

    def __init__(self, feature, threshold, left, right, value, n_samples):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.node_count else 0

    def apply(self, X) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f != LEAF
            if not inner.any():
                return node
            r = rows[inner]
            n = node[inner]
            go_left = X[r, f[inner]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def _best_split(Xn, yn, feats):
    """Best (feature position, row position, gain) over the candidate columns."""
    n = len(yn)
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = (yn - yn.mean())[order]
    csum = np.cumsum(ys, axis=0)[:-1]
    total = csum[-1] + ys[-1] if n > 1 else ys[-1]
    n_left = np.arange(1, n, dtype=float)[:, None]
    gain = csum ** 2 / n_left + (total - csum) ** 2 / (n - n_left)
    valid = xs[1:] > xs[:-1]
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain.T))
    fpos, row = divmod(flat, n - 1)
    best = gain[row, fpos]
    if not np.isfinite(best):
        return None
    lo, hi = xs[row, fpos], xs[row + 1, fpos]
    threshold = lo + (hi - lo) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return fpos, threshold, best


def grow_tree(X, y, max_depth=None, max_features=None, min_samples_split=2, rng=None) -> TreeArrays:
    """Grow one tree on ``(X, y)``; ``rng`` is only consulted when subsampling features."""
    n, p = X.shape
    m = resolve_max_features(max_features, p)
    limit = math.inf if max_depth is None else int(max_depth)
    if limit < 0:
        raise ValueError("max_depth must be >= 0 or None")
    if m < p and rng is None:
        raise ValueError("feature subsampling requires an rng")
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[idx].mean()))
        count.append(len(idx))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= limit or len(idx) < max(2, min_samples_split) or m == 0:
            continue
        yn = y[idx]
        if np.all(yn == yn[0]):
            continue
        feats = np.arange(p) if m == p else np.sort(rng.choice(p, size=m, replace=False))
        found = _best_split(X[np.ix_(idx, feats)], yn, feats)
        if found is None:
            continue
        fpos, thr, gain = found
        if not gain > 0:
            continue
        f = int(feats[fpos])
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is grown first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return TreeArrays(feature, threshold, left, right, value, count)


class RegressionTree(RegressorMixin, BaseEstimator):
    """Single regression tree; ``max_depth=None`` grows until leaves are pure or hold one sample."""

    def __init__(self, max_depth=None, max_features=None, min_samples_split=2, random_state=0):
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True, ensure_min_features=0)
        rng = np.random.default_rng(self.random_state)
        self.tree_ = grow_tree(X, y, self.max_depth, self.max_features, self.min_samples_split, rng)
        return self

    def predict(self, X):
        check_is_fitted(self, "tree_")
        X = validate_data(self, X, reset=False, dtype=np.float64, ensure_min_features=0)
        return self.tree_.predict(X)
