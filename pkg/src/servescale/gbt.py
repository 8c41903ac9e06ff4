"""Deterministic squared-loss gradient boosting with exact-split regression trees."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary tree. ``feature[i] == -1`` marks a leaf."""

    feature: tuple[int, ...]
    threshold: tuple[float, ...]
    left: tuple[int, ...]
    right: tuple[int, ...]
    value: tuple[float, ...]

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = feature[node]
            inner = f >= 0
            if not inner.any():
                break
            idx = rows[inner]
            go_left = X[idx, f[inner]] <= threshold[node[inner]]
            node[idx] = np.where(go_left, left[node[inner]], right[node[inner]])
        return np.asarray(self.value)[node]

    def to_dict(self) -> dict:
        return {
            "feature": list(self.feature),
            "threshold": list(self.threshold),
            "left": list(self.left),
            "right": list(self.right),
            "value": list(self.value),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(*(tuple(d[k]) for k in ("feature", "threshold", "left", "right", "value")))


def best_split(X: np.ndarray, r: np.ndarray, min_leaf: int = 1, orders=None):
    """Exact search over all thresholds of all features.

    Returns ``(gain, feature, threshold)`` or None when no split reduces the
    squared error. Thresholds sit midway between consecutive distinct values;
    ties in gain resolve to the lower feature index, then the lower threshold.
    ``orders`` optionally supplies a stable ascending sort of each column.
    """
    n = len(r)
    if n < 2 * min_leaf:
        return None
    total = r.sum()
    base = total * total / n
    n_left = np.arange(1, n)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable") if orders is None else orders[j]
        xs = X[order, j]
        cs = np.cumsum(r[order])[:-1]
        gain = cs * cs / n_left + (total - cs) ** 2 / (n - n_left) - base
        valid = xs[:-1] < xs[1:]
        if min_leaf > 1:
            valid &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        g = float(gain[i])
        if g <= 1e-12 * max(1.0, abs(base)):
            continue
        if best is None or g > best[0]:
            best = (g, j, 0.5 * (xs[i] + xs[i + 1]))
    return best


def fit_tree(X: np.ndarray, r: np.ndarray, max_depth: int, min_leaf: int = 1, orders=None):
    """Grow one regression tree on residuals ``r``.

    Returns the tree and its in-sample predictions. ``orders`` are global
    per-column stable sort orders; node subsets inherit them by filtering,
    which keeps the split search free of per-node sorting.
    """
    n, d = X.shape
    if orders is None:
        orders = [np.argsort(X[:, j], kind="stable") for j in range(d)]
    feature, threshold, left, right, value = [], [], [], [], []
    fitted = np.empty(n)

    def grow(rows, node_orders, depth):
        # rows: sorted global indices; node_orders[j]: rows ordered by column j
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        v = float(r[rows].mean())
        value.append(v)
        split = None
        if depth < max_depth:
            local = np.full(n, -1)
            local[rows] = np.arange(len(rows))
            split = best_split(X[rows], r[rows], min_leaf, [local[o] for o in node_orders])
        if split is None:
            fitted[rows] = v
            return node
        _, j, thr = split
        go_left = X[:, j] <= thr
        feature[node] = j
        threshold[node] = float(thr)
        lo = [o[go_left[o]] for o in node_orders]
        hi = [o[~go_left[o]] for o in node_orders]
        left[node] = grow(rows[go_left[rows]], lo, depth + 1)
        right[node] = grow(rows[~go_left[rows]], hi, depth + 1)
        return node

    grow(np.arange(n), orders, 0)
    tree = Tree(tuple(feature), tuple(threshold), tuple(left), tuple(right), tuple(value))
    return tree, fitted


@dataclass(frozen=True)
class BoostedTrees:
    """``base`` plus the shrunken tree sum; with ``offset_feature`` set, the
    starting score of each row is that feature instead of the constant base
    (the trees then model a correction to it)."""

    base: float
    learning_rate: float
    trees: tuple[Tree, ...]
    offset_feature: int | None = None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(len(X), self.base)
        if self.offset_feature is not None:
            out += X[:, self.offset_feature]
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "learning_rate": self.learning_rate,
            "trees": [t.to_dict() for t in self.trees],
            "offset_feature": self.offset_feature,
        }

    @classmethod
    def from_dict(cls, d) -> "BoostedTrees":
        return cls(d["base"], d["learning_rate"], tuple(Tree.from_dict(t) for t in d["trees"]),
                   d.get("offset_feature"))


def fit_boosted(X, y, n_rounds: int = 200, max_depth: int = 3, learning_rate: float = 0.1,
                min_leaf: int = 1, offset_feature: int | None = None) -> BoostedTrees:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    offset = X[:, offset_feature] if offset_feature is not None else np.zeros(len(y))
    base = float(np.mean(y - offset))
    pred = offset + base
    orders = [np.argsort(X[:, j], kind="stable") for j in range(X.shape[1])]
    trees = []
    for _ in range(n_rounds):
        tree, fitted = fit_tree(X, y - pred, max_depth, min_leaf, orders)
        trees.append(tree)
        pred += learning_rate * fitted
    return BoostedTrees(base, learning_rate, tuple(trees), offset_feature)
