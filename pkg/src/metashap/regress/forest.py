"""CART regression trees and bootstrap-averaged forests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from metashap.errors import DomainError

LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    """Flat array tree; node 0 is the root, ``feature == LEAF`` marks leaves."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self):
        depths = np.zeros(len(self.feature), dtype=int)
        for node in range(len(self.feature)):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            internal = feat != LEAF
            if not internal.any():
                break
            r, nd = rows[internal], node[internal]
            go_left = X[r, feat[internal]] <= self.threshold[nd]
            node[internal] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            np.array(data["feature"], dtype=np.int64),
            np.array(data["threshold"], dtype=float),
            np.array(data["left"], dtype=np.int64),
            np.array(data["right"], dtype=np.int64),
            np.array(data["value"], dtype=float),
        )


def _best_split(X, y):
    """Best (feature, threshold, left mask) minimising the children's summed squared error.

    Candidates are midpoints between consecutive distinct sorted values. Returns
    None when every feature is constant on the node.
    """
    n = len(y)
    yc = y - y.mean()
    n_left = np.arange(1, n, dtype=float)
    best_gain, best = -np.inf, None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        csum = np.cumsum(yc[order])[:-1]
        total = csum[-1] + yc[order[-1]]
        # minimising SSE_left + SSE_right == maximising S_l^2/n_l + S_r^2/n_r
        gain = csum**2 / n_left + (total - csum) ** 2 / (n - n_left)
        gain[~valid] = -np.inf
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            thr = 0.5 * (xs[k] + xs[k + 1])
            if thr >= xs[k + 1]:
                thr = xs[k]
            best_gain, best = gain[k], (f, thr)
    if best is None:
        return None
    f, thr = best
    return f, thr, X[:, f] <= thr


def build_tree(X, y, max_depth=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        pure = ys.min() == ys.max()
        value[node] = float(ys[0] if pure else ys.mean())
        if len(idx) < 2 or (max_depth is not None and depth >= max_depth) or pure:
            continue
        found = _best_split(X[idx], ys)
        if found is None:
            continue
        f, thr, mask = found
        feature[node] = f
        threshold[node] = float(thr)
        left[node] = new_node()
        right[node] = new_node()
        stack.append((right[node], idx[~mask], depth + 1))
        stack.append((left[node], idx[mask], depth + 1))
    return RegressionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )


def tree_seed(master_seed, t):
    return np.random.default_rng([int(master_seed), int(t)])


def _fit_one(X, y, max_depth, master_seed, t, bootstrap):
    if bootstrap:
        boot = tree_seed(master_seed, t).integers(0, len(y), size=len(y))
        return build_tree(X[boot], y[boot], max_depth)
    return build_tree(X, y, max_depth)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    max_depth: int | None
    n_estimators: int
    master_seed: int
    bootstrap: bool = True

    def tree_predictions(self, X):
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X):
        per_tree = self.tree_predictions(X)
        # where every tree agrees, return that value rather than a rounded mean
        return np.where(np.ptp(per_tree, axis=0) == 0, per_tree[0], per_tree.mean(axis=0))

    def to_dict(self):
        return {
            "kind": "forest",
            "max_depth": self.max_depth,
            "n_estimators": self.n_estimators,
            "master_seed": self.master_seed,
            "bootstrap": self.bootstrap,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            tuple(RegressionTree.from_dict(t) for t in data["trees"]),
            data["max_depth"],
            int(data["n_estimators"]),
            int(data["master_seed"]),
            bool(data.get("bootstrap", True)),
        )


def fit_forest(X, y, max_depth=10, n_estimators=100, master_seed=0, bootstrap=True, jobs=1):
    """Average of ``n_estimators`` trees, tree t grown on a bootstrap drawn from seed (master_seed, t).

    ``bootstrap=False`` grows every tree on the full data (diagnostic mode).
    """
    if max_depth is not None and max_depth < 1:
        raise DomainError(f"max_depth must be >= 1, got {max_depth}")
    if n_estimators < 1:
        raise DomainError(f"n_estimators must be >= 1, got {n_estimators}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if jobs == 1:
        trees = [_fit_one(X, y, max_depth, master_seed, t, bootstrap) for t in range(n_estimators)]
    else:
        trees = Parallel(n_jobs=jobs)(
            delayed(_fit_one)(X, y, max_depth, master_seed, t, bootstrap) for t in range(n_estimators)
        )
    return ForestModel(tuple(trees), max_depth, n_estimators, int(master_seed), bootstrap)
