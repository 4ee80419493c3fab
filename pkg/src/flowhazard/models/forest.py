"""Regression forest built on variance-reduction CART trees.

Split search is deterministic: candidate features are visited in
ascending index order and, within a feature, candidate thresholds in
ascending value order, so equal-gain ties resolve to the lowest feature
index and lowest threshold.  Per-tree randomness (bootstrap rows, feature
subsets) comes from streams derived as (seed, tree_index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..seeding import rng_from


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray    # int32
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    value: np.ndarray      # float64, leaf prediction


@dataclass(frozen=True)
class ForestState:
    trees: tuple[Tree, ...]


class _TreeBuilder:
    def __init__(self, X, y, max_depth, min_leaf, mtry, rng):
        self.X = X
        self.y = y
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, idx: np.ndarray) -> Tree:
        self._grow(idx, depth=0)
        return Tree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
        )

    def _grow(self, idx: np.ndarray, depth: int) -> int:
        node = self._new_node()
        y = self.y[idx]
        if (
            (self.max_depth is not None and depth >= self.max_depth)
            or idx.size < 2 * self.min_leaf
            or y.min() == y.max()
        ):
            self.value[node] = float(y.mean())
            return node

        split = self._best_split(idx, y)
        if split is None:
            self.value[node] = float(y.mean())
            return node

        feat, thr = split
        go_left = self.X[idx, feat] <= thr
        self.feature[node] = feat
        self.threshold[node] = thr
        self.left[node] = self._grow(idx[go_left], depth + 1)
        self.right[node] = self._grow(idx[~go_left], depth + 1)
        return node

    def _candidate_features(self) -> np.ndarray:
        n_features = self.X.shape[1]
        if self.mtry >= n_features:
            return np.arange(n_features)
        picked = self.rng.choice(n_features, size=self.mtry, replace=False)
        return np.sort(picked)

    def _best_split(self, idx: np.ndarray, y: np.ndarray):
        n = idx.size
        total1 = y.sum()
        total2 = (y * y).sum()
        parent_sse = total2 - total1 * total1 / n
        best_gain = 0.0
        best = None
        for feat in self._candidate_features():
            x = self.X[idx, feat]
            order = np.argsort(x, kind="stable")
            sx = x[order]
            sy = y[order]
            c1 = np.cumsum(sy)[:-1]
            c2 = np.cumsum(sy * sy)[:-1]
            k = np.arange(1, n)
            valid = sx[:-1] < sx[1:]
            valid &= (k >= self.min_leaf) & (n - k >= self.min_leaf)
            if not valid.any():
                continue
            left_sse = c2 - c1 * c1 / k
            right_sse = (total2 - c2) - (total1 - c1) ** 2 / (n - k)
            gain = np.where(valid, parent_sse - left_sse - right_sse, -np.inf)
            pos = int(np.argmax(gain))  # first max = lowest threshold
            if gain[pos] > best_gain:
                best_gain = float(gain[pos])
                best = (int(feat), float((sx[pos] + sx[pos + 1]) / 2.0))
        return best


def train_forest(X: np.ndarray, y: np.ndarray, params, seed_key) -> ForestState:
    n, n_features = X.shape
    mtry = params.features_per_split
    if mtry is None:
        mtry = math.ceil(n_features / 3)
    mtry = min(mtry, n_features)
    trees = []
    for i in range(params.n_trees):
        rng = rng_from(*seed_key, i)
        if params.bootstrap:
            idx = np.sort(rng.integers(0, n, size=n))
        else:
            idx = np.arange(n)
        builder = _TreeBuilder(
            X, y, params.max_depth, params.min_leaf, mtry, rng
        )
        trees.append(builder.build(idx))
    return ForestState(trees=tuple(trees))


def tree_apply(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Leaf value for every row, by vectorized traversal."""
    node = np.zeros(X.shape[0], dtype=np.int32)
    while True:
        feat = tree.feature[node]
        active = feat >= 0
        if not active.any():
            break
        rows = np.flatnonzero(active)
        f = feat[rows]
        thr = tree.threshold[node[rows]]
        go_left = X[rows, f] <= thr
        node[rows] = np.where(
            go_left, tree.left[node[rows]], tree.right[node[rows]]
        )
    return tree.value[node]


def forest_predict(state: ForestState, X: np.ndarray) -> np.ndarray:
    out = np.zeros(X.shape[0])
    for tree in state.trees:
        out += tree_apply(tree, X)
    return out / len(state.trees)
