"""Weighted CART regression trees.

The same tree type serves as the local surrogate and as the random-forest
building block.  Fitting greedily minimizes weighted squared error; split
thresholds sit at midpoints between consecutive distinct sorted values and
routing sends x left iff x[feature] <= threshold.  Ties between equally
good splits resolve to the lowest feature index, then the lowest
threshold, so a fit is reproducible across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, RandomStream

LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    """Growth limits.

    min_samples_leaf counts *weight*, not rows: a row with weight k is
    equivalent to k unit-weight copies, so integer-weighted fits match
    fits on the expanded multiset exactly.
    """

    max_depth: int = 6
    min_samples_leaf: float = 5.0
    min_weight_fraction_leaf: float = 0.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if not 0.0 <= self.min_weight_fraction_leaf < 1.0:
            raise ConfigError("min_weight_fraction_leaf must be in [0, 1)")


@dataclass
class TreeNode:
    """One node; feature == LEAF marks a leaf (threshold/left/right unused)."""

    feature: int
    threshold: float
    left: int
    right: int
    cover: float  # sum of sample weights routed here
    value: float  # weight-weighted mean of targets routed here

    @property
    def is_leaf(self) -> bool:
        return self.feature == LEAF


@dataclass
class DecisionTree:
    nodes: list[TreeNode]
    d: int
    params: TreeParams
    root: int = 0
    _arrays: tuple | None = field(default=None, repr=False, compare=False)

    def arrays(self) -> tuple[np.ndarray, ...]:
        """(feature, threshold, left, right, cover, value) as flat arrays."""
        if self._arrays is None:
            ns = self.nodes
            self._arrays = (
                np.array([n.feature for n in ns], dtype=np.intp),
                np.array([n.threshold for n in ns], dtype=float),
                np.array([n.left for n in ns], dtype=np.intp),
                np.array([n.right for n in ns], dtype=np.intp),
                np.array([n.cover for n in ns], dtype=float),
                np.array([n.value for n in ns], dtype=float),
            )
        return self._arrays

    @property
    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf)

    def depth(self) -> int:
        def walk(i: int) -> int:
            n = self.nodes[i]
            if n.is_leaf:
                return 0
            return 1 + max(walk(n.left), walk(n.right))

        return walk(self.root)

    def split_features(self) -> set[int]:
        return {n.feature for n in self.nodes if not n.is_leaf}

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "root": self.root,
            "params": {
                "max_depth": self.params.max_depth,
                "min_samples_leaf": self.params.min_samples_leaf,
                "min_weight_fraction_leaf": self.params.min_weight_fraction_leaf,
            },
            "nodes": [
                # leaf thresholds are NaN in memory; None keeps the JSON valid
                {"feature": n.feature, "threshold": None if n.is_leaf else n.threshold,
                 "left": n.left, "right": n.right, "cover": n.cover, "value": n.value}
                for n in self.nodes
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "DecisionTree":
        params = TreeParams(**data["params"])
        nodes = [TreeNode(int(n["feature"]),
                          float("nan") if n["threshold"] is None else float(n["threshold"]),
                          int(n["left"]), int(n["right"]), float(n["cover"]), float(n["value"]))
                 for n in data["nodes"]]
        return DecisionTree(nodes=nodes, d=int(data["d"]), params=params, root=int(data["root"]))


def _weighted_mean(y: np.ndarray, w: np.ndarray, wsum: float) -> float:
    # anchored at y[0] so a constant target yields that constant exactly
    y0 = y[0]
    return float(y0 + np.dot(w, y - y0) / wsum)


def _best_split(X, y_centered, w, idx, wsum, min_leaf_w, features):
    """Best (feature, threshold) by weighted-SSE gain over the given rows.

    Returns (gain, feature, threshold) or None.  Gain is the decrease in
    weighted SSE, computed in node-centered form so it is non-negative by
    construction.  All candidate features are scanned in one pass of
    column-wise sorts and cumulative sums; ties break to the lowest
    feature index, then the lowest threshold.
    """
    if idx.size < 2:
        return None
    cols = np.asarray(features, dtype=np.intp)
    Xn = X[np.ix_(idx, cols)]
    wn = w[idx]
    un = wn * y_centered
    total_s = float(un.sum())
    order = np.argsort(Xn, axis=0, kind="stable")
    xv = np.take_along_axis(Xn, order, axis=0)
    cw = np.cumsum(wn[order], axis=0)[:-1]
    cs = np.cumsum(un[order], axis=0)[:-1]
    ok = (xv[1:] > xv[:-1]) & (cw >= min_leaf_w) & (wsum - cw >= min_leaf_w)
    if not ok.any():
        return None
    sr = total_s - cs
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(ok, cs * cs / cw + sr * sr / (wsum - cw), -np.inf)
    pos = np.argmax(gain, axis=0)  # first max per column: lowest threshold wins
    col_gain = gain[pos, np.arange(cols.size)]
    jbest = int(np.argmax(col_gain))  # first max: lowest feature index wins
    if not col_gain[jbest] > 0.0:
        return None
    k = int(pos[jbest])
    lo, hi = xv[k, jbest], xv[k + 1, jbest]
    threshold = 0.5 * (lo + hi)
    if threshold >= hi:  # adjacent floats: keep right side non-empty
        threshold = lo
    return float(col_gain[jbest]), int(cols[jbest]), float(threshold)


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    params: TreeParams,
    *,
    _feature_rng: RandomStream | None = None,
    _mtry: int | None = None,
) -> DecisionTree:
    """Grow a weighted CART regression tree.

    Zero-weight rows have no effect on the fit.  Recursion stops at
    max_depth, at the leaf-weight minimums, at zero weighted variance, or
    when no split improves weighted SSE.  The private _feature_rng/_mtry
    hooks restrict each split search to a random feature subset (used by
    the random forest); without them the search is exhaustive.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or y.shape != w.shape:
        raise ValueError("X, y, w must be (n, d), (n,), (n,) with matching n")
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ValueError("X, y, w must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    live = np.nonzero(w > 0)[0]
    if live.size == 0:
        raise ValueError("all weights are zero")

    d = X.shape[1]
    total_w = float(w[live].sum())
    min_leaf_w = max(float(params.min_samples_leaf),
                     params.min_weight_fraction_leaf * total_w)
    nodes: list[TreeNode] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        wi = w[idx]
        wsum = float(wi.sum())
        value = _weighted_mean(y[idx], wi, wsum)
        node_id = len(nodes)
        nodes.append(TreeNode(LEAF, float("nan"), LEAF, LEAF, wsum, value))
        u = y[idx] - value
        sse = float(np.dot(wi, u * u))
        if depth >= params.max_depth or sse <= 0.0:
            return node_id
        if _mtry is not None and _mtry < d:
            features = np.sort(_feature_rng.choice(d, size=_mtry, replace=False))
        else:
            features = range(d)
        found = _best_split(X, u, w, idx, wsum, min_leaf_w, features)
        if found is None:
            return node_id
        _, feature, threshold = found
        go_left = X[idx, feature] <= threshold
        node = nodes[node_id]
        node.feature = feature
        node.threshold = threshold
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node_id

    grow(live, 0)
    return DecisionTree(nodes=nodes, d=d, params=params)


def predict_tree(tree: DecisionTree, x: np.ndarray) -> float:
    """Value of the unique leaf x reaches (<= goes left)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (tree.d,):
        raise ValueError(f"expected a row of length {tree.d}, got shape {x.shape}")
    node = tree.nodes[tree.root]
    while not node.is_leaf:
        node = tree.nodes[node.left if x[node.feature] <= node.threshold else node.right]
    return node.value


def predict_batch(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """Vectorized predict_tree over the rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != tree.d:
        raise ValueError(f"expected (n, {tree.d}) matrix, got shape {X.shape}")
    feature, threshold, left, right, _, value = tree.arrays()
    current = np.full(X.shape[0], tree.root, dtype=np.intp)
    active = feature[current] != LEAF
    while active.any():
        rows = np.nonzero(active)[0]
        nodes = current[rows]
        goes_left = X[rows, feature[nodes]] <= threshold[nodes]
        current[rows] = np.where(goes_left, left[nodes], right[nodes])
        active[rows] = feature[current[rows]] != LEAF
    return value[current]
