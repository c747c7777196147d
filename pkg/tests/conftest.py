"""Shared builders: random trees with consistent covers and synthetic data."""
from __future__ import annotations

import numpy as np
import pytest

from limase.core import Dataset, RandomStream, Task, compute_feature_meta
from limase.trees import LEAF, DecisionTree, TreeNode, TreeParams


def random_tree(rng: RandomStream, d: int, max_depth: int,
                *, allowed_features: list[int] | None = None) -> DecisionTree:
    """A random tree whose internal covers/values follow the leaf recurrence.

    Every internal node's cover is the sum of its children's and its value
    their cover-weighted mean, the same bookkeeping a fitted tree carries;
    the explainers rely on that consistency.
    """
    features = list(range(d)) if allowed_features is None else list(allowed_features)
    nodes: list[TreeNode] = []

    def grow(depth: int) -> int:
        node_id = len(nodes)
        # Always split at the root (depth 0) so trees are non-trivial.
        split = depth < max_depth and (depth == 0 or rng.uniform(1)[0] < 0.7)
        if not split:
            cover = 0.5 + 9.5 * rng.uniform(1)[0]
            value = 3.0 * rng.normal(1)[0]
            nodes.append(TreeNode(LEAF, float("nan"), LEAF, LEAF, float(cover), float(value)))
            return node_id
        feature = features[int(rng.integers(0, len(features), 1)[0])]
        threshold = float(rng.normal(1)[0])
        nodes.append(TreeNode(feature, threshold, -1, -1, 0.0, 0.0))
        left = grow(depth + 1)
        right = grow(depth + 1)
        node = nodes[node_id]
        node.left, node.right = left, right
        cl, cr = nodes[left].cover, nodes[right].cover
        node.cover = cl + cr
        node.value = (cl * nodes[left].value + cr * nodes[right].value) / node.cover
        return node_id

    grow(0)
    return DecisionTree(nodes=nodes, d=d, params=TreeParams(max_depth=max(1, max_depth)))


def shift_subtree(tree: DecisionTree, root_of_subtree: int, c: float) -> DecisionTree:
    """Copy of the tree with c added to every leaf under the given node.

    Internal values are rebuilt bottom-up so the cover/value recurrence
    still holds.
    """
    nodes = [TreeNode(n.feature, n.threshold, n.left, n.right, n.cover, n.value)
             for n in tree.nodes]

    def shift(i: int) -> None:
        n = nodes[i]
        if n.is_leaf:
            n.value += c
            return
        shift(n.left)
        shift(n.right)

    def rebuild(i: int) -> None:
        n = nodes[i]
        if n.is_leaf:
            return
        rebuild(n.left)
        rebuild(n.right)
        cl, cr = nodes[n.left].cover, nodes[n.right].cover
        n.value = (cl * nodes[n.left].value + cr * nodes[n.right].value) / (cl + cr)

    shift(root_of_subtree)
    rebuild(tree.root)
    return DecisionTree(nodes=nodes, d=tree.d, params=tree.params)


def make_regression_dataset(seed: int, n: int, d: int, *, noise: float = 0.1) -> Dataset:
    """Gaussian features, a linear target with one interaction, mild noise."""
    rng = RandomStream(seed)
    scales = 0.5 + 2.0 * rng.uniform(d)
    X = rng.normal_matrix(n, d) * scales
    w = rng.normal(d)
    y = X @ w + noise * rng.normal(n)
    if d >= 2:
        y = y + 0.5 * X[:, 0] * X[:, 1]
    names = [f"f{j}" for j in range(d)]
    ds = Dataset(compute_feature_meta(X, names), X, y, Task.regression())
    ds.validate()
    return ds


def make_classification_dataset(seed: int, n: int, d: int, k: int = 3) -> Dataset:
    """Separable classes: label = argmax over k random linear scores."""
    rng = RandomStream(seed)
    X = rng.normal_matrix(n, d)
    W = rng.normal_matrix(d, k)
    labels = np.argmax(X @ W, axis=1).astype(float)
    names = [f"f{j}" for j in range(d)]
    ds = Dataset(compute_feature_meta(X, names), X, labels, Task.classification(k))
    ds.validate()
    return ds


@pytest.fixture
def reg_data() -> Dataset:
    return make_regression_dataset(11, 300, 5)


@pytest.fixture
def cls_data() -> Dataset:
    return make_classification_dataset(13, 300, 5, 3)
