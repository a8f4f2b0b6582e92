"""Isolation forest, written out so every detector is reproducible and serializable.

Trees are stored as flat preorder arrays. An internal node has
``split_dim >= 0`` and children ``left``/``right``; an external node has
``split_dim == -1`` and the number of training points that reached it in
``size``. Points go left when ``x[split_dim] < split_value``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, InvalidState

EULER_GAMMA = 0.5772156649


def c_factor(n):
    """Average unsuccessful-search path length of a BST over ``n`` points.

    ``c(n) = 2 H(n-1) - 2 (n-1) / n`` with ``H(i) = ln(i) + 0.5772156649``;
    ``c(0) = c(1) = 0``. Accepts scalars or arrays.
    """
    arr = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(arr)
    big = arr >= 2
    m = arr[big]
    out[big] = 2.0 * (np.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
    return float(out) if out.ndim == 0 else out


@dataclass
class IsolationTree:
    split_dim: np.ndarray    # int32, -1 marks an external node
    split_value: np.ndarray  # float32
    left: np.ndarray         # int32
    right: np.ndarray        # int32
    size: np.ndarray         # int32, training points at external nodes

    @property
    def n_nodes(self) -> int:
        return len(self.split_dim)

    def path_length(self, x: np.ndarray) -> np.ndarray:
        """Depth of the external node reached, plus ``c(size)`` credit for unresolved points."""
        node = np.zeros(len(x), dtype=np.int64)
        depth = np.zeros(len(x), dtype=np.float64)
        rows = np.arange(len(x))
        while True:
            dims = self.split_dim[node]
            active = dims >= 0
            if not active.any():
                break
            a = rows[active]
            n_a = node[active]
            go_left = x[a, dims[active]] < self.split_value[n_a]
            node[active] = np.where(go_left, self.left[n_a], self.right[n_a])
            depth[active] += 1.0
        return depth + c_factor(self.size[node])


def grow_tree(points: np.ndarray, rng: np.random.Generator, max_depth: int) -> IsolationTree:
    """Grow one isolation tree on ``points`` (already subsampled)."""
    split_dim, split_value, left, right, size = [], [], [], [], []

    def new_node():
        split_dim.append(-1)
        split_value.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(0)
        return len(split_dim) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        me = new_node()
        if depth >= max_depth or len(idx) <= 1:
            size[me] = len(idx)
            return me
        sub = points[idx]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if len(splittable) == 0:
            # every remaining point is identical
            size[me] = len(idx)
            return me
        dim = int(splittable[rng.integers(len(splittable))])
        value = _draw_split(rng, float(lo[dim]), float(hi[dim]))
        mask = sub[:, dim] < value
        split_dim[me] = dim
        split_value[me] = value
        left[me] = build(idx[mask], depth + 1)
        right[me] = build(idx[~mask], depth + 1)
        return me

    build(np.arange(len(points)), 0)
    return IsolationTree(
        np.asarray(split_dim, dtype=np.int32),
        np.asarray(split_value, dtype=np.float32),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(size, dtype=np.int32),
    )


def _draw_split(rng: np.random.Generator, lo: float, hi: float) -> np.float32:
    # split values are kept in float32 (the storage precision); redraw until strictly inside
    for _ in range(64):
        v = np.float32(lo + rng.random() * (hi - lo))
        if lo < v < hi:
            return v
    # lo and hi are adjacent float32 values: splitting at hi still separates them
    return np.float32(hi)


@dataclass
class IsolationForestModel:
    trees: list
    subsample: int
    contamination: float
    score_threshold: float
    n_features: int
    class_tag: int | None = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def max_depth(self) -> int:
        return int(math.ceil(math.log2(self.subsample)))


def fit(points, n_trees: int = 100, subsample: int = 256, contamination: float = 0.02,
        seed: int = 0, class_tag: int | None = None) -> IsolationForestModel:
    """Fit a forest and set its threshold at the (1 - contamination) training-score quantile."""
    x = np.asarray(points, dtype=np.float32)
    if x.ndim != 2:
        raise InvalidInput("points must be a (n, dims) array")
    if n_trees < 1:
        raise InvalidInput("n_trees must be >= 1")
    if subsample < 2:
        raise InvalidInput("subsample size must be >= 2")
    if len(x) < subsample:
        raise InvalidInput(f"{len(x)} points is fewer than the subsample size {subsample}")
    if not 0 < contamination < 0.5:
        raise InvalidInput("contamination must lie in (0, 0.5)")
    max_depth = int(math.ceil(math.log2(subsample)))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        idx = rng.choice(len(x), size=subsample, replace=False)
        trees.append(grow_tree(x[idx], rng, max_depth))
    model = IsolationForestModel(trees, subsample, contamination, float("nan"), x.shape[1], class_tag)
    scores = anomaly_score(model, x, _allow_unfitted=True)
    model.score_threshold = float(np.quantile(scores, 1.0 - contamination))
    return model


def mean_path_length(model: IsolationForestModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.n_features:
        raise InvalidInput(f"expected {model.n_features} features, got {x.shape[1]}")
    total = np.zeros(len(x))
    for tree in model.trees:
        total += tree.path_length(x)
    return total / model.n_trees


def score_from_path_length(mean_h, subsample: int):
    """``2 ** (-E[h] / c(subsample))``; exactly 0.5 when ``E[h] == c(subsample)``."""
    return np.power(2.0, -np.asarray(mean_h, dtype=np.float64) / c_factor(subsample))


def anomaly_score(model: IsolationForestModel, x, _allow_unfitted: bool = False):
    """Anomaly score in (0, 1), higher is more anomalous; scalar for one vector."""
    if not model.trees or (not _allow_unfitted and np.isnan(model.score_threshold)):
        raise InvalidState("isolation forest is not fitted")
    single = np.asarray(x).ndim == 1
    s = score_from_path_length(mean_path_length(model, x), model.subsample)
    return float(s[0]) if single else s


def is_outlier(model: IsolationForestModel, x):
    """``(flag, score)``; a score equal to the threshold counts as an inlier."""
    s = anomaly_score(model, x)
    return s > model.score_threshold, s
