"""Unsupervised anomaly-detection baselines: isolation forest and local
outlier factor, implemented from scratch so their scores can be checked
against brute-force replays.

Isolation forest RNG contract (needed to replay a forest exactly): one
``numpy.random.default_rng(seed)`` stream drives everything. Per tree, the
subsample is drawn first via ``rng.choice(n, size, replace=False)``; nodes are
then built depth-first, left child before right, drawing at each internal
node the feature via ``rng.integers(0, d)`` and then the split via
``rng.uniform(lo, hi)``. Nodes become leaves at the height limit, on
single-point data, or when the chosen feature is constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .evaluation import pr_curve

EULER_GAMMA = 0.5772156649015329


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length c(n) in a binary search tree."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    harmonic = math.log(n - 1) + EULER_GAMMA
    return 2.0 * harmonic - 2.0 * (n - 1) / n


@dataclass
class _Node:
    size: int
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


class IsolationForest:
    """Random partition forest; the anomaly score is 2^(-E[path] / c(subsample))."""

    def __init__(self, tree_count: int = 100, subsample_size: int | None = None, seed: int = 0):
        if tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        self.tree_count = tree_count
        self.subsample_size = subsample_size
        self.seed = seed
        self.trees: list[_Node] = []
        self._effective_subsample = 0

    def fit(self, data: np.ndarray) -> "IsolationForest":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or len(data) == 0:
            raise ValueError("data must be a nonempty 2-D array")
        n = len(data)
        if self.subsample_size is None:
            psi = min(256, n)
        else:
            if self.subsample_size > n:
                raise ValueError(f"subsample_size {self.subsample_size} exceeds data size {n}")
            psi = self.subsample_size
        if psi < 1:
            raise ValueError("subsample_size must be >= 1")
        self._effective_subsample = psi
        height_limit = max(1, math.ceil(math.log2(psi))) if psi > 1 else 0
        rng = np.random.default_rng(self.seed)
        self.trees = []
        for _ in range(self.tree_count):
            idx = rng.choice(n, size=psi, replace=False)
            self.trees.append(self._build(data[idx], 0, height_limit, rng))
        return self

    def _build(self, x: np.ndarray, depth: int, limit: int, rng: np.random.Generator) -> _Node:
        n = len(x)
        if depth >= limit or n <= 1:
            return _Node(size=n)
        feature = int(rng.integers(0, x.shape[1]))
        col = x[:, feature]
        lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            return _Node(size=n)
        threshold = float(rng.uniform(lo, hi))
        mask = col < threshold
        return _Node(
            size=n,
            feature=feature,
            threshold=threshold,
            left=self._build(x[mask], depth + 1, limit, rng),
            right=self._build(x[~mask], depth + 1, limit, rng),
        )

    def _paths(self, node: _Node, x: np.ndarray, idx: np.ndarray, depth: int, out: np.ndarray) -> None:
        if node.is_leaf:
            out[idx] = depth + average_path_length(node.size)
            return
        mask = x[idx, node.feature] < node.threshold
        self._paths(node.left, x, idx[mask], depth + 1, out)
        self._paths(node.right, x, idx[~mask], depth + 1, out)

    def score(self, points: np.ndarray) -> np.ndarray:
        """Anomaly scores in (0, 1]; higher = easier to isolate."""
        if not self.trees:
            raise RuntimeError("fit must be called before score")
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        total = np.zeros(len(points))
        idx = np.arange(len(points))
        for tree in self.trees:
            paths = np.empty(len(points))
            self._paths(tree, points, idx, 0, paths)
            total += paths
        denom = average_path_length(self._effective_subsample)
        if denom == 0.0:
            # Degenerate one-point subsample: every point isolates immediately.
            return np.ones(len(points))
        return np.power(2.0, -(total / self.tree_count) / denom)


def if_fit(
    data: np.ndarray, tree_count: int = 100, subsample_size: int | None = None, seed: int = 0
) -> IsolationForest:
    return IsolationForest(tree_count=tree_count, subsample_size=subsample_size, seed=seed).fit(data)


def if_score(forest: IsolationForest, point: np.ndarray) -> float | np.ndarray:
    scores = forest.score(point)
    return float(scores[0]) if np.asarray(point).ndim == 1 else scores


class LocalOutlierFactor:
    """Canonical LOF against a fixed reference set.

    Reference densities are computed with self excluded; queries are scored
    against all references. Tied distances are broken toward the lower
    reference index so results are reproducible.
    """

    def __init__(self, k: int = 20, chunk_size: int = 512):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.chunk_size = chunk_size
        self.refs: np.ndarray | None = None
        self._k_dist: np.ndarray | None = None
        self._lrd: np.ndarray | None = None

    def fit(self, refs: np.ndarray) -> "LocalOutlierFactor":
        refs = np.asarray(refs, dtype=np.float64)
        if refs.ndim != 2:
            raise ValueError("reference points must form a 2-D array")
        if self.k >= len(refs):
            raise ValueError(f"k={self.k} must be smaller than the reference count {len(refs)}")
        self.refs = refs
        n = len(refs)
        k_dist = np.empty(n)
        neighbors = np.empty((n, self.k), dtype=np.int64)
        for start in range(0, n, self.chunk_size):
            block = refs[start : start + self.chunk_size]
            d = self._distances(block, refs)
            for row in range(len(block)):
                d[row, start + row] = np.inf  # exclude self
            idx = self._k_smallest(d)
            neighbors[start : start + len(block)] = idx
            k_dist[start : start + len(block)] = np.take_along_axis(d, idx, axis=1)[:, -1]
        # Reachability: reach(a, b) = max(k_dist(b), d(a, b)).
        lrd = np.empty(n)
        for start in range(0, n, self.chunk_size):
            block_idx = neighbors[start : start + self.chunk_size]
            block = refs[start : start + self.chunk_size]
            d = self._distances(block, refs)
            dn = np.take_along_axis(d, block_idx, axis=1)
            reach = np.maximum(k_dist[block_idx], dn)
            mean_reach = reach.mean(axis=1)
            with np.errstate(divide="ignore"):
                lrd[start : start + len(block)] = np.where(
                    mean_reach > 0, 1.0 / mean_reach, np.inf
                )
        self._k_dist = k_dist
        self._lrd = lrd
        self._neighbors = neighbors
        return self

    @staticmethod
    def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
        return np.sqrt(np.maximum(d2, 0.0))

    def _k_smallest(self, d: np.ndarray) -> np.ndarray:
        """Indices of the k nearest columns per row, ties toward lower index."""
        part = np.argpartition(d, self.k - 1, axis=1)[:, : self.k]
        part_d = np.take_along_axis(d, part, axis=1)
        order = np.lexsort((part, part_d), axis=1)
        return np.take_along_axis(part, order, axis=1)

    def score(self, points: np.ndarray) -> np.ndarray:
        """LOF values: about 1 for inliers, well above 1 for outliers."""
        if self.refs is None:
            raise RuntimeError("fit must be called before score")
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty(len(points))
        for start in range(0, len(points), self.chunk_size):
            block = points[start : start + self.chunk_size]
            d = self._distances(block, self.refs)
            idx = self._k_smallest(d)
            dn = np.take_along_axis(d, idx, axis=1)
            reach = np.maximum(self._k_dist[idx], dn)
            mean_reach = reach.mean(axis=1)
            with np.errstate(divide="ignore"):
                lrd_q = np.where(mean_reach > 0, 1.0 / mean_reach, np.inf)
            lrd_n = self._lrd[idx].mean(axis=1)
            block_scores = np.empty(len(block))
            for i in range(len(block)):
                if math.isinf(lrd_q[i]):
                    # Query density saturated (duplicates): equal densities score 1.
                    block_scores[i] = 1.0 if math.isinf(lrd_n[i]) else 0.0
                else:
                    block_scores[i] = lrd_n[i] / lrd_q[i]
            out[start : start + len(block)] = block_scores
        return out


def lof_score(model: LocalOutlierFactor, point: np.ndarray) -> float | np.ndarray:
    scores = model.score(point)
    return float(scores[0]) if np.asarray(point).ndim == 1 else scores


def baseline_evaluate(scores: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    """Best-threshold F1 (uniform sweep over score midpoints) and AUPRC."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise ValueError("both classes must be present")
    from .anomaly import best_f1_threshold  # local import to avoid a cycle

    theta, f1, precision, recall = best_f1_threshold(scores, labels)
    _, auprc = pr_curve(scores, labels)
    return {
        "f1": f1,
        "precision": precision,
        "recall": recall,
        "threshold": theta,
        "auprc": auprc,
    }
