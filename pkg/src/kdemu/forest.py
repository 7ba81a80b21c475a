"""Regression random forest: bagged CART trees grown to purity by default,
with mean prediction, per-tree percentile intervals and impurity-based
feature importances.

Trees are stored as flat node arrays and grown by a compiled kernel; the
first call in a fresh environment pays a one-time JIT cost.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .data import DataError

_FOREST_FORMAT_VERSION = 1
_NO_DEPTH_LIMIT = 2**31


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 1000
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # None means all features
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise DataError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise DataError("max_depth must be >= 0")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise DataError("features_per_split must be >= 1")


@dataclass(frozen=True)
class TreeNode:
    """Recursive read-only view of one node; leaves have feature == -1."""

    feature: int
    threshold: float
    value: float
    count: int
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True)
class Tree:
    """One fitted CART tree as flat arrays indexed by node id (root = 0)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    importance_raw: np.ndarray  # summed SSE reduction per feature

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def root(self) -> TreeNode:
        def build(i: int) -> TreeNode:
            if self.feature[i] < 0:
                return TreeNode(-1, 0.0, float(self.value[i]), int(self.count[i]))
            return TreeNode(
                int(self.feature[i]),
                float(self.threshold[i]),
                float(self.value[i]),
                int(self.count[i]),
                build(int(self.left[i])),
                build(int(self.right[i])),
            )

        return build(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        return _predict_tree(self.feature, self.threshold, self.left, self.right, self.value, X)


def leaf_tree(value: float, count: int = 1) -> Tree:
    """Single-leaf tree predicting a constant; handy for tests and mocks."""
    return Tree(
        feature=np.array([-1], dtype=np.int64),
        threshold=np.zeros(1),
        left=np.array([-1], dtype=np.int64),
        right=np.array([-1], dtype=np.int64),
        value=np.array([float(value)]),
        count=np.array([count], dtype=np.int64),
        importance_raw=np.zeros(1),
    )


@njit(cache=True, nogil=True)
def _splitmix64(state: np.uint64) -> tuple[np.uint64, np.uint64]:
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, nogil=True)
def _grow_tree(X, y, rows, min_leaf, max_depth, n_sub, rng_state):
    """Greedy CART on X[rows]; returns flat node arrays and raw importances.

    At each node the split minimizing the summed child SSE is chosen;
    thresholds are midpoints between consecutive distinct sorted values.
    Equal gains resolve to the lowest feature index, then the smallest
    threshold: features are scanned in ascending index order and
    thresholds in ascending value order, with strict improvement required.
    """
    n = rows.shape[0]
    s = X.shape[1]
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    count = np.zeros(max_nodes, np.int64)
    imp = np.zeros(s)

    idx = rows.copy()
    stack_node = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int64)
    xcol = np.empty(n)
    tmp_left = np.empty(n, np.int64)
    tmp_right = np.empty(n, np.int64)
    feat_ids = np.arange(s)

    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        top -= 1
        cnt = hi - lo

        tot = 0.0
        tot2 = 0.0
        ymin = y[idx[lo]]
        ymax = ymin
        for t in range(lo, hi):
            v = y[idx[t]]
            tot += v
            tot2 += v * v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = tot / cnt
        count[node] = cnt

        if ymin == ymax or cnt < 2 * min_leaf or depth >= max_depth:
            continue
        sse = tot2 - tot * tot / cnt
        if sse <= 0.0:
            continue

        if n_sub < s:
            # Partial Fisher-Yates draw of n_sub distinct feature ids,
            # then ascending order so the tie-break stays deterministic.
            for f in range(s):
                feat_ids[f] = f
            for k in range(n_sub):
                rng_state, z = _splitmix64(rng_state)
                j = k + int(z % np.uint64(s - k))
                feat_ids[k], feat_ids[j] = feat_ids[j], feat_ids[k]
            feat_ids[:n_sub].sort()

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        for fpos in range(n_sub):
            f = feat_ids[fpos] if n_sub < s else fpos
            for t in range(lo, hi):
                xcol[t - lo] = X[idx[t], f]
            order = np.argsort(xcol[:cnt])
            cy = 0.0
            cy2 = 0.0
            for kpos in range(cnt - 1):
                v = y[idx[lo + order[kpos]]]
                cy += v
                cy2 += v * v
                xv = xcol[order[kpos]]
                xnext = xcol[order[kpos + 1]]
                if xv == xnext:
                    continue
                nl = kpos + 1
                nr = cnt - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                sl = cy2 - cy * cy / nl
                ry = tot - cy
                ry2 = tot2 - cy2
                sr = ry2 - ry * ry / nr
                gain = sse - sl - sr
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = 0.5 * (xv + xnext)
        if best_f < 0:
            continue

        nl = 0
        nr = 0
        for t in range(lo, hi):
            if X[idx[t], best_f] <= best_thr:
                tmp_left[nl] = idx[t]
                nl += 1
            else:
                tmp_right[nr] = idx[t]
                nr += 1
        for t in range(nl):
            idx[lo + t] = tmp_left[t]
        for t in range(nr):
            idx[lo + nl + t] = tmp_right[t]

        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        imp[best_f] += best_gain
        n_nodes += 2

        top += 1
        stack_node[top] = right[node]
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = left[node]
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        stack_depth[top] = depth + 1

    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        count[:n_nodes],
        imp,
    )


@njit(cache=True, nogil=True)
def _predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True)
def _predict_forest(feature, threshold, left, right, value, offsets, X):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.empty((n, n_trees))
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = base
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, t] = value[node]
    return out


def _validate_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataError(f"bad training shapes X{X.shape} y{y.shape}")
    if X.shape[0] < 1:
        raise DataError("training set is empty")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("training data contains non-finite values")
    return X, y


def fit_tree(X, y, cfg: ForestConfig | None = None, seed: int = 0) -> Tree:
    """Grow one CART tree on the full input (no bootstrap at this level)."""
    cfg = cfg or ForestConfig()
    X, y = _validate_xy(X, y)
    s = X.shape[1]
    n_sub = min(cfg.features_per_split or s, s)
    max_depth = cfg.max_depth if cfg.max_depth is not None else _NO_DEPTH_LIMIT
    rows = np.arange(X.shape[0], dtype=np.int64)
    parts = _grow_tree(
        X, y, rows, cfg.min_samples_leaf, max_depth, n_sub, np.uint64(seed)
    )
    return Tree(*parts)


@dataclass(frozen=True)
class Forest:
    """Fitted forest; node arrays of all trees concatenated back to back."""

    config: ForestConfig
    n_features: int
    n_rows: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    offsets: np.ndarray
    importances: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, t: int) -> Tree:
        lo, hi = self.offsets[t], self.offsets[t + 1]

        def rebased(a):
            return np.where(a[lo:hi] >= 0, a[lo:hi] - lo, -1)

        return Tree(
            feature=self.feature[lo:hi].copy(),
            threshold=self.threshold[lo:hi].copy(),
            left=rebased(self.left),
            right=rebased(self.right),
            value=self.value[lo:hi].copy(),
            count=self.count[lo:hi].copy(),
            importance_raw=np.zeros(self.n_features),
        )

    def per_tree_predictions(self, X) -> np.ndarray:
        """(n_points, n_trees) matrix of individual tree predictions."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        return _predict_forest(
            self.feature, self.threshold, self.left, self.right, self.value, self.offsets, X
        )


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    # Counter-keyed sub-stream: adding trees never reshuffles earlier ones.
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tree_index,)))


def fit_forest(X, y, cfg: ForestConfig | None = None) -> Forest:
    cfg = cfg or ForestConfig()
    X, y = _validate_xy(X, y)
    n, s = X.shape
    trees = []
    for t in range(cfg.n_trees):
        rng = _tree_rng(cfg.seed, t)
        if cfg.bootstrap:
            rows = rng.integers(0, n, size=n).astype(np.int64)
        else:
            rows = np.arange(n, dtype=np.int64)
        kernel_seed = np.uint64(rng.integers(0, 2**63))
        n_sub = min(cfg.features_per_split or s, s)
        max_depth = cfg.max_depth if cfg.max_depth is not None else _NO_DEPTH_LIMIT
        parts = _grow_tree(X, y, rows, cfg.min_samples_leaf, max_depth, n_sub, kernel_seed)
        trees.append(Tree(*parts))

    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    for t, tree in enumerate(trees):
        offsets[t + 1] = offsets[t] + tree.n_nodes
    total = offsets[-1]
    feature = np.empty(total, np.int64)
    threshold = np.empty(total)
    left = np.full(total, -1, np.int64)
    right = np.full(total, -1, np.int64)
    value = np.empty(total)
    cnt = np.empty(total, np.int64)
    for t, tree in enumerate(trees):
        lo, hi = offsets[t], offsets[t + 1]
        feature[lo:hi] = tree.feature
        threshold[lo:hi] = tree.threshold
        left[lo:hi] = np.where(tree.left >= 0, tree.left + lo, -1)
        right[lo:hi] = np.where(tree.right >= 0, tree.right + lo, -1)
        value[lo:hi] = tree.value
        cnt[lo:hi] = tree.count

    raw = np.mean([tree.importance_raw / n for tree in trees], axis=0)
    total_imp = raw.sum()
    importances = raw / total_imp if total_imp > 0 else np.zeros(s)

    return Forest(
        config=cfg,
        n_features=s,
        n_rows=n,
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
        value=value,
        count=cnt,
        offsets=offsets,
        importances=importances,
    )


def predict_mean(f: Forest, x) -> float:
    """Arithmetic mean of the individual tree predictions at one point."""
    return float(f.per_tree_predictions(np.atleast_2d(x))[0].mean())


def predict_mean_batch(f: Forest, X) -> np.ndarray:
    return f.per_tree_predictions(X).mean(axis=1)


def predict_interval(f: Forest, x, level: float = 0.95) -> tuple[float, float]:
    """Empirical per-tree prediction quantiles (linear interpolation rule)."""
    if not 0.0 < level < 1.0:
        raise DataError("level must lie in (0, 1)")
    preds = f.per_tree_predictions(np.atleast_2d(x))[0]
    lo, hi = np.quantile(preds, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def feature_importance(f: Forest) -> np.ndarray:
    """Mean decrease in impurity per feature, normalized to sum to one."""
    return f.importances.copy()


def save_forest(f: Forest, path) -> None:
    meta = {
        "format_version": _FOREST_FORMAT_VERSION,
        "kind": "forest",
        "config": asdict(f.config),
        "n_features": f.n_features,
        "n_rows": f.n_rows,
    }
    np.savez_compressed(
        path,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        feature=f.feature,
        threshold=f.threshold,
        left=f.left,
        right=f.right,
        value=f.value,
        count=f.count,
        offsets=f.offsets,
        importances=f.importances,
    )


def load_forest(path) -> Forest:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("kind") != "forest" or meta.get("format_version") != _FOREST_FORMAT_VERSION:
            raise DataError(f"not a compatible forest file: {path}")
        return Forest(
            config=ForestConfig(**meta["config"]),
            n_features=int(meta["n_features"]),
            n_rows=int(meta["n_rows"]),
            feature=data["feature"],
            threshold=data["threshold"],
            left=data["left"],
            right=data["right"],
            value=data["value"],
            count=data["count"],
            offsets=data["offsets"],
            importances=data["importances"],
        )
