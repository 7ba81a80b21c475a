"""Shape clustering of ln Kd training histories under dynamic time warping:
k-means with DBA centroids, plus a parameter-based rule that assigns unseen
samples to a cluster without seeing their trajectory.

The point cost is the squared value difference and the k-means objective is
the total within-cluster squared DTW distance, which DBA updates never
increase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import DataError, Dataset, ParameterVector, rescale
from .forest import ForestConfig, Tree, fit_tree

_CLUSTER_FORMAT_VERSION = 1

# Parameters the assignment rule may inspect: smsoh, pH and Ca.
RULE_PARAM_INDICES = (1, 2, 3)
RULE_TREE_DEPTH = 3


@dataclass(frozen=True)
class DtwConfig:
    """Optional Sakoe-Chiba band half-width in index units (None = full)."""

    window: int | None = None

    def __post_init__(self):
        if self.window is not None and self.window < 1:
            raise DataError("window must be >= 1 when present")


@njit(cache=True, nogil=True)
def _dtw_cost(a, b, window):
    n = a.shape[0]
    m = b.shape[0]
    acc = np.full((n, m), np.inf)
    acc[0, 0] = (a[0] - b[0]) ** 2
    for j in range(1, m):
        if window >= 0 and j > window:
            break
        acc[0, j] = acc[0, j - 1] + (a[0] - b[j]) ** 2
    for i in range(1, n):
        if window < 0 or i <= window:
            acc[i, 0] = acc[i - 1, 0] + (a[i] - b[0]) ** 2
        jlo = 1 if window < 0 else max(1, i - window)
        jhi = m if window < 0 else min(m, i + window + 1)
        for j in range(jlo, jhi):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = best + (a[i] - b[j]) ** 2
    return acc


@njit(cache=True, nogil=True)
def _dtw_path(acc):
    """Optimal warping path by traceback; ties prefer the diagonal step."""
    n, m = acc.shape
    path_i = np.empty(n + m, np.int64)
    path_j = np.empty(n + m, np.int64)
    i = n - 1
    j = m - 1
    k = 0
    path_i[k] = i
    path_j[k] = j
    k += 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            up = acc[i - 1, j]
            left = acc[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path_i[k] = i
        path_j[k] = j
        k += 1
    return path_i[:k][::-1].copy(), path_j[:k][::-1].copy()


def _as_series(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise DataError("series must be nonempty 1-d arrays")
    return a


def _window_arg(a, b, cfg: DtwConfig | None) -> int:
    if cfg is None or cfg.window is None:
        return -1
    if cfg.window >= max(len(a), len(b)):
        raise DataError("window must be smaller than the series length")
    if abs(len(a) - len(b)) > cfg.window:
        raise DataError("length mismatch exceeds the warping window")
    return cfg.window


def dtw_distance(a, b, cfg: DtwConfig | None = None) -> float:
    """Minimal cumulative squared point cost over monotone warping paths,
    square-rooted. Symmetric; zero iff an exact warp exists."""
    a, b = _as_series(a), _as_series(b)
    acc = _dtw_cost(a, b, _window_arg(a, b, cfg))
    return float(np.sqrt(acc[-1, -1]))


def dtw_squared(a, b, cfg: DtwConfig | None = None) -> float:
    a, b = _as_series(a), _as_series(b)
    return float(_dtw_cost(a, b, _window_arg(a, b, cfg))[-1, -1])


def dtw_path(a, b, cfg: DtwConfig | None = None):
    """Index pairs (i into a, j into b) of one optimal warping path."""
    a, b = _as_series(a), _as_series(b)
    acc = _dtw_cost(a, b, _window_arg(a, b, cfg))
    return _dtw_path(acc)


def dba_centroid(series: list, init, iters: int = 10, cfg: DtwConfig | None = None) -> np.ndarray:
    """DTW barycenter averaging.

    Each round aligns every series to the current centroid and replaces
    every centroid coordinate with the mean of the values mapped onto it.
    The total squared DTW cost to the centroid never increases.
    """
    if not series:
        raise DataError("need at least one series")
    centroid = _as_series(init).copy()
    mats = [_as_series(s) for s in series]
    for _ in range(iters):
        sums = np.zeros_like(centroid)
        counts = np.zeros(len(centroid), dtype=np.int64)
        for s in mats:
            acc = _dtw_cost(centroid, s, _window_arg(centroid, s, cfg))
            pi, pj = _dtw_path(acc)
            for i, j in zip(pi, pj):
                sums[i] += s[j]
                counts[i] += 1
        centroid = sums / counts
    return centroid


@dataclass(frozen=True)
class ClusterModel:
    """Trained shape clustering plus the test-time assignment rule.

    Centroids live in the standardized ln Kd space used for clustering
    (dataset-wide zero mean, unit variance). Assignment of unseen samples
    uses only the rescaled (smsoh, pH, Ca) parameters via a depth-limited
    regression tree on the training labels.
    """

    k: int
    centroids: np.ndarray
    memberships: tuple[int, ...]
    rule: Tree
    standardize_mean: float
    standardize_std: float
    objective: float
    objective_history: tuple[float, ...]

    def __post_init__(self):
        if self.centroids.shape[0] != self.k:
            raise DataError("need one centroid per cluster")
        counts = np.bincount(np.array(self.memberships), minlength=self.k)
        if self.memberships and np.any(counts == 0):
            raise DataError("every cluster must be nonempty")

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(np.array(self.memberships), minlength=self.k)


def _standardize(series_matrix: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(series_matrix.mean())
    std = float(series_matrix.std())
    if std == 0.0:
        std = 1.0
    return (series_matrix - mean) / std, mean, std


def _rule_features(params_matrix: np.ndarray) -> np.ndarray:
    return params_matrix[:, RULE_PARAM_INDICES]


def _fit_rule(features: np.ndarray, labels: np.ndarray) -> Tree:
    cfg = ForestConfig(n_trees=1, max_depth=RULE_TREE_DEPTH, bootstrap=False)
    return fit_tree(features, labels.astype(np.float64), cfg)


def _rule_predict(rule: Tree, features: np.ndarray, k: int) -> np.ndarray:
    raw = rule.predict(np.atleast_2d(features))
    return np.clip(np.rint(raw), 0, k - 1).astype(np.int64)


def dtw_kmeans(
    ds: Dataset,
    k: int,
    cfg: DtwConfig | None = None,
    seed: int = 0,
    restarts: int = 5,
    dba_iters: int = 10,
    max_iter: int = 50,
) -> ClusterModel:
    """Lloyd-style k-means on standardized training ln Kd series under DTW.

    Centroids start as k distinct training series drawn uniformly at
    random; the best of `restarts` runs by total within-cluster squared
    DTW cost wins. A cluster that empties is re-seeded with the series
    farthest from its assigned centroid. Afterwards the parameter rule is
    fitted on the training labels.
    """
    train = ds.train_samples()
    n = len(train)
    if k < 1:
        raise DataError("k must be >= 1")
    if n < k:
        raise DataError(f"training set has {n} samples, need at least k={k}")
    raw = np.array([t.ln_kd for t in train])
    series, mean, std = _standardize(raw)
    rng = np.random.default_rng(seed)

    best = None
    for _ in range(max(1, restarts)):
        init_idx = rng.choice(n, size=k, replace=False)
        centroids = series[init_idx].copy()
        labels = np.full(n, -1, dtype=np.int64)
        history: list[float] = []
        for _ in range(max_iter):
            dists = np.empty((n, k))
            for i in range(n):
                for c in range(k):
                    dists[i, c] = _dtw_cost(
                        centroids[c], series[i], _window_arg(centroids[c], series[i], cfg)
                    )[-1, -1]
            new_labels = dists.argmin(axis=1)
            assigned = dists[np.arange(n), new_labels]
            for c in range(k):
                if not np.any(new_labels == c):
                    far = int(np.argmax(assigned))
                    new_labels[far] = c
                    centroids[c] = series[far]
                    assigned[far] = 0.0
            history.append(float(assigned.sum()))
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                members = [series[i] for i in range(n) if labels[i] == c]
                centroids[c] = dba_centroid(members, centroids[c], iters=dba_iters, cfg=cfg)
        objective = history[-1]
        if best is None or objective < best[0]:
            best = (objective, labels, centroids, tuple(history))

    objective, labels, centroids, history = best
    params = np.array([rescale(t.params).values for t in train])
    rule = _fit_rule(_rule_features(params), labels)
    return ClusterModel(
        k=k,
        centroids=centroids,
        memberships=tuple(int(v) for v in labels),
        rule=rule,
        standardize_mean=mean,
        standardize_std=std,
        objective=objective,
        objective_history=history,
    )


def assign_cluster(model: ClusterModel, p: ParameterVector) -> int:
    """Cluster label for unseen parameters; never looks at a trajectory."""
    features = rescale(p).values[list(RULE_PARAM_INDICES)]
    return int(_rule_predict(model.rule, features, model.k)[0])


def save_cluster_model(model: ClusterModel, path) -> None:
    meta = {
        "format_version": _CLUSTER_FORMAT_VERSION,
        "kind": "cluster_model",
        "k": model.k,
        "standardize_mean": model.standardize_mean,
        "standardize_std": model.standardize_std,
        "objective": model.objective,
        "objective_history": list(model.objective_history),
    }
    np.savez_compressed(
        path,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        centroids=model.centroids,
        memberships=np.array(model.memberships, dtype=np.int64),
        rule_feature=model.rule.feature,
        rule_threshold=model.rule.threshold,
        rule_left=model.rule.left,
        rule_right=model.rule.right,
        rule_value=model.rule.value,
        rule_count=model.rule.count,
    )


def load_cluster_model(path) -> ClusterModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("kind") != "cluster_model" or meta.get("format_version") != _CLUSTER_FORMAT_VERSION:
            raise DataError(f"not a compatible cluster model file: {path}")
        rule = Tree(
            feature=data["rule_feature"],
            threshold=data["rule_threshold"],
            left=data["rule_left"],
            right=data["rule_right"],
            value=data["rule_value"],
            count=data["rule_count"],
            importance_raw=np.zeros(len(RULE_PARAM_INDICES)),
        )
        return ClusterModel(
            k=int(meta["k"]),
            centroids=data["centroids"],
            memberships=tuple(int(v) for v in data["memberships"]),
            rule=rule,
            standardize_mean=float(meta["standardize_mean"]),
            standardize_std=float(meta["standardize_std"]),
            objective=float(meta["objective"]),
            objective_history=tuple(meta["objective_history"]),
        )
