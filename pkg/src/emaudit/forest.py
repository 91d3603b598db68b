"""Balanced random forest built from scratch.

Each tree trains on a balanced bootstrap (min-class-count rows drawn with
replacement from every class), splits on Gini impurity over sqrt(d) random
candidate features per node, and stores leaf class counts for posterior
averaging.  Candidate thresholds are midpoints between consecutive sorted
unique values; equal gains resolve to the lower feature index, then the
lower threshold, which makes training bit-deterministic for a given seed.

The split search and traversal run as numba kernels with an inline
splitmix64 generator, so results do not depend on thread scheduling or
numpy RNG state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

_MAGIC = b"EMRF"
_VERSION = 1


@dataclass
class ForestParams:
    n_trees: int = 500
    max_depth: int = 15
    min_leaf: int = 2
    seed: int = 0
    max_features: int | None = None  # None: floor(sqrt(d)), at least 1

    def resolve_max_features(self, d: int) -> int:
        if self.max_features is not None:
            return min(self.max_features, d)
        return max(int(np.sqrt(d)), 1)


@njit(cache=True, inline="always")
def _splitmix64(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return z, state


@njit(cache=True)
def _build_tree(X, y, n_classes, max_depth, min_leaf, max_features, seed,
                feature_out, threshold_out, left_out, right_out, counts_out, importance):
    """Grow one tree; returns the number of nodes written."""
    n, d = X.shape
    idx = np.arange(n)
    # explicit stack of (node_id, start, end, depth) over a shared index buffer
    stack_node = np.empty(2 * n + 1, dtype=np.int64)
    stack_lo = np.empty(2 * n + 1, dtype=np.int64)
    stack_hi = np.empty(2 * n + 1, dtype=np.int64)
    stack_depth = np.empty(2 * n + 1, dtype=np.int64)
    rng = np.uint64(seed)
    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    feat_pool = np.empty(d, dtype=np.int64)
    cand = np.empty(max_features, dtype=np.int64)
    cnt_left = np.empty(n_classes, dtype=np.float64)
    cnt_total = np.empty(n_classes, dtype=np.float64)

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        top -= 1
        m = hi - lo

        for c in range(n_classes):
            cnt_total[c] = 0.0
        for i in range(lo, hi):
            cnt_total[y[idx[i]]] += 1.0
        for c in range(n_classes):
            counts_out[node, c] = cnt_total[c]

        sq = 0.0
        for c in range(n_classes):
            sq += cnt_total[c] * cnt_total[c]
        gini_node = 1.0 - sq / (m * m)

        is_leaf = depth >= max_depth or m < 2 * min_leaf or gini_node <= 0.0
        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        if not is_leaf:
            # sample max_features distinct candidates, then scan in ascending
            # index order so equal gains resolve to the lower feature
            for j in range(d):
                feat_pool[j] = j
            for j in range(max_features):
                r, rng = _splitmix64(rng)
                k = j + int(r % np.uint64(d - j))
                tmp = feat_pool[j]
                feat_pool[j] = feat_pool[k]
                feat_pool[k] = tmp
                cand[j] = feat_pool[j]
            cand[:max_features] = np.sort(cand[:max_features])

            for jj in range(max_features):
                f = cand[jj]
                vals = np.empty(m, dtype=np.float32)
                for i in range(m):
                    vals[i] = X[idx[lo + i], f]
                order = np.argsort(vals, kind="mergesort")
                for c in range(n_classes):
                    cnt_left[c] = 0.0
                nl = 0
                for i in range(m - 1):
                    row = idx[lo + order[i]]
                    cnt_left[y[row]] += 1.0
                    nl += 1
                    v0 = vals[order[i]]
                    v1 = vals[order[i + 1]]
                    if v1 <= v0:
                        continue
                    nr = m - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    sl = 0.0
                    sr = 0.0
                    for c in range(n_classes):
                        sl += cnt_left[c] * cnt_left[c]
                        cr = cnt_total[c] - cnt_left[c]
                        sr += cr * cr
                    gini_l = 1.0 - sl / (nl * nl)
                    gini_r = 1.0 - sr / (nr * nr)
                    gain = gini_node - (nl * gini_l + nr * gini_r) / m
                    if gain > best_gain + 1e-15:
                        best_gain = gain
                        best_feat = f
                        best_thr = (np.float64(v0) + np.float64(v1)) / 2.0

        if best_feat < 0:
            feature_out[node] = -1
            threshold_out[node] = 0.0
            left_out[node] = -1
            right_out[node] = -1
            continue

        # partition idx[lo:hi] in place, stable order not required
        i = lo
        j = hi - 1
        while i <= j:
            if X[idx[i], best_feat] < best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        split_at = i
        importance[best_feat] += m * best_gain
        feature_out[node] = best_feat
        threshold_out[node] = best_thr
        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        left_out[node] = left_id
        right_out[node] = right_id
        top += 1
        stack_node[top] = left_id
        stack_lo[top] = lo
        stack_hi[top] = split_at
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = right_id
        stack_lo[top] = split_at
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
    return n_nodes


@njit(cache=True)
def _predict_counts(X, feature, threshold, left, right, counts, out):
    """Accumulate one tree's leaf class frequencies into ``out``."""
    n = X.shape[0]
    n_classes = counts.shape[1]
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        total = 0.0
        for c in range(n_classes):
            total += counts[node, c]
        for c in range(n_classes):
            out[i, c] += counts[node, c] / total


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray


@dataclass
class ForestModel:
    params: ForestParams
    classes: list[str]
    trees: list[_Tree]
    importance_raw: np.ndarray
    bootstrap_tallies: np.ndarray  # (n_trees, n_classes) rows drawn per class
    n_features: int

    def class_index(self, name: str) -> int:
        return self.classes.index(name)


def train_forest(X: np.ndarray, y, params: ForestParams | None = None) -> ForestModel:
    """Train a balanced random forest on string or integer labels.

    Classes are kept sorted; each tree's bootstrap draws exactly
    min-class-count rows per class with replacement, recorded in
    ``bootstrap_tallies``.
    """
    params = params or ForestParams()
    X = np.ascontiguousarray(X, dtype=np.float32)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    y_arr = np.asarray(y)
    if y_arr.shape[0] != X.shape[0]:
        raise ValueError("X rows and y length differ")
    classes, y_codes = np.unique(y_arr, return_inverse=True)
    if classes.size < 2:
        raise ValueError("training needs >= 2 classes")
    y_codes = y_codes.astype(np.int32)
    n_classes = classes.size
    class_rows = [np.flatnonzero(y_codes == c) for c in range(n_classes)]
    n_min = min(rows.size for rows in class_rows)
    max_features = params.resolve_max_features(X.shape[1])

    trees: list[_Tree] = []
    importance = np.zeros(X.shape[1])
    tallies = np.zeros((params.n_trees, n_classes), dtype=np.int64)
    for t in range(params.n_trees):
        ss = np.random.SeedSequence(entropy=params.seed, spawn_key=(t,))
        rng = np.random.Generator(np.random.PCG64(ss))
        boot = np.concatenate([rows[rng.integers(0, rows.size, size=n_min)]
                               for rows in class_rows])
        tallies[t] = n_min
        Xb = X[boot]
        yb = y_codes[boot]
        cap = 2 * Xb.shape[0] + 1
        feature = np.empty(cap, dtype=np.int32)
        threshold = np.empty(cap, dtype=np.float64)
        left = np.empty(cap, dtype=np.int32)
        right = np.empty(cap, dtype=np.int32)
        counts = np.zeros((cap, n_classes), dtype=np.float64)
        node_seed = ss.generate_state(1, dtype=np.uint64)[0]
        n_nodes = _build_tree(Xb, yb, n_classes, params.max_depth, params.min_leaf,
                              max_features, node_seed, feature, threshold, left, right,
                              counts, importance)
        trees.append(_Tree(feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
                           left[:n_nodes].copy(), right[:n_nodes].copy(),
                           counts[:n_nodes].copy()))
    return ForestModel(
        params=params,
        classes=[str(c) for c in classes],
        trees=trees,
        importance_raw=importance,
        bootstrap_tallies=tallies,
        n_features=X.shape[1],
    )


def predict_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Posterior per row: mean of per-tree leaf class frequency vectors."""
    X = np.ascontiguousarray(X, dtype=np.float32)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    acc = np.zeros((X.shape[0], len(model.classes)), dtype=np.float64)
    for tree in model.trees:
        _predict_counts(X, tree.feature, tree.threshold, tree.left, tree.right,
                        tree.counts, acc)
    return acc / len(model.trees)


def predict(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Class names by posterior argmax (lowest class index on ties)."""
    proba = predict_proba(model, X)
    return np.array(model.classes)[np.argmax(proba, axis=1)]


def feature_importance(model: ForestModel) -> np.ndarray:
    """Impurity-decrease totals normalized to sum 1; unused features get 0."""
    total = model.importance_raw.sum()
    if total <= 0:
        return np.zeros_like(model.importance_raw)
    return model.importance_raw / total


# -- serialization --------------------------------------------------------------

def save_forest(model: ForestModel, path: str | Path) -> None:
    """Versioned binary: JSON header, then per-tree flat arrays."""
    header = {
        "version": _VERSION,
        "params": {"n_trees": model.params.n_trees, "max_depth": model.params.max_depth,
                   "min_leaf": model.params.min_leaf, "seed": model.params.seed,
                   "max_features": model.params.max_features},
        "classes": model.classes,
        "n_features": model.n_features,
        "node_counts": [t.feature.shape[0] for t in model.trees],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(bytes([_VERSION]))
        f.write(np.uint32(len(blob)).tobytes())
        f.write(blob)
        f.write(np.ascontiguousarray(model.importance_raw, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.bootstrap_tallies, dtype="<i8").tobytes())
        for t in model.trees:
            f.write(np.ascontiguousarray(t.feature, dtype="<i4").tobytes())
            f.write(np.ascontiguousarray(t.threshold, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(t.left, dtype="<i4").tobytes())
            f.write(np.ascontiguousarray(t.right, dtype="<i4").tobytes())
            f.write(np.ascontiguousarray(t.counts, dtype="<f8").tobytes())


def load_forest(path: str | Path) -> ForestModel:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC or raw[4] != _VERSION:
        raise ValueError(f"{path!r} is not a supported forest model file")
    hlen = int(np.frombuffer(raw[5:9], dtype="<u4")[0])
    header = json.loads(raw[9:9 + hlen].decode())
    off = 9 + hlen
    d = header["n_features"]
    n_classes = len(header["classes"])
    n_trees = header["params"]["n_trees"]
    imp = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    tallies = np.frombuffer(raw, dtype="<i8", count=n_trees * n_classes, offset=off)
    tallies = tallies.reshape(n_trees, n_classes).copy()
    off += 8 * n_trees * n_classes
    trees = []
    for n_nodes in header["node_counts"]:
        feature = np.frombuffer(raw, dtype="<i4", count=n_nodes, offset=off).copy()
        off += 4 * n_nodes
        threshold = np.frombuffer(raw, dtype="<f8", count=n_nodes, offset=off).copy()
        off += 8 * n_nodes
        left = np.frombuffer(raw, dtype="<i4", count=n_nodes, offset=off).copy()
        off += 4 * n_nodes
        right = np.frombuffer(raw, dtype="<i4", count=n_nodes, offset=off).copy()
        off += 4 * n_nodes
        counts = np.frombuffer(raw, dtype="<f8", count=n_nodes * n_classes, offset=off)
        counts = counts.reshape(n_nodes, n_classes).copy()
        off += 8 * n_nodes * n_classes
        trees.append(_Tree(feature, threshold, left, right, counts))
    return ForestModel(
        params=ForestParams(**header["params"]),
        classes=header["classes"],
        trees=trees,
        importance_raw=imp,
        bootstrap_tallies=tallies,
        n_features=d,
    )
