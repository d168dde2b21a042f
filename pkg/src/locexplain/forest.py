"""Random-forest regressor with out-of-bag bookkeeping and per-instance
permutation importance.

Trees are CART regression trees grown on bootstrap samples with per-split
feature subsampling. All trees of a forest are stored in flat node arrays
so prediction and importance run in compiled loops.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .data import DataTable

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    mtry: int | None = None  # None -> max(d // 3, 1)
    min_leaf: int = 5

    def resolved_mtry(self, d: int) -> int:
        m = max(d // 3, 1) if self.mtry is None else self.mtry
        return int(min(max(m, 1), d))


@dataclass
class Tree:
    """One regression tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _predict_tree(X, self.feature, self.threshold, self.left,
                             self.right, self.value, 0)


@dataclass
class Forest:
    trees: list[Tree]
    # bootstrap_counts[t, r] = times training row r was drawn for tree t
    bootstrap_counts: np.ndarray
    n_features: int
    params: ForestParams
    seed: int | None = None
    _flat: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.trees) != self.bootstrap_counts.shape[0]:
            raise ValueError("one bootstrap record per tree is required")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def bootstrap_membership(self, t: int) -> np.ndarray:
        """Row indices (with repetition) drawn for tree ``t``."""
        return np.repeat(np.arange(self.bootstrap_counts.shape[1]), self.bootstrap_counts[t])

    def flat(self):
        if self._flat is None:
            self._flat = _flatten(self.trees)
        return self._flat

    def __call__(self, X) -> np.ndarray:
        return predict(self, X)


def _flatten(trees):
    sizes = np.array([t.n_nodes for t in trees], dtype=np.int64)
    roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    feature = np.concatenate([t.feature for t in trees]).astype(np.int64)
    threshold = np.concatenate([t.threshold for t in trees])
    value = np.concatenate([t.value for t in trees])
    left = np.concatenate([np.where(t.left >= 0, t.left + r, -1) for t, r in zip(trees, roots)])
    right = np.concatenate([np.where(t.right >= 0, t.right + r, -1) for t, r in zip(trees, roots)])
    return (feature, threshold, left.astype(np.int64), right.astype(np.int64), value, roots)


# ---------------------------------------------------------------------------
# compiled kernels

@njit(cache=True)
def _grow_tree(X, y, rows, mtry, min_leaf, seed):
    np.random.seed(seed)
    n = rows.shape[0]
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)

    idx = rows.copy()
    feats = np.arange(d)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    sp = 1
    n_nodes = 1
    xs = np.empty(n)
    ys = np.empty(n)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_start[sp]
        e = st_end[sp]
        m = e - s
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for p in range(s, e):
            v = y[idx[p]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = total / m
        if m < 2 * min_leaf or ymin == ymax:
            continue

        best_score = total * total / m
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        for k in range(mtry):
            r = k + np.random.randint(0, d - k)
            tmp = feats[k]
            feats[k] = feats[r]
            feats[r] = tmp
            f = feats[k]
            for p in range(m):
                xs[p] = X[idx[s + p], f]
            order = np.argsort(xs[:m], kind="mergesort")
            for p in range(m):
                ys[p] = y[idx[s + order[p]]]
            sorted_x = xs[:m][order]
            left_sum = 0.0
            for p in range(m - 1):
                left_sum += ys[p]
                nl = p + 1
                nr = m - nl
                if nr < min_leaf:
                    break
                if nl < min_leaf or sorted_x[p] == sorted_x[p + 1]:
                    continue
                right_sum = total - left_sum
                gain = left_sum * left_sum / nl + right_sum * right_sum / nr - best_score
                if gain > best_gain * (1.0 + 1e-12) + 1e-12 * abs(best_score):
                    best_gain = gain
                    best_f = f
                    thr = sorted_x[p] + 0.5 * (sorted_x[p + 1] - sorted_x[p])
                    if thr >= sorted_x[p + 1]:
                        thr = sorted_x[p]
                    best_thr = thr
        if best_f < 0:
            continue

        # partition idx[s:e] in place: <= threshold first
        lo = s
        hi = e - 1
        while lo <= hi:
            if X[idx[lo], best_f] <= best_thr:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[sp] = n_nodes + 1
        st_start[sp] = lo
        st_end[sp] = e
        sp += 1
        st_node[sp] = n_nodes
        st_start[sp] = s
        st_end[sp] = lo
        sp += 1
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True)
def _leaf_value(xrow, feature, threshold, left, right, value, root, swap_j, swap_val):
    node = root
    while feature[node] >= 0:
        f = feature[node]
        v = swap_val if f == swap_j else xrow[f]
        if v <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return value[node]


@njit(cache=True)
def _predict_tree(X, feature, threshold, left, right, value, root):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = _leaf_value(X[i], feature, threshold, left, right, value, root, -1, 0.0)
    return out


@njit(cache=True)
def _predict_forest(X, feature, threshold, left, right, value, roots):
    out = np.zeros(X.shape[0])
    n_trees = roots.shape[0]
    for i in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            acc += _leaf_value(X[i], feature, threshold, left, right, value, roots[t], -1, 0.0)
        out[i] = acc / n_trees
    return out


@njit(cache=True)
def _oob_importance(X, y, counts, feature, threshold, left, right, value, roots, seed):
    np.random.seed(seed)
    n, d = X.shape
    n_trees = roots.shape[0]
    acc = np.zeros((n, d))
    n_oob = np.zeros(n, np.int64)
    for t in range(n_trees):
        oob = np.flatnonzero(counts[t] == 0)
        m = oob.shape[0]
        if m == 0:
            continue
        base_err = np.empty(m)
        for a in range(m):
            i = oob[a]
            pred = _leaf_value(X[i], feature, threshold, left, right, value, roots[t], -1, 0.0)
            base_err[a] = (y[i] - pred) ** 2
            n_oob[i] += 1
        for j in range(d):
            perm = np.random.permutation(m)
            for a in range(m):
                i = oob[a]
                donor = X[oob[perm[a]], j]
                pred = _leaf_value(X[i], feature, threshold, left, right, value, roots[t], j, donor)
                acc[i, j] += (y[i] - pred) ** 2 - base_err[a]
    return acc, n_oob


# ---------------------------------------------------------------------------
# public API

def train_forest(table: DataTable, params: ForestParams | None = None,
                 seed: int = 0) -> Forest:
    """Fit a random forest on ``table``; deterministic given ``seed``."""
    params = params or ForestParams()
    n, d = table.features.shape
    if n == 0:
        raise ValueError("cannot train a forest on an empty table")
    if params.n_trees < 1:
        raise ValueError("n_trees must be positive")
    X = np.ascontiguousarray(table.features, dtype=float)
    y = np.ascontiguousarray(table.target, dtype=float)
    mtry = params.resolved_mtry(d)
    rng = np.random.default_rng(seed)
    counts = np.zeros((params.n_trees, n), dtype=np.int32)
    trees = []
    for t in range(params.n_trees):
        rows = rng.integers(0, n, size=n)
        counts[t] = np.bincount(rows, minlength=n)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        trees.append(Tree(*_grow_tree(X, y, rows.astype(np.int64), mtry,
                                      params.min_leaf, tree_seed)))
    return Forest(trees, counts, d, params, seed)


def predict(forest: Forest, X) -> np.ndarray:
    """Mean of the per-tree leaf predictions. Accepts one row or a matrix."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.ascontiguousarray(np.atleast_2d(X))
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    out = _predict_forest(X, *forest.flat())
    return out[0] if single else out


@dataclass
class ImportanceMatrix:
    raw: np.ndarray
    normalized: np.ndarray

    @classmethod
    def uniform(cls, n: int, d: int) -> "ImportanceMatrix":
        return cls(np.zeros((n, d)), np.full((n, d), 1.0 / d))


def normalize_importance(raw: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and scale rows to sum to one (uniform if empty)."""
    pos = np.maximum(np.asarray(raw, dtype=float), 0.0)
    sums = pos.sum(axis=1, keepdims=True)
    d = pos.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(sums > 0, pos / np.where(sums > 0, sums, 1.0), 1.0 / d)
    return v


def local_importance(forest: Forest, table: DataTable, seed: int = 0) -> ImportanceMatrix:
    """Per-instance permutation importance from out-of-bag trees.

    For every tree where row i was out of bag, feature j of row i is replaced
    by the value of a randomly permuted out-of-bag row, and the increase in
    squared error is averaged over those trees.
    """
    X = np.ascontiguousarray(table.features, dtype=float)
    y = np.ascontiguousarray(table.target, dtype=float)
    if X.shape[1] != forest.n_features:
        raise ValueError(f"forest expects {forest.n_features} features, table has {X.shape[1]}")
    if X.shape[0] != forest.bootstrap_counts.shape[1]:
        raise ValueError("table rows do not match the forest's training rows")
    counts = np.ascontiguousarray(forest.bootstrap_counts)
    acc, n_oob = _oob_importance(X, y, counts, *forest.flat(), int(seed))
    raw = np.zeros_like(acc)
    seen = n_oob > 0
    raw[seen] = acc[seen] / n_oob[seen, None]
    if not seen.all():
        warnings.warn(f"{int((~seen).sum())} instance(s) were in bag for every tree; "
                      "their importance rows are uniform", stacklevel=2)
    return ImportanceMatrix(raw, normalize_importance(raw))


# ---------------------------------------------------------------------------
# serialization

def save_forest(forest: Forest, path) -> None:
    feature, threshold, left, right, value, roots = forest.flat()
    meta = {"format_version": FORMAT_VERSION, "n_features": forest.n_features,
            "params": asdict(forest.params), "seed": forest.seed}
    with open(path, "wb") as fh:
        np.savez_compressed(fh, meta=np.array(json.dumps(meta)), feature=feature,
                            threshold=threshold, left=left, right=right, value=value,
                            roots=roots, bootstrap_counts=forest.bootstrap_counts)


def load_forest(path) -> Forest:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported forest format {meta.get('format_version')}")
        arrays = {k: z[k] for k in ("feature", "threshold", "left", "right", "value", "roots")}
        counts = z["bootstrap_counts"]
    roots = arrays["roots"]
    ends = np.append(roots[1:], len(arrays["feature"]))
    trees = []
    for r, e in zip(roots, ends):
        lft = arrays["left"][r:e]
        rgt = arrays["right"][r:e]
        trees.append(Tree(arrays["feature"][r:e].copy(), arrays["threshold"][r:e].copy(),
                          np.where(lft >= 0, lft - r, -1), np.where(rgt >= 0, rgt - r, -1),
                          arrays["value"][r:e].copy()))
    return Forest(trees, counts, int(meta["n_features"]), ForestParams(**meta["params"]),
                  meta["seed"])
