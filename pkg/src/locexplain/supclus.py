"""Supervised clustering of local coefficients.

Instances are grouped by spectral clustering of their local coefficient
rows, one stepwise linear model of the black-box output is fitted per
group, and the number of groups is chosen by a size-weighted adjusted R^2.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import DataTable
from .locreg import LinearFit, forward_stepwise
from .varimp import LocalExplanation

KMEANS_RESTARTS = 20
KMEANS_MAX_ITER = 300


class ClusterRepairWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# k-means

def _kmeans_pp(P, k, rng):
    n = P.shape[0]
    centers = np.empty((k, P.shape[1]))
    centers[0] = P[rng.integers(n)]
    d2 = ((P - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[c] = P[idx]
        d2 = np.minimum(d2, ((P - centers[c]) ** 2).sum(axis=1))
    return centers


def _assign(P, centers):
    D = ((P[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = D.argmin(axis=1)
    return labels, D[np.arange(len(P)), labels]


def _lloyd(P, centers, max_iter=KMEANS_MAX_ITER):
    k = centers.shape[0]
    repairs = 0
    labels, dist = _assign(P, centers)
    for _ in range(max_iter):
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = P[members].mean(axis=0)
            else:
                # reseed at the point farthest from its own centroid
                far = int(np.argmax(dist))
                new[c] = P[far]
                dist[far] = 0.0
                repairs += 1
        new_labels, new_dist = _assign(P, new)
        converged = np.array_equal(new_labels, labels) and np.allclose(new, centers)
        centers, labels, dist = new, new_labels, new_dist
        if converged:
            break
    return labels, float(dist.sum()), repairs


def kmeans(P, k: int, seed: int = 0, n_init: int = KMEANS_RESTARTS):
    """k-means++ seeded Lloyd iterations; best of ``n_init`` restarts.

    Returns (labels, inertia, number of empty-cluster repairs in the best run).
    """
    P = np.asarray(P, dtype=float)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(P, _kmeans_pp(P, k, rng))
        if best is None or run[1] < best[1] - 1e-12 * max(abs(best[1]), 1.0):
            best = run
    return best


# ---------------------------------------------------------------------------
# spectral clustering

def _coefficient_rows(B, standardize=False):
    B = np.asarray(B, dtype=float)
    if standardize:
        sd = B.std(axis=0)
        B = (B - B.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    return B


def spectral_embedding(B, k_max: int) -> np.ndarray:
    """Eigenvectors of the normalized affinity D^-1/2 A D^-1/2 for its
    ``k_max`` largest eigenvalues, largest last.

    Affinity is Gaussian with scale set to the median pairwise distance.
    """
    sq = (B * B).sum(axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * B @ B.T, 0.0)
    np.fill_diagonal(D2, 0.0)
    iu = np.triu_indices(len(B), 1)
    sigma = float(np.median(np.sqrt(D2[iu]))) if len(iu[0]) else 0.0
    if sigma <= 0:
        sigma = 1.0
    A = np.exp(-D2 / (2.0 * sigma * sigma))
    np.fill_diagonal(A, 0.0)
    deg = A.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    L = A * inv[:, None] * inv[None, :]
    vals, vecs = np.linalg.eigh(L)
    return vecs[:, -k_max:]


def _normalize_rows(U):
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    return U / np.where(norms > 0, norms, 1.0)


def _relabel(labels):
    """Map labels to 0..m-1 in order of first appearance."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse]


def _degenerate_labels(B, k):
    """Handle fewer distinct coefficient rows than clusters requested."""
    _, labels = np.unique(B, axis=0, return_inverse=True)
    labels = _relabel(labels.reshape(-1))
    n_empty = k - (labels.max() + 1)
    warnings.warn(f"only {labels.max() + 1} distinct coefficient rows for k={k}; "
                  f"{n_empty} cluster(s) left empty and dropped", ClusterRepairWarning,
                  stacklevel=3)
    return labels


def _cluster_from_embedding(U, k, seed):
    labels, _, repairs = kmeans(_normalize_rows(U[:, -k:]), k, seed)
    if repairs:
        warnings.warn(f"k-means reseeded {repairs} empty cluster(s) for k={k}",
                      ClusterRepairWarning, stacklevel=3)
    return _relabel(labels)


def spectral_cluster(B, k: int, seed: int = 0, standardize: bool = False) -> np.ndarray:
    """Cluster the rows of ``B`` (slope coefficients, no intercept) into
    ``k`` groups. Returned labels are contiguous, numbered by first
    appearance; fewer than ``k`` labels occur only in degenerate cases."""
    B = _coefficient_rows(B, standardize)
    n = B.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be between 1 and {n}, got {k}")
    if k == 1:
        return np.zeros(n, dtype=int)
    if len(np.unique(B, axis=0)) < k:
        return _degenerate_labels(B, k)
    return _cluster_from_embedding(spectral_embedding(B, k), k, seed)


# ---------------------------------------------------------------------------
# per-cluster regression

@dataclass
class ClusterSolution:
    k: int
    assignment: np.ndarray
    fits: list[LinearFit]
    sizes: list[int]
    r2: list[float]
    weighted_r2: float
    adjusted: list[bool]
    r2_by_k: dict[int, float] = field(default_factory=dict)

    def coefficient_matrix(self, n_features: int | None = None) -> np.ndarray:
        """n x (d+1) matrix of cluster coefficients per instance, intercept first."""
        rows = np.array([np.concatenate([[f.intercept], f.coefficients]) for f in self.fits])
        return rows[self.assignment]

    def to_dict(self, feature_names=None) -> dict:
        d = len(self.fits[0].coefficients)
        names = feature_names or [f"X{j + 1}" for j in range(d)]
        return {
            "k": self.k,
            "weighted_r2": self.weighted_r2,
            "clusters": [{"id": c, "size": s, "r2": r, "adjusted": a,
                          "intercept": f.intercept,
                          "coefficients": dict(zip(names, f.coefficients.tolist())),
                          "selected": [names[j] for j in f.selected]}
                         for c, (s, r, a, f) in enumerate(zip(self.sizes, self.r2,
                                                              self.adjusted, self.fits))],
            "assignment": self.assignment.tolist(),
            "r2_by_k": {str(k): v for k, v in self.r2_by_k.items()},
        }

    def write_json(self, path, feature_names=None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(feature_names), fh, indent=1)


def cluster_r2(f_values, fitted, M: int) -> tuple[float, bool]:
    """Adjusted R^2 of one cluster; falls back to the plain R^2 (flag False)
    when the cluster has no more than ``M`` members."""
    f_values = np.asarray(f_values, dtype=float)
    size = len(f_values)
    sse = float(((f_values - fitted) ** 2).sum())
    sst = float(((f_values - f_values.mean()) ** 2).sum())
    if sst == 0.0:
        # constant output: the intercept alone is exact
        return 1.0, size > M
    if size > M:
        return 1.0 - (size - 1) * sse / ((size - M) * sst), True
    return 1.0 - sse / sst, False


def fit_clusters(D: DataTable, assignment, M: int | None = None) -> ClusterSolution:
    """Unweighted stepwise regression of f(x) on the features within each cluster."""
    assignment = np.asarray(assignment, dtype=int)
    if assignment.shape != (D.n,):
        raise ValueError("assignment must have one label per instance")
    M = D.d if M is None else M
    k = int(assignment.max()) + 1
    fits, sizes, r2s, adjusted = [], [], [], []
    for c in range(k):
        rows = np.flatnonzero(assignment == c)
        if len(rows) == 0:
            raise ValueError(f"cluster {c} is empty")
        X = D.features[rows]
        y = D.target[rows]
        m = min(M, len(rows) - 1)
        fit = forward_stepwise(X, y, np.full(len(rows), 1.0 / len(rows)), m)
        r2, adj = cluster_r2(y, fit.predict(X), M)
        fits.append(fit)
        sizes.append(len(rows))
        r2s.append(r2)
        adjusted.append(adj)
    weighted = float(np.dot(sizes, r2s) / D.n)
    return ClusterSolution(k, assignment, fits, sizes, r2s, weighted, adjusted)


def select_k(D: DataTable, B, M: int | None = None, k_range=range(1, 6), seed: int = 0,
             standardize: bool = False) -> ClusterSolution:
    """Best weighted adjusted R^2 over ``k_range`` (smaller k wins ties).

    ``B`` holds slope coefficients only, or the full n x (d+1) matrix whose
    first (intercept) column is then dropped.
    """
    B = np.asarray(B, dtype=float)
    if B.shape[1] == D.d + 1:
        B = B[:, 1:]
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    rows = _coefficient_rows(B, standardize)
    n_distinct = len(np.unique(rows, axis=0))
    k_spec = [k for k in ks if 1 < k <= n_distinct]
    U = spectral_embedding(rows, max(k_spec)) if k_spec else None
    best = None
    r2_by_k = {}
    for k in ks:
        if not 1 <= k <= D.n:
            raise ValueError(f"k must be between 1 and {D.n}, got {k}")
        if k == 1:
            labels = np.zeros(D.n, dtype=int)
        elif k > n_distinct:
            labels = _degenerate_labels(rows, k)
        else:
            labels = _cluster_from_embedding(U, k, seed)
        sol = fit_clusters(D, labels, M)
        r2_by_k[k] = sol.weighted_r2
        if best is None or sol.weighted_r2 > best.weighted_r2:
            best = sol
    best.r2_by_k = r2_by_k
    return best


def explain_instance_supclus(solution: ClusterSolution, D: DataTable, i: int) -> LocalExplanation:
    """Instance ``i`` explained by its cluster's linear model."""
    if not 0 <= i < len(solution.assignment):
        raise IndexError(f"instance {i} is not assigned to a cluster")
    fit = solution.fits[solution.assignment[i]]
    return LocalExplanation.from_fit(i, fit, D.features[i], D.target[i])


def explain_all_supclus(solution: ClusterSolution, D: DataTable) -> list[LocalExplanation]:
    return [explain_instance_supclus(solution, D, i) for i in range(D.n)]
