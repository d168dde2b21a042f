"""Weighted distances, Gaussian kernel weights, weighted least squares and
forward stepwise selection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

# equilibrated condition number above which the normal equations are abandoned
COND_LIMIT = 1e12
# relative weighted-SSE improvement below which stepwise selection stops
STEP_TOL = 1e-8


class DegenerateFitWarning(RuntimeWarning):
    pass


def weighted_sq_distance(x_i, x_l, v_i) -> float:
    x_i, x_l, v_i = (np.asarray(a, dtype=float) for a in (x_i, x_l, v_i))
    if not (x_i.shape == x_l.shape == v_i.shape) or x_i.ndim != 1:
        raise ValueError(f"dimension mismatch: {x_i.shape}, {x_l.shape}, {v_i.shape}")
    if (v_i < 0).any():
        raise ValueError("feature weights must be nonnegative")
    return float(np.dot(v_i, (x_i - x_l) ** 2))


def sq_distances(anchor, X, v) -> np.ndarray:
    """Weighted squared distance from ``anchor`` to every row of ``X``."""
    X = np.asarray(X, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    v = np.asarray(v, dtype=float)
    if anchor.shape != (X.shape[1],) or v.shape != anchor.shape:
        raise ValueError(f"dimension mismatch: anchor {anchor.shape}, X {X.shape}, v {v.shape}")
    return ((X - anchor) ** 2) @ v


@dataclass
class KernelWeights:
    weights: np.ndarray
    bandwidth: float


def kernel_weights(anchor, X, v, h: float) -> KernelWeights:
    """Normalized Gaussian kernel weights of every row of ``X`` around ``anchor``.

    The kernel's normalizing constant cancels in the normalization. If every
    kernel value underflows, uniform weights are returned with a warning.
    """
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    d2 = sq_distances(anchor, X, v)
    k = np.exp(-d2 / (2.0 * h * h))
    total = k.sum()
    if total == 0.0 or not np.isfinite(total):
        warnings.warn("all kernel values underflowed; using uniform weights",
                      DegenerateFitWarning, stacklevel=2)
        return KernelWeights(np.full(len(k), 1.0 / len(k)), h)
    return KernelWeights(k / total, h)


@dataclass
class LinearFit:
    intercept: float
    coefficients: np.ndarray
    selected: list[int]
    weighted_sse: float
    degenerate: bool = False
    # weighted SSE after each stepwise addition, starting from intercept-only
    sse_path: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coefficients


def _check_weights(X, y, w):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],) or w.shape != y.shape:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}, weights {w.shape}")
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    s = w.sum()
    if not s > 0:
        raise ValueError("weights sum to zero")
    return X, y, w / s


def _centered(X, y, w):
    """sqrt(w)-scaled, weighted-centered [X | y] and its cross-product matrix."""
    sw = np.sqrt(w)
    d = X.shape[1]
    Z = np.empty((X.shape[0], d + 1))
    Z[:, :d] = X - w @ X
    Z[:, d] = y - w @ y
    Z *= sw[:, None]
    return Z, Z.T @ Z


def _solve(X, y, w, Z, C, S) -> LinearFit:
    """Fit on feature subset ``S`` given the output of :func:`_centered`."""
    d = X.shape[1]
    coef = np.zeros(d)
    degenerate = False
    if S:
        A = C[np.ix_(S, S)]
        b = C[S, d]
        diag = np.diag(A)
        beta = None
        if (diag > 0).all():
            scale = 1.0 / np.sqrt(diag)
            As = A * scale[:, None] * scale[None, :]
            if np.linalg.cond(As) <= COND_LIMIT:
                beta = scale * scipy.linalg.solve(As, b * scale, assume_a="sym")
        if beta is None:
            degenerate = True
            beta = np.linalg.lstsq(Z[:, S], Z[:, d], rcond=None)[0]
        coef[S] = beta
    intercept = float(w @ y) - float((w @ X[:, S]) @ coef[S]) if S else float(w @ y)
    resid = y - intercept - X[:, S] @ coef[S]
    sse = float(w @ (resid * resid))
    return LinearFit(intercept, coef, list(S), sse, degenerate)


def wls_fit(X, y, weights, features=None) -> LinearFit:
    """Weighted least squares with an intercept on the columns ``features``.

    The weighted-centered normal equations are solved with a symmetric
    indefinite (LDL^T) factorization. When the equilibrated system is
    singular or its condition number exceeds ``COND_LIMIT`` the minimum-norm
    solution from an SVD of the weighted design is used instead and the
    fit is flagged degenerate.
    """
    X, y, w = _check_weights(X, y, weights)
    d = X.shape[1]
    S = list(range(d)) if features is None else [int(j) for j in features]
    _check_rank(S, w)
    Z, C = _centered(X, y, w)
    return _solve(X, y, w, Z, C, S)


def _check_rank(S, w):
    n_pos = int((w > 0).sum())
    if len(S) + 1 > n_pos:
        raise ValueError(f"{len(S) + 1} parameters but only {n_pos} positively weighted rows "
                         f"(short by {len(S) + 1 - n_pos})")


def _sweep(C, k):
    """Sweep the symmetric cross-product matrix ``C`` on pivot ``k`` in place."""
    p = C[k, k]
    row = C[k].copy()
    C -= np.outer(row, row) / p
    C[k] = row / p
    C[:, k] = row / p
    C[k, k] = -1.0 / p


def forward_stepwise(X, y, weights, M: int, tol: float = STEP_TOL) -> LinearFit:
    """Greedy forward selection of at most ``M`` features by weighted SSE.

    Starts from the intercept-only model and adds, one at a time, the
    feature giving the largest drop in weighted SSE (lowest index on ties).
    Stops after ``M`` features or when the best relative improvement is
    below ``tol``. Features collinear with those already chosen are never
    added. The returned fit is the weighted least-squares fit on the
    selected set.
    """
    X, y, w = _check_weights(X, y, weights)
    d = X.shape[1]
    if not 0 <= M <= d:
        raise ValueError(f"M must be between 0 and {d}, got {M}")
    Z, C = _centered(X, y, w)
    C0 = C.copy()
    orig = np.diag(C)[:d].copy()
    sse0 = C[d, d]
    sse = sse0
    path = [float(sse)]
    selected: list[int] = []
    available = orig > 0
    while len(selected) < M and sse > 1e-14 * sse0:
        pivots = np.diag(C)[:d]
        ok = available & (pivots > 1e-10 * orig)
        if not ok.any():
            break
        gain = np.where(ok, C[:d, d] ** 2 / np.where(ok, pivots, 1.0), -np.inf)
        best = int(np.argmax(gain))
        if gain[best] <= tol * sse:
            break
        _sweep(C, best)
        available[best] = False
        selected.append(best)
        sse = max(C[d, d], 0.0)
        path.append(float(sse))
    _check_rank(selected, w)
    fit = _solve(X, y, w, Z, C0, selected)
    fit.sse_path = path
    return fit
