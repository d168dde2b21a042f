"""Comparison explainers: unweighted local regression on the data (IML-style),
a perturbation surrogate (LIME-style) and permutation-sampling Shapley values."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import DataTable
from .forest import ImportanceMatrix
from .locreg import forward_stepwise, kernel_weights
from .varimp import DEFAULT_BANDWIDTH, LocalExplanation, explain_instance

Predictor = Callable[[np.ndarray], np.ndarray]

DEFAULT_LIME_SAMPLES = 5000
DEFAULT_SHAPLEY_PERMUTATIONS = 100


def _call(f: Predictor, Z: np.ndarray, what: str) -> np.ndarray:
    try:
        out = np.asarray(f(Z), dtype=float).reshape(-1)
    except Exception as exc:
        raise RuntimeError(f"black-box predictor failed on {what}: {exc}") from exc
    if out.shape[0] != Z.shape[0]:
        raise RuntimeError(f"predictor returned {out.shape[0]} values for {Z.shape[0]} rows")
    return out


# ---------------------------------------------------------------------------
# IML-style

def explain_iml_style(D: DataTable, i: int, h: float = DEFAULT_BANDWIDTH,
                      M: int | None = None) -> LocalExplanation:
    """Same pipeline as VarImp with every feature weighted 1/d.

    Plain squared Euclidean distance is therefore divided by d; bandwidths
    are not directly comparable with VarImp's.
    """
    return explain_instance(D, ImportanceMatrix.uniform(D.n, D.d), i, h, M)


def explain_iml_all(D: DataTable, h: float = DEFAULT_BANDWIDTH, M: int | None = None):
    U = ImportanceMatrix.uniform(D.n, D.d)
    return [explain_instance(D, U, i, h, M) for i in range(D.n)]


# ---------------------------------------------------------------------------
# LIME-style

def perturbation_sample(x_i, n_samples: int, rng) -> np.ndarray:
    """``x_i`` followed by ``n_samples - 1`` uniform draws from the unit cube."""
    x_i = np.asarray(x_i, dtype=float)
    Z = rng.uniform(0.0, 1.0, size=(n_samples, x_i.shape[0]))
    Z[0] = x_i
    return Z


def lime_fit(x_i, Z, fZ, h: float, M: int | None = None, index: int = 0) -> LocalExplanation:
    """Kernel-weighted stepwise surrogate around ``x_i`` on perturbed points
    ``Z`` with black-box outputs ``fZ``; the first row of ``Z`` must be ``x_i``."""
    x_i = np.asarray(x_i, dtype=float)
    d = x_i.shape[0]
    M = d if M is None else M
    w = kernel_weights(x_i, Z, np.full(d, 1.0 / d), h).weights
    fit = forward_stepwise(Z, fZ, w, M)
    return LocalExplanation.from_fit(index, fit, x_i, fZ[0])


def explain_lime_style(f: Predictor, x_i, n_samples: int = DEFAULT_LIME_SAMPLES,
                       h: float = DEFAULT_BANDWIDTH, M: int | None = None,
                       seed: int = 0, index: int = 0) -> LocalExplanation:
    x_i = np.asarray(x_i, dtype=float)
    if n_samples < x_i.shape[0] + 2:
        raise ValueError(f"n_samples must be at least d + 2 = {x_i.shape[0] + 2}")
    Z = perturbation_sample(x_i, n_samples, np.random.default_rng(seed))
    fZ = _call(f, Z, f"perturbed sample of instance {index}")
    return lime_fit(x_i, Z, fZ, h, M, index)


class LimePool:
    """One perturbation sample shared by a batch of instances.

    Black-box queries on the uniform sample are made once; each instance is
    then fitted on the pool with itself prepended. Use this for large
    batches where per-instance sampling is too expensive.
    """

    def __init__(self, f: Predictor, d: int, n_samples: int = DEFAULT_LIME_SAMPLES,
                 seed: int = 0):
        if n_samples < d + 2:
            raise ValueError(f"n_samples must be at least d + 2 = {d + 2}")
        rng = np.random.default_rng(seed)
        self.Z = rng.uniform(0.0, 1.0, size=(n_samples - 1, d))
        self.fZ = _call(f, self.Z, "shared perturbation pool")
        self.f = f

    def explain(self, x_i, f_i: float, h: float, M: int | None = None,
                index: int = 0) -> LocalExplanation:
        Z = np.vstack([x_i, self.Z])
        fZ = np.concatenate([[f_i], self.fZ])
        return lime_fit(x_i, Z, fZ, h, M, index)


# ---------------------------------------------------------------------------
# Shapley values

@dataclass
class ShapleyExplanation:
    index: int
    values: np.ndarray
    baseline: float
    black_box_prediction: float

    def to_dict(self, feature_names=None) -> dict:
        names = feature_names or [f"X{j + 1}" for j in range(len(self.values))]
        return {"index": self.index, "baseline": self.baseline,
                "values": dict(zip(names, self.values.tolist())),
                "black_box_prediction": self.black_box_prediction}

    def as_local(self) -> LocalExplanation:
        """Export view: values in the effect slots, zero coefficients."""
        d = len(self.values)
        return LocalExplanation(self.index, self.baseline, np.zeros(d), self.values.copy(),
                                float(self.baseline + self.values.sum()),
                                self.black_box_prediction)


def _hybrid_rows(x_i, z, order):
    """Rows k = 0..d: features order[:k] from x_i, the rest from z."""
    d = len(order)
    R = np.tile(z, (d + 1, 1))
    for k in range(1, d + 1):
        R[k:, order[k - 1]] = x_i[order[k - 1]]
    return R


def shapley_mc(f: Predictor, x_i, D: DataTable,
               n_permutations: int = DEFAULT_SHAPLEY_PERMUTATIONS, seed: int = 0,
               exact: bool = False, index: int = 0,
               baseline: float | None = None) -> ShapleyExplanation:
    """Shapley attributions by sampling (feature order, background row) pairs.

    With ``exact=True`` every feature ordering is combined with every row of
    ``D`` (only feasible for small d and n). ``baseline`` defaults to the
    mean prediction over ``D``.
    """
    x_i = np.asarray(x_i, dtype=float)
    d = x_i.shape[0]
    if D.d != d:
        raise ValueError(f"instance has {d} features, background has {D.d}")
    if exact:
        pairs = [(np.array(p), r) for p in itertools.permutations(range(d)) for r in range(D.n)]
    else:
        if n_permutations < 1:
            raise ValueError("n_permutations must be at least 1")
        rng = np.random.default_rng(seed)
        pairs = [(rng.permutation(d), int(rng.integers(D.n))) for _ in range(n_permutations)]
    rows = np.vstack([_hybrid_rows(x_i, D.features[r], p) for p, r in pairs])
    preds = _call(f, rows, f"Shapley hybrids of instance {index}").reshape(len(pairs), d + 1)
    total = np.zeros(d)
    for (p, _), pr in zip(pairs, preds):
        total[p] += np.diff(pr)
    values = total / len(pairs)
    if baseline is None:
        baseline = float(np.mean(_call(f, D.features, "background rows")))
    fx = float(_call(f, x_i[None, :], f"instance {index}")[0])
    return ShapleyExplanation(int(index), values, float(baseline), fx)
