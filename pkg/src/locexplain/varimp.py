"""Importance-weighted local linear explanations.

For each instance, neighbours are weighted with a Gaussian kernel on a
weighted Euclidean distance whose per-feature weights are that instance's
normalized local importances, and a forward-stepwise weighted regression of
the black-box output is fitted around it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import DataTable
from .forest import ImportanceMatrix
from .locreg import LinearFit, forward_stepwise, kernel_weights

DEFAULT_BANDWIDTH = 0.5
BANDWIDTH_GRID = (0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class LocalExplanation:
    index: int
    intercept: float
    coefficients: np.ndarray
    effects: np.ndarray
    local_prediction: float
    black_box_prediction: float
    selected: tuple[int, ...] = ()

    @classmethod
    def from_fit(cls, index: int, fit: LinearFit, x, f_value: float) -> "LocalExplanation":
        x = np.asarray(x, dtype=float)
        coef = np.asarray(fit.coefficients, dtype=float).copy()
        effects = coef * x
        g = float(fit.intercept + effects.sum())
        return cls(int(index), float(fit.intercept), coef, effects, g, float(f_value),
                   tuple(fit.selected))

    def to_dict(self, feature_names=None) -> dict:
        names = feature_names or [f"X{j + 1}" for j in range(len(self.coefficients))]
        return {"index": self.index, "intercept": self.intercept,
                "coefficients": dict(zip(names, self.coefficients.tolist())),
                "effects": dict(zip(names, self.effects.tolist())),
                "local_prediction": self.local_prediction,
                "black_box_prediction": self.black_box_prediction,
                "selected": [names[j] for j in self.selected]}


def explain_instance(D: DataTable, importances: ImportanceMatrix, i: int,
                     h: float = DEFAULT_BANDWIDTH, M: int | None = None) -> LocalExplanation:
    """Explain instance ``i`` of ``D``, whose target holds black-box outputs f(x)."""
    if not 0 <= i < D.n:
        raise IndexError(f"instance {i} out of range for {D.n} rows")
    M = D.d if M is None else M
    w = kernel_weights(D.features[i], D.features, importances.normalized[i], h).weights
    fit = forward_stepwise(D.features, D.target, w, M)
    return LocalExplanation.from_fit(i, fit, D.features[i], D.target[i])


def explain_all(D: DataTable, importances: ImportanceMatrix, h: float = DEFAULT_BANDWIDTH,
                M: int | None = None) -> tuple[list[LocalExplanation], np.ndarray]:
    """Explain every instance of ``D``; returns explanations and the n x (d+1)
    coefficient matrix (intercept first)."""
    explanations = []
    for i in range(D.n):
        try:
            explanations.append(explain_instance(D, importances, i, h, M))
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise RuntimeError(f"instance {i}: {exc}") from exc
    return explanations, coefficient_matrix(explanations)


def coefficient_matrix(explanations) -> np.ndarray:
    return np.array([np.concatenate([[e.intercept], e.coefficients]) for e in explanations])


def effects_matrix(explanations) -> np.ndarray:
    return np.array([e.effects for e in explanations])


# ---------------------------------------------------------------------------
# export

def explanations_frame(explanations, feature_names) -> pd.DataFrame:
    rows = []
    for e in explanations:
        row = {"index": e.index, "intercept": e.intercept}
        row.update({f"coef_{n}": c for n, c in zip(feature_names, e.coefficients)})
        row.update({f"effect_{n}": c for n, c in zip(feature_names, e.effects)})
        row["g"] = e.local_prediction
        row["f"] = e.black_box_prediction
        rows.append(row)
    return pd.DataFrame(rows)


def write_explanations_csv(explanations, feature_names, path) -> None:
    explanations_frame(explanations, feature_names).to_csv(path, index=False,
                                                           float_format="%.17g")


def write_explanations_json(explanations, feature_names, path) -> None:
    with open(path, "w") as fh:
        json.dump([e.to_dict(feature_names) for e in explanations], fh, indent=1)
