"""Individual conditional expectation curves and the local slopes read off them."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import DataTable

DEFAULT_GRID_SIZE = 51


@dataclass
class IceCurve:
    instance: int
    feature: int
    grid: np.ndarray
    values: np.ndarray


def ice_curve(f, D: DataTable, i: int, j: int, grid_size: int = DEFAULT_GRID_SIZE) -> IceCurve:
    """Sweep feature ``j`` of instance ``i`` over an equally spaced grid
    spanning the observed range of that feature in ``D``."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    col = D.features[:, j]
    grid = np.linspace(col.min(), col.max(), grid_size)
    if grid[-1] == grid[0]:
        grid = grid[:1]
    rows = np.tile(D.features[i], (len(grid), 1))
    rows[:, j] = grid
    values = np.empty(len(grid))
    for g in range(len(grid)):
        try:
            values[g] = np.asarray(f(rows[g:g + 1]), dtype=float).reshape(-1)[0]
        except Exception as exc:
            raise RuntimeError(f"predictor failed at grid value {float(grid[g])!r} "
                               f"(instance {i}, feature {j}): {exc}") from exc
    return IceCurve(i, j, grid, values)


def _step(grid):
    # the grid is equally spaced; a scalar step keeps flat curves exactly flat
    return (grid[-1] - grid[0]) / (len(grid) - 1)


def ice_slope(curve: IceCurve, x: float) -> float:
    """Derivative of the curve at ``x``: central differences at the grid
    points (one-sided at the ends), linearly interpolated to ``x``."""
    if len(curve.grid) < 2:
        warnings.warn(f"feature {curve.feature} has zero range; ICE slope set to 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    if not curve.grid[0] - 1e-12 <= x <= curve.grid[-1] + 1e-12:
        raise ValueError(f"{x} is outside the grid span [{curve.grid[0]}, {curve.grid[-1]}]")
    slopes = np.gradient(curve.values, _step(curve.grid))
    return float(np.interp(x, curve.grid, slopes))


def ice_effect(curve: IceCurve, x: float) -> float:
    """ICE slope at the observed value times that value."""
    return ice_slope(curve, x) * x


def ice_effects(f, D: DataTable, grid_size: int = DEFAULT_GRID_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """(slopes, effects) n x d matrices for every instance and feature.

    Curves for a feature are evaluated in one batched call per feature.
    """
    n, d = D.features.shape
    slopes = np.zeros((n, d))
    for j in range(d):
        col = D.features[:, j]
        grid = np.linspace(col.min(), col.max(), grid_size)
        if grid[-1] == grid[0]:
            continue
        rows = np.repeat(D.features, grid_size, axis=0)
        rows[:, j] = np.tile(grid, n)
        values = np.asarray(f(rows), dtype=float).reshape(n, grid_size)
        grad = np.gradient(values, _step(grid), axis=1)
        for i in range(n):
            slopes[i, j] = np.interp(col[i], grid, grad[i])
    return slopes, slopes * D.features


def curves_frame(curves) -> pd.DataFrame:
    """Long format: one row per (instance, feature, grid value)."""
    parts = [pd.DataFrame({"instance": c.instance, "feature": c.feature,
                           "grid_value": c.grid, "prediction": c.values}) for c in curves]
    return pd.concat(parts, ignore_index=True)
