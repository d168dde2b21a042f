"""Quality measures for local explanations and slope-plot data."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

CONFIDENCE = 0.95


class UndefinedCorrelation(ValueError):
    """Raised when a correlation is undefined (constant input, too few pairs)."""


@dataclass
class Correlation:
    r: float
    ci_low: float
    ci_high: float
    n: int


def mse_coefficients(B_true, B_hat) -> float:
    """Mean squared difference of slope matrices (intercepts excluded)."""
    B_true = np.asarray(B_true, dtype=float)
    B_hat = np.asarray(B_hat, dtype=float)
    if B_true.shape != B_hat.shape:
        raise ValueError(f"shape mismatch: {B_true.shape} vs {B_hat.shape}")
    return float(np.mean((B_true - B_hat) ** 2))


def pearson(a, b, confidence: float = CONFIDENCE) -> Correlation:
    """Pearson r of the flattened inputs with a Fisher-z confidence interval."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    n = a.size
    if n < 3:
        raise UndefinedCorrelation(f"need at least 3 pairs, got {n}")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da))
    sb = math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        side = "first" if sa == 0.0 else "second"
        raise UndefinedCorrelation(f"zero variance in the {side} argument")
    r = float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))
    if n == 3 or abs(r) == 1.0:
        lo, hi = (r, r) if abs(r) == 1.0 else (-1.0, 1.0)
        return Correlation(r, lo, hi, n)
    z = math.atanh(r)
    half = norm.ppf(0.5 + confidence / 2) / math.sqrt(n - 3)
    return Correlation(r, math.tanh(z - half), math.tanh(z + half), n)


def effect_correlation(effects_true, effects_hat) -> Correlation:
    return pearson(effects_true, effects_hat)


def prediction_correlation(f_values, g_values) -> Correlation:
    return pearson(f_values, g_values)


def ice_effect_correlation(effects_ice, effects_hat) -> Correlation:
    return pearson(effects_ice, effects_hat)


@dataclass
class EvalReport:
    method: str
    mse_coefficients: float | None = None
    effect_correlation: Correlation | None = None
    prediction_correlation: Correlation | None = None
    ice_effect_correlation: Correlation | None = None
    metadata: dict = field(default_factory=dict)
    # measure name -> why it is absent
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        obj = dict(obj)
        for key in ("effect_correlation", "prediction_correlation", "ice_effect_correlation"):
            if obj.get(key) is not None:
                obj[key] = Correlation(**obj[key])
        return cls(**obj)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def flat_row(self) -> dict:
        row = {"method": self.method, "mse_coefficients": self.mse_coefficients}
        for key in ("effect_correlation", "prediction_correlation", "ice_effect_correlation"):
            c = getattr(self, key)
            row[key] = None if c is None else c.r
            row[key + "_low"] = None if c is None else c.ci_low
            row[key + "_high"] = None if c is None else c.ci_high
        for k, v in sorted(self.metadata.items()):
            row[k] = v
        return row


def _guarded(report: EvalReport, name: str, fn, *args):
    try:
        setattr(report, name, fn(*args))
    except UndefinedCorrelation as exc:
        report.notes[name] = str(exc)


def evaluate(method: str, *, coefficients=None, effects=None, local_predictions=None,
             black_box=None, true_coefficients=None, true_effects=None,
             ice_effects=None, metadata=None) -> EvalReport:
    """Build an EvalReport from whatever inputs are available.

    ``coefficients`` are n x d slopes; absent inputs leave the matching
    measure empty with a note explaining why.
    """
    report = EvalReport(method, metadata=dict(metadata or {}))
    if coefficients is not None and true_coefficients is not None:
        report.mse_coefficients = mse_coefficients(true_coefficients, coefficients)
    else:
        report.notes["mse_coefficients"] = ("no local coefficients" if coefficients is None
                                            else "true coefficients unknown")
    if effects is not None and true_effects is not None:
        _guarded(report, "effect_correlation", effect_correlation, true_effects, effects)
    else:
        report.notes["effect_correlation"] = "true effects unknown"
    if local_predictions is not None and black_box is not None:
        _guarded(report, "prediction_correlation", prediction_correlation, black_box,
                 local_predictions)
    else:
        report.notes["prediction_correlation"] = "method has no local model"
    if effects is not None and ice_effects is not None:
        _guarded(report, "ice_effect_correlation", ice_effect_correlation, ice_effects, effects)
    else:
        report.notes["ice_effect_correlation"] = "ICE effects not computed"
    return report


def write_reports_csv(reports, path) -> None:
    rows = [r.flat_row() for r in reports]
    keys: list[str] = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in keys})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def slope_plot_data(features, f_values, slopes, j: int, n_points: int,
                    segment_halfwidth: float = 0.05, seed: int = 0) -> pd.DataFrame:
    """Segments of local slope through (x_ij, f(x_i)) for a seeded subsample.

    ``slopes`` is the n x d coefficient matrix (no intercept column).
    """
    features = np.asarray(features, dtype=float)
    f_values = np.asarray(f_values, dtype=float)
    slopes = np.asarray(slopes, dtype=float)
    n = features.shape[0]
    if not 1 <= n_points <= n:
        raise ValueError(f"n_points must be between 1 and {n}")
    rows = np.sort(np.random.default_rng(seed).choice(n, size=n_points, replace=False))
    x = features[rows, j]
    fx = f_values[rows]
    b = slopes[rows, j]
    return pd.DataFrame({"instance": rows, "x": x, "f": fx, "slope": b,
                         "x_low": x - segment_halfwidth, "x_high": x + segment_halfwidth,
                         "f_low": fx - b * segment_halfwidth,
                         "f_high": fx + b * segment_halfwidth})
