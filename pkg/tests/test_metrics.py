import math

import numpy as np
import pandas as pd
import pytest

from locexplain.metrics import (Correlation, EvalReport, UndefinedCorrelation,
                                effect_correlation, evaluate, ice_effect_correlation,
                                mse_coefficients, pearson, prediction_correlation,
                                slope_plot_data, write_reports_csv)

Z975 = 1.959963984540054


def test_mse_examples():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert mse_coefficients(A, A) == 0.0
    assert mse_coefficients(A, A + 1) == 1.0
    assert mse_coefficients(A, np.array([[1.0, 2.0], [3.0, 0.0]])) == 4.0


def test_mse_symmetric_and_shape_checked():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(2, 5, 3))
    assert mse_coefficients(A, B) == mse_coefficients(B, A)
    with pytest.raises(ValueError, match="shape"):
        mse_coefficients(A, B[:, :2])


@pytest.mark.parametrize("fn", [effect_correlation, prediction_correlation, ice_effect_correlation])
def test_correlation_sign_cases(fn):
    a = np.array([[0.1, 2.0], [3.0, -1.0], [0.5, 0.7]])
    assert fn(a, 2 * a).r == pytest.approx(1.0)
    assert fn(a, -a).r == pytest.approx(-1.0)


def test_pearson_hand_computed_four_pairs():
    # deviations (-1.5, -.5, .5, 1.5) and (-.5, -1.5, 1.5, .5): r = 3 / 5
    c = pearson([1, 2, 3, 4], [2, 1, 4, 3])
    assert c.r == pytest.approx(0.6, abs=1e-15)
    z = math.atanh(0.6)
    assert c.ci_low == pytest.approx(math.tanh(z - Z975), abs=1e-12)
    assert c.ci_high == pytest.approx(math.tanh(z + Z975), abs=1e-12)
    assert c.n == 4


def test_pearson_hand_computed_five_points():
    c = prediction_correlation([1, 2, 3, 4, 5], [2, 4, 5, 4, 5])
    assert c.r == pytest.approx(6 / math.sqrt(60), abs=1e-15)
    half = Z975 / math.sqrt(2)
    assert c.ci_low == pytest.approx(math.tanh(math.atanh(c.r) - half), abs=1e-12)


def test_pearson_hand_computed_ice_case():
    c = ice_effect_correlation([[0, 1], [2, 3]], [[1, 0], [3, 5]])
    # deviations (-1.5, -.5, .5, 1.5) and (-1.25, -2.25, .75, 2.75)
    num = 1.875 + 1.125 + 0.375 + 4.125
    den = math.sqrt(5 * (1.5625 + 5.0625 + 0.5625 + 7.5625))
    assert c.r == pytest.approx(num / den, abs=1e-15)


def test_pearson_affine_invariance():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 30))
    base = pearson(a, b).r
    assert pearson(3 * a + 7, b).r == pytest.approx(base, abs=1e-12)
    assert pearson(a, 0.5 * b - 2).r == pytest.approx(base, abs=1e-12)


def test_pearson_edge_cases():
    with pytest.raises(UndefinedCorrelation, match="zero variance in the first"):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelation, match="at least 3"):
        pearson([1, 2], [2, 1])
    c = pearson([1, 2, 3], [1, 3, 2])
    assert (c.ci_low, c.ci_high) == (-1.0, 1.0)
    c = pearson([1, 2, 3, 4], [2, 4, 6, 8])
    assert c.ci_low == pytest.approx(1.0, abs=1e-12) and c.ci_high == pytest.approx(1.0)


def test_evaluate_full_and_absent_fields():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(20, 3))
    B = rng.normal(size=(20, 3))
    rep = evaluate("varimp", coefficients=B, effects=B * X, local_predictions=X.sum(axis=1),
                   black_box=X.sum(axis=1) + 0.1, true_coefficients=B, true_effects=B * X,
                   metadata={"h": 0.5})
    assert rep.mse_coefficients == 0.0
    assert rep.effect_correlation.r == pytest.approx(1.0)
    assert rep.prediction_correlation.r == pytest.approx(1.0)
    assert rep.ice_effect_correlation is None and "ice_effect_correlation" in rep.notes
    shap = evaluate("shapley", effects=B * X, true_effects=B * X)
    assert shap.mse_coefficients is None and shap.prediction_correlation is None
    assert set(shap.notes) == {"mse_coefficients", "prediction_correlation",
                               "ice_effect_correlation"}


def test_evaluate_records_undefined_correlation():
    rep = evaluate("x", effects=np.zeros((4, 2)), true_effects=np.ones((4, 2)))
    assert rep.effect_correlation is None
    assert "zero variance" in rep.notes["effect_correlation"]


def test_report_round_trip():
    rep = EvalReport("lime_style", 0.25, Correlation(0.5, 0.1, 0.8, 40), None,
                     Correlation(-0.2, -0.5, 0.1, 40), {"h": 0.1, "seed": 3}, {"x": "y"})
    assert EvalReport.from_json(rep.to_json()) == rep
    assert EvalReport.from_dict(rep.to_dict()) == rep


def test_reports_csv(tmp_path):
    reps = [EvalReport("a", 0.1, Correlation(0.5, 0.1, 0.8, 40), metadata={"h": 0.5}),
            EvalReport("b", None, None, metadata={"h": 1.0, "k": 2})]
    write_reports_csv(reps, tmp_path / "r.csv")
    frame = pd.read_csv(tmp_path / "r.csv")
    assert frame["method"].tolist() == ["a", "b"]
    assert frame["effect_correlation"].iloc[0] == 0.5
    assert np.isnan(frame["mse_coefficients"].iloc[1])
    assert frame["k"].iloc[1] == 2


def test_slope_plot_segments():
    X = np.array([[0.1, 0.5], [0.4, 0.2], [0.9, 0.3]])
    f = np.array([1.0, 2.0, 3.0])
    slopes = np.array([[0.0, 1.0], [2.0, 0.0], [2.0, -1.0]])
    frame = slope_plot_data(X, f, slopes, 0, 3, 0.05)
    assert sorted(frame["instance"].tolist()) == [0, 1, 2]
    row0 = frame.set_index("instance").loc[0]
    assert row0.f_low == row0.f_high == 1.0
    row1 = frame.set_index("instance").loc[1]
    assert row1.f_low == pytest.approx(1.9) and row1.f_high == pytest.approx(2.1)
    assert row1.x_low == pytest.approx(0.35) and row1.x_high == pytest.approx(0.45)
    sub = slope_plot_data(X, f, slopes, 1, 2, seed=4)
    assert len(sub) == 2 and sub["instance"].is_unique
    with pytest.raises(ValueError):
        slope_plot_data(X, f, slopes, 0, 4)
