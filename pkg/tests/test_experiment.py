import json

import numpy as np
import pandas as pd
import pytest
import yaml

from locexplain.experiment import (METHODS, DatasetRun, ExperimentConfig,
                                   StageError, explain_one, run_experiment, stage_seeds)
from locexplain.forest import ForestParams, train_forest
from locexplain.data import DataTable
from locexplain.varimp import BANDWIDTH_GRID

SMALL_FOREST = {"n_trees": 10}


def _config(tmp_path, **kw):
    obj = {"datasets": [{"synthetic": 1, "n": 40, "d": 3}], "methods": ["varimp"],
           "forest": SMALL_FOREST, "importance_forest": SMALL_FOREST, "lime_samples": 60,
           "shapley_permutations": 3, "slope_points": 5, "out": str(tmp_path / "run")}
    obj.update(kw)
    return ExperimentConfig.from_dict(obj)


def test_single_method_structure(tmp_path):
    manifest = run_experiment(_config(tmp_path))
    out = tmp_path / "run"
    assert manifest["config"]["methods"] == ["varimp"]
    frame = pd.read_csv(out / "evaluation.csv")
    assert len(frame) == len(BANDWIDTH_GRID)
    assert frame["h"].tolist() == list(BANDWIDTH_GRID)
    assert set(manifest["datasets"]["synthetic1"]["best_h"]) == {"varimp"}


def test_rerun_is_byte_identical(tmp_path):
    cfg = _config(tmp_path, methods=["varimp", "supclus", "lime_style"])
    run_experiment(cfg)
    first = {p.name: p.read_bytes() for p in (tmp_path / "run").glob("*.csv")}
    first_manifest = (tmp_path / "run" / "manifest.json").read_bytes()
    run_experiment(cfg)
    second = {p.name: p.read_bytes() for p in (tmp_path / "run").glob("*.csv")}
    assert first == second
    assert first_manifest == (tmp_path / "run" / "manifest.json").read_bytes()


def test_full_sweep_row_count_and_manifest_files(tmp_path):
    cfg = _config(tmp_path, datasets=[{"synthetic": i, "n": 30, "d": 3} for i in range(1, 7)],
                  methods=list(METHODS), k_range=[1, 2])
    manifest = run_experiment(cfg)
    out = tmp_path / "run"
    frame = pd.read_csv(out / "evaluation.csv")
    # 4 bandwidth methods x 7 bandwidths + 1 shapley row, per dataset
    assert len(frame) == 6 * (4 * len(BANDWIDTH_GRID) + 1)
    assert len(frame) >= 30
    for name in manifest["files"]:
        path = out / name
        assert path.exists(), name
        if path.suffix == ".csv":
            pd.read_csv(path)
        elif path.suffix == ".json":
            json.loads(path.read_text())
        elif path.suffix == ".npz":
            np.load(path).close()
    r2 = pd.read_csv(out / "supclus_r2_by_k.csv")
    assert set(r2["k"]) == {1, 2}
    scan = pd.read_csv(out / "bandwidth_scan.csv")
    assert (scan["criterion"] == "mse_coefficients").all()
    assert "shapley" not in set(scan["method"])
    assert len(scan) == 6 * 4 * len(BANDWIDTH_GRID)


def test_csv_dataset_uses_ice_and_preprocessing(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(-5, 5, size=(60, 2))
    frame = pd.DataFrame({"a": X[:, 0], "b": X[:, 1], "g": rng.choice(["u", "v"], 60),
                          "y": X[:, 0] ** 2 + rng.normal(size=60)})
    frame.to_csv(tmp_path / "real.csv", index=False)
    cfg = _config(tmp_path, datasets=[{"csv": str(tmp_path / "real.csv"), "target": "y",
                                       "categorical": ["g"]}],
                  bandwidths=[0.5, 1.0])
    run_experiment(cfg)
    out = tmp_path / "run" / "real"
    pre = json.loads((out / "preprocess.json").read_text())
    assert pre["indicators"] == {"g": ["g=u", "g=v"]}
    data = pd.read_csv(out / "interpretation_data.csv")
    assert data[["a", "b"]].min().min() >= -0.5 and data[["a", "b"]].max().max() <= 1.5
    scan = pd.read_csv(tmp_path / "run" / "bandwidth_scan.csv")
    assert (scan["criterion"] == "neg_ice_effect_correlation").all()
    ev = pd.read_csv(tmp_path / "run" / "evaluation.csv")
    assert ev["ice_effect_correlation"].notna().all()


def test_stage_failure_keeps_partial_artifacts(tmp_path):
    cfg = _config(tmp_path, datasets=[{"synthetic": 1, "n": 30, "d": 3},
                                      {"csv": str(tmp_path / "missing.csv"), "target": "y"}])
    with pytest.raises(StageError, match="missing/data"):
        run_experiment(cfg)
    out = tmp_path / "run"
    assert (out / "synthetic1" / "explanations_varimp.csv").exists()
    assert len(pd.read_csv(out / "evaluation.csv")) == len(BANDWIDTH_GRID)


def test_config_validation_and_yaml(tmp_path):
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"datasets": [{"synthetic": 1}], "bandwdths": [1]})
    with pytest.raises(ValueError, match="unknown methods"):
        ExperimentConfig.from_dict({"datasets": [{"synthetic": 1}], "methods": ["nope"]})
    with pytest.raises(ValueError, match="positive"):
        ExperimentConfig.from_dict({"datasets": [{"synthetic": 1}], "bandwidths": [0.0]})
    with pytest.raises(ValueError, match="exactly one"):
        ExperimentConfig.from_dict({"datasets": [{}]})
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"datasets": [{"synthetic": 2, "n": 50}], "seed": 4,
                                    "forest": {"n_trees": 7}}))
    cfg = ExperimentConfig.from_yaml(path, {"seed": 9, "out": None})
    assert cfg.seed == 9 and cfg.forest == ForestParams(7) and cfg.datasets[0].n == 50
    assert cfg.importance_forest == ForestParams()


def test_stage_seeds_distinct_and_stable():
    a = stage_seeds(0, 0)
    assert a == stage_seeds(0, 0)
    assert len(set(a.values())) == len(a)
    assert a != stage_seeds(0, 1) and a != stage_seeds(1, 0)


def test_dataset_run_caches_and_decomposes(tmp_path):
    cfg = _config(tmp_path, methods=["varimp", "iml_style", "lime_style", "supclus"])
    run = DatasetRun(cfg.datasets[0], cfg, 0)
    assert run.D.n == 40
    for method in cfg.methods:
        for e in run.explanations(method, 0.5):
            assert abs(e.local_prediction - (e.intercept + e.effects.sum())) < 1e-10
    assert run.explanations("varimp", 0.5) is run.explanations("varimp", 0.5)


def test_explain_one_sorted_and_constant_model():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(40, 3))
    const = train_forest(DataTable(X, np.full(40, 2.0), ["a", "b", "c"]), ForestParams(5), 0)
    D = DataTable(X, const(X), ["a", "b", "c"])
    for method in METHODS:
        out = explain_one(const, D, method, 3, h=0.5, lime_samples=50, shapley_permutations=5,
                          importance_params=ForestParams(5))
        assert all(e["effect"] == 0 for e in out["effects"])
    model = train_forest(DataTable(X, 3 * X[:, 1] - X[:, 0], ["a", "b", "c"]), ForestParams(20), 0)
    D = DataTable(X, model(X), ["a", "b", "c"])
    out = explain_one(model, D, "varimp", 5, importance_params=ForestParams(20))
    mags = [abs(e["effect"]) for e in out["effects"]]
    assert mags == sorted(mags, reverse=True)
    with pytest.raises(IndexError):
        explain_one(model, D, "varimp", 40)
    with pytest.raises(ValueError, match="unknown method"):
        explain_one(model, D, "magic", 0)
