import json

import numpy as np
import pandas as pd
import pytest

from locexplain.cli import main
from locexplain.data import generate_synthetic


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Dataset 2 (d=4) generated, and a forest trained on it, through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--dataset", "2", "--n", "300", "--d", "4", "--seed", "1",
                 "--out", str(root / "d2.csv")]) == 0
    assert main(["train", "--data", str(root / "d2.csv"), "--target", "y", "--n-trees", "100",
                 "--out", str(root / "model.npz")]) == 0
    return root


def test_generate_writes_data_and_truth(workdir):
    table, truth = generate_synthetic(2, 300, 4, seed=1)
    data = pd.read_csv(workdir / "d2.csv", float_precision="round_trip")
    assert np.array_equal(data.drop(columns="y").to_numpy(), table.features)
    coef = pd.read_csv(workdir / "d2_truth.csv", float_precision="round_trip")
    assert np.array_equal(coef[[f"coef_X{j}" for j in range(1, 5)]].to_numpy(),
                          truth.true_coefficients)


def test_explain_outputs_sorted_effects(workdir, capsys):
    data = pd.read_csv(workdir / "d2.csv")
    idx = int(np.argmin(np.abs(data["X1"].to_numpy() - 0.2)))
    capsys.readouterr()
    assert main(["explain", "--model", str(workdir / "model.npz"), "--data",
                 str(workdir / "d2.csv"), "--target", "y", "--index", str(idx),
                 "--h", "0.1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["method"] == "varimp" and out["index"] == idx
    mags = [abs(e["effect"]) for e in out["effects"]]
    assert mags == sorted(mags, reverse=True)
    top = out["effects"][0]
    # left of the breakpoint the true slope of X1 is +20
    assert top["feature"] == "X1" and top["coefficient"] > 0
    total = out["intercept"] + sum(e["effect"] for e in out["effects"])
    assert abs(out["local_prediction"] - total) < 1e-10


@pytest.mark.parametrize("method", ["iml_style", "lime_style", "shapley"])
def test_explain_other_methods(workdir, capsys, method):
    capsys.readouterr()
    assert main(["explain", "--model", str(workdir / "model.npz"), "--data",
                 str(workdir / "d2.csv"), "--target", "y", "--index", "0", "--method", method,
                 "--lime-samples", "200", "--shapley-permutations", "5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["effects"]) == 4


def test_explain_errors_exit_one(workdir, capsys):
    assert main(["explain", "--model", str(workdir / "model.npz"), "--data",
                 str(workdir / "d2.csv"), "--target", "y", "--index", "10000"]) == 1
    assert "out of range" in capsys.readouterr().err
    assert main(["explain", "--model", str(workdir / "model.npz"), "--data",
                 str(workdir / "d2.csv"), "--index", "0"]) == 1
    assert "features" in capsys.readouterr().err
    assert main(["train", "--data", str(workdir / "none.csv"), "--target", "y",
                 "--out", str(workdir / "m.npz")]) == 1


def test_evaluate_perfect_explanations(workdir, tmp_path, capsys):
    truth = pd.read_csv(workdir / "d2_truth.csv", float_precision="round_trip")
    coef = truth.filter(like="coef_")
    frame = pd.concat([coef, truth.filter(like="effect_")], axis=1)
    frame["g"] = truth.filter(like="effect_").sum(axis=1)
    frame["f"] = frame["g"] + 0.5
    frame.to_csv(tmp_path / "e.csv", index=False, float_format="%.17g")
    capsys.readouterr()
    assert main(["evaluate", "--explanations", str(tmp_path / "e.csv"), "--method", "varimp",
                 "--truth", str(workdir / "d2_truth.csv"), "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["mse_coefficients"] == 0.0
    assert rep["effect_correlation"]["r"] == pytest.approx(1.0)
    assert json.loads(capsys.readouterr().out) == rep


def test_sweep_with_yaml_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("datasets:\n  - {synthetic: 3, n: 30, d: 3}\nmethods: [varimp, iml_style]\n"
                   "forest: {n_trees: 10}\nimportance_forest: {n_trees: 10}\n"
                   "bandwidths: [0.5, 1.0]\nslope_points: 4\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    frame = pd.read_csv(tmp_path / "o" / "evaluation.csv")
    assert len(frame) == 4
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert all((tmp_path / "o" / f).exists() for f in manifest["files"])


def test_sweep_rejects_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("datasets:\n  - {synthetic: 1}\nbandwith: [1]\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["nope"])
    assert info.value.code != 0
