"""Experiment orchestration: data -> black box -> explainers -> measures -> files."""

from __future__ import annotations

import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .baselines import (DEFAULT_LIME_SAMPLES, LimePool, ShapleyExplanation,
                        explain_iml_all, shapley_mc)
from .data import (DataTable, GroundTruth, apply_preprocess, fit_preprocess,
                   generate_synthetic, load_csv, split_indices)
from .forest import (Forest, ForestParams, ImportanceMatrix, local_importance, predict,
                     save_forest, train_forest)
from .ice import DEFAULT_GRID_SIZE, ice_effects
from .metrics import EvalReport, evaluate, slope_plot_data, write_reports_csv
from .supclus import ClusterSolution, explain_all_supclus, select_k
from .varimp import (BANDWIDTH_GRID, coefficient_matrix, effects_matrix, explain_all,
                     write_explanations_csv)

log = logging.getLogger(__name__)

METHODS = ("varimp", "supclus", "iml_style", "lime_style", "shapley")
BANDWIDTH_METHODS = ("varimp", "supclus", "iml_style", "lime_style")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


# ---------------------------------------------------------------------------
# configuration

@dataclass
class DatasetSpec:
    synthetic: int | None = None
    n: int = 1000  # rows per half
    d: int = 20
    csv: str | None = None
    target: str | None = None
    categorical: list[str] = field(default_factory=list)

    @property
    def name(self) -> str:
        return f"synthetic{self.synthetic}" if self.synthetic else Path(self.csv).stem

    def validate(self) -> None:
        if (self.synthetic is None) == (self.csv is None):
            raise ValueError("a dataset needs exactly one of 'synthetic' or 'csv'")
        if self.csv is not None and not self.target:
            raise ValueError(f"dataset {self.csv}: 'target' is required")
        if self.synthetic is not None and self.n < 1:
            raise ValueError("n must be positive")


@dataclass
class ExperimentConfig:
    datasets: list[DatasetSpec]
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    bandwidths: list[float] = field(default_factory=lambda: list(BANDWIDTH_GRID))
    M: int | None = None  # None -> d
    k_range: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    forest: ForestParams = field(default_factory=ForestParams)
    importance_forest: ForestParams = field(default_factory=ForestParams)
    lime_samples: int = DEFAULT_LIME_SAMPLES
    shapley_permutations: int = 25
    ice_grid: int = DEFAULT_GRID_SIZE
    ice: bool | None = None  # None -> only when true coefficients are unknown
    slope_points: int = 50
    slope_halfwidth: float = 0.05
    seed: int = 0
    out: str = "runs/experiment"

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        obj["datasets"] = [DatasetSpec(**d) for d in obj.get("datasets", [])]
        for key in ("forest", "importance_forest"):
            if key in obj and not isinstance(obj[key], ForestParams):
                obj[key] = ForestParams(**(obj[key] or {}))
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            obj = yaml.safe_load(fh) or {}
        obj.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if not self.datasets:
            raise ValueError("no datasets configured")
        for ds in self.datasets:
            ds.validate()
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; known: {list(METHODS)}")
        if not self.bandwidths or any(not h > 0 for h in self.bandwidths):
            raise ValueError("bandwidths must be positive")
        if not self.k_range or min(self.k_range) < 1:
            raise ValueError("k_range must contain positive cluster counts")
        for ds in self.datasets:
            if ds.synthetic is not None and max(self.k_range) > ds.n:
                raise ValueError(f"k_range exceeds the {ds.n} instances of {ds.name}")


def stage_seeds(seed: int, dataset_index: int) -> dict[str, int]:
    names = ("data", "split", "black_box", "importance_forest", "importance", "lime",
             "shapley", "supclus", "slope")
    ss = np.random.SeedSequence([seed, dataset_index])
    states = ss.generate_state(len(names))
    return {name: int(s) for name, s in zip(names, states)}


# ---------------------------------------------------------------------------
# one dataset

class DatasetRun:
    """All intermediate results for one dataset, computed lazily and cached."""

    def __init__(self, spec: DatasetSpec, config: ExperimentConfig, dataset_index: int = 0):
        self.spec = spec
        self.config = config
        self.seeds = stage_seeds(config.seed, dataset_index)
        self._cache: dict = {}

    # -- data and models --------------------------------------------------
    @cached_property
    def _split(self):
        spec, seeds = self.spec, self.seeds
        if spec.synthetic is not None:
            table, truth = generate_synthetic(spec.synthetic, 2 * spec.n, spec.d, seeds["data"])
        else:
            table, truth = load_csv(spec.csv, spec.target, spec.categorical), None
        train_rows, interp_rows = split_indices(table.n, seeds["split"])
        d_train, d_interp = table.take(train_rows), table.take(interp_rows)
        preprocess = None
        if spec.synthetic is None:
            preprocess = fit_preprocess(d_train)
            d_train = apply_preprocess(preprocess, d_train)
            d_interp = apply_preprocess(preprocess, d_interp)
        truth_interp = truth.take(interp_rows) if truth is not None else None
        return d_train, d_interp, truth_interp, preprocess

    @property
    def train_table(self) -> DataTable:
        return self._split[0]

    @property
    def truth(self) -> GroundTruth | None:
        return self._split[2]

    @cached_property
    def black_box(self) -> Forest:
        return train_forest(self.train_table, self.config.forest, self.seeds["black_box"])

    @cached_property
    def D(self) -> DataTable:
        """Interpretation half with black-box predictions as the target."""
        interp = self._split[1]
        return interp.with_target(predict(self.black_box, interp.features))

    @property
    def M(self) -> int:
        return self.D.d if self.config.M is None else self.config.M

    @cached_property
    def importances(self) -> ImportanceMatrix:
        forest = train_forest(self.D, self.config.importance_forest,
                              self.seeds["importance_forest"])
        return local_importance(forest, self.D, self.seeds["importance"])

    @cached_property
    def lime_pool(self) -> LimePool:
        return LimePool(self.black_box, self.D.d, self.config.lime_samples, self.seeds["lime"])

    @property
    def use_ice(self) -> bool:
        return self.truth is None if self.config.ice is None else self.config.ice

    @cached_property
    def ice(self) -> tuple[np.ndarray, np.ndarray]:
        return ice_effects(self.black_box, self.D, self.config.ice_grid)

    # -- explanations -----------------------------------------------------
    def explanations(self, method: str, h: float | None = None):
        key = (method, h)
        if key in self._cache:
            return self._cache[key]
        D, M = self.D, self.M
        if method == "varimp":
            out = explain_all(D, self.importances, h, M)[0]
        elif method == "iml_style":
            out = explain_iml_all(D, h, M)
        elif method == "lime_style":
            out = [self.lime_pool.explain(D.features[i], D.target[i], h, M, index=i)
                   for i in range(D.n)]
        elif method == "supclus":
            out = explain_all_supclus(self.cluster_solution(h), D)
        elif method == "shapley":
            out = self._shapley()
        else:
            raise ValueError(f"unknown method {method!r}")
        self._cache[key] = out
        return out

    def cluster_solution(self, h: float) -> ClusterSolution:
        key = ("cluster", h)
        if key not in self._cache:
            B = coefficient_matrix(self.explanations("varimp", h))
            self._cache[key] = select_k(self.D, B, self.M, self.config.k_range,
                                        self.seeds["supclus"])
        return self._cache[key]

    def _shapley(self) -> list[ShapleyExplanation]:
        D = self.D
        baseline = float(D.target.mean())
        seeds = np.random.SeedSequence(self.seeds["shapley"]).generate_state(D.n)
        return [shapley_mc(self.black_box, D.features[i], D, self.config.shapley_permutations,
                           int(seeds[i]), index=i, baseline=baseline) for i in range(D.n)]

    # -- measures ---------------------------------------------------------
    def report(self, method: str, h: float | None = None) -> EvalReport:
        key = ("report", method, h)
        if key in self._cache:
            return self._cache[key]
        exps = self.explanations(method, h)
        truth = self.truth
        meta = {"dataset": self.spec.name, "h": h, "M": self.M, "seed": self.config.seed}
        ice = self.ice[1] if self.use_ice else None
        if method == "shapley":
            rep = evaluate(method, effects=np.array([e.values for e in exps]),
                           true_effects=None if truth is None else truth.true_effects,
                           ice_effects=ice, metadata=meta)
        else:
            if method == "supclus":
                meta["k"] = self.cluster_solution(h).k
            rep = evaluate(method,
                           coefficients=np.array([e.coefficients for e in exps]),
                           effects=effects_matrix(exps),
                           local_predictions=np.array([e.local_prediction for e in exps]),
                           black_box=self.D.target,
                           true_coefficients=None if truth is None else truth.true_coefficients,
                           true_effects=None if truth is None else truth.true_effects,
                           ice_effects=ice, metadata=meta)
        self._cache[key] = rep
        return rep

    def score(self, report: EvalReport) -> float:
        """Bandwidth-selection score (lower is better): coefficient MSE when the
        truth is known, otherwise negated ICE-effect correlation."""
        if report.mse_coefficients is not None:
            return report.mse_coefficients
        c = report.ice_effect_correlation
        return np.inf if c is None else -c.r

    def best_bandwidth(self, method: str, bandwidths=None) -> float:
        hs = list(bandwidths or self.config.bandwidths)
        scores = [self.score(self.report(method, h)) for h in hs]
        return hs[int(np.argmin(scores))]


# ---------------------------------------------------------------------------
# full experiment

def _as_local(method, exps):
    return [e.as_local() for e in exps] if method == "shapley" else exps


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every configured dataset and method and write all artifacts.

    Returns the manifest (also written to ``manifest.json``).
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"package_version": __version__, "numpy_version": np.__version__,
                "python_version": platform.python_version(), "config": config.to_dict(),
                "datasets": {}, "files": []}

    def record(path: Path):
        manifest["files"].append(str(path.relative_to(out)))

    reports: list[EvalReport] = []
    scan_rows, r2_rows = [], []
    for idx, spec in enumerate(config.datasets):
        run = DatasetRun(spec, config, idx)
        ddir = out / spec.name
        ddir.mkdir(exist_ok=True)
        manifest["datasets"][spec.name] = {"seeds": run.seeds}
        stage = "data"
        try:
            D = run.D
            stage = "model"
            path = ddir / "model.npz"
            save_forest(run.black_box, path)
            record(path)
            path = ddir / "interpretation_data.csv"
            D.to_csv(path, target_name="f")
            record(path)
            if run._split[3] is not None:
                path = ddir / "preprocess.json"
                path.write_text(json.dumps(run._split[3].to_dict(), indent=1))
                record(path)
            if any(m in config.methods for m in ("varimp", "supclus")):
                stage = "importance"
                path = ddir / "importance.csv"
                pd.DataFrame(run.importances.normalized, columns=D.feature_names).to_csv(
                    path, index=False, float_format="%.17g")
                record(path)
            for method in config.methods:
                stage = method
                hs = config.bandwidths if method in BANDWIDTH_METHODS else [None]
                for h in hs:
                    rep = run.report(method, h)
                    reports.append(rep)
                    if h is None:
                        continue
                    scan_rows.append({"dataset": spec.name, "method": method, "h": h,
                                      "score": run.score(rep),
                                      "criterion": ("mse_coefficients"
                                                    if rep.mse_coefficients is not None
                                                    else "neg_ice_effect_correlation")})
                    if method == "supclus":
                        sol = run.cluster_solution(h)
                        for k, r2 in sol.r2_by_k.items():
                            r2_rows.append({"dataset": spec.name, "h": h, "k": k,
                                            "weighted_r2": r2, "selected": k == sol.k})
                best_h = run.best_bandwidth(method) if method in BANDWIDTH_METHODS else None
                exps = _as_local(method, run.explanations(method, best_h))
                path = ddir / f"explanations_{method}.csv"
                write_explanations_csv(exps, D.feature_names, path)
                record(path)
                if method == "supclus":
                    path = ddir / "supclus_solution.json"
                    run.cluster_solution(best_h).write_json(path, D.feature_names)
                    record(path)
                if method != "shapley":
                    slopes = np.array([e.coefficients for e in exps])
                    n_pts = min(config.slope_points, D.n)
                    parts = []
                    for j, name in enumerate(D.feature_names):
                        part = slope_plot_data(D.features, D.target, slopes, j, n_pts,
                                               config.slope_halfwidth, run.seeds["slope"])
                        part.insert(0, "feature", name)
                        parts.append(part)
                    path = ddir / f"slopes_{method}.csv"
                    pd.concat(parts, ignore_index=True).to_csv(path, index=False,
                                                               float_format="%.17g")
                    record(path)
                manifest["datasets"][spec.name].setdefault("best_h", {})[method] = best_h
        except Exception as exc:
            log.error("dataset %s, stage %s: %s", spec.name, stage, exc)
            _write_tables(out, reports, scan_rows, r2_rows, manifest, record)
            raise StageError(f"{spec.name}/{stage}", exc) from exc

    _write_tables(out, reports, scan_rows, r2_rows, manifest, record)
    return manifest


def _write_tables(out, reports, scan_rows, r2_rows, manifest, record):
    path = out / "evaluation.csv"
    write_reports_csv(reports, path)
    record(path)
    path = out / "evaluation.json"
    path.write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True))
    record(path)
    path = out / "bandwidth_scan.csv"
    pd.DataFrame(scan_rows, columns=["dataset", "method", "h", "score", "criterion"]).to_csv(
        path, index=False, float_format="%.17g")
    record(path)
    path = out / "supclus_r2_by_k.csv"
    pd.DataFrame(r2_rows, columns=["dataset", "h", "k", "weighted_r2", "selected"]).to_csv(
        path, index=False, float_format="%.17g")
    record(path)
    manifest["files"] = sorted(set(manifest["files"]) | {"manifest.json"})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# single-instance explanation from saved artifacts

def read_table(path, target: str | None = None, model: Forest | None = None) -> DataTable:
    """Feature table from CSV; every column except ``target`` is a feature.
    With a model, the target becomes the model's predictions."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if target is not None:
        if target not in frame.columns:
            raise ValueError(f"{path}: column {target!r} not found")
        frame = frame.drop(columns=[target])
    X = frame.to_numpy(dtype=float)
    if model is not None and X.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features but {path} "
                         f"has {X.shape[1]}")
    y = predict(model, X) if model is not None else np.zeros(len(X))
    return DataTable(X, y, [str(c) for c in frame.columns])


def explain_one(model: Forest, D: DataTable, method: str, index: int, h: float = 0.5,
                M: int | None = None, seed: int = 0, k_range=range(1, 6),
                lime_samples: int = DEFAULT_LIME_SAMPLES,
                shapley_permutations: int = 100,
                importance_params: ForestParams | None = None) -> dict:
    """Explain one instance of ``D`` (target = model predictions) as a dict
    with effects sorted by decreasing magnitude."""
    from .baselines import explain_iml_style, explain_lime_style
    from .supclus import explain_instance_supclus
    from .varimp import explain_instance

    if not 0 <= index < D.n:
        raise IndexError(f"index {index} out of range for {D.n} rows")
    M = D.d if M is None else M
    seeds = stage_seeds(seed, 0)
    if method in ("varimp", "supclus"):
        forest = train_forest(D, importance_params, seeds["importance_forest"])
        imp = local_importance(forest, D, seeds["importance"])
        if method == "varimp":
            exp = explain_instance(D, imp, index, h, M)
        else:
            B = coefficient_matrix(explain_all(D, imp, h, M)[0])
            sol = select_k(D, B, M, k_range, seeds["supclus"])
            exp = explain_instance_supclus(sol, D, index)
    elif method == "iml_style":
        exp = explain_iml_style(D, index, h, M)
    elif method == "lime_style":
        exp = explain_lime_style(model, D.features[index], lime_samples, h, M,
                                 seeds["lime"], index)
    elif method == "shapley":
        exp = shapley_mc(model, D.features[index], D, shapley_permutations, seeds["shapley"],
                         index=index, baseline=float(D.target.mean())).as_local()
    else:
        raise ValueError(f"unknown method {method!r}; known: {list(METHODS)}")
    order = np.argsort(-np.abs(exp.effects), kind="stable")
    return {"method": method, "index": index, "intercept": exp.intercept,
            "local_prediction": exp.local_prediction,
            "black_box_prediction": exp.black_box_prediction,
            "effects": [{"feature": D.feature_names[j], "coefficient": float(exp.coefficients[j]),
                         "value": float(D.features[index, j]), "effect": float(exp.effects[j])}
                        for j in order]}
