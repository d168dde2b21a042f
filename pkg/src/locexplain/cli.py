"""Command line entry point: ``locexplain {generate,train,explain,evaluate,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .data import generate_synthetic, load_csv
from .experiment import (METHODS, ExperimentConfig, StageError, explain_one, read_table,
                         run_experiment)
from .forest import ForestParams, load_forest, save_forest, train_forest
from .metrics import evaluate

log = logging.getLogger("locexplain")


def _forest_params(args) -> ForestParams:
    return ForestParams(n_trees=args.n_trees, mtry=args.mtry, min_leaf=args.min_leaf)


def cmd_generate(args) -> None:
    table, truth = generate_synthetic(args.dataset, args.n, args.d, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, target_name="y")
    truth_path = out.with_name(out.stem + "_truth.csv")
    frame = pd.DataFrame(truth.true_coefficients,
                         columns=[f"coef_{c}" for c in table.feature_names])
    for j, c in enumerate(table.feature_names):
        frame[f"effect_{c}"] = truth.true_effects[:, j]
    frame.to_csv(truth_path, index=False, float_format="%.17g")
    log.info("wrote %s and %s", out, truth_path)


def cmd_train(args) -> None:
    table = load_csv(args.data, args.target, args.categorical or ())
    forest = train_forest(table, _forest_params(args), args.seed)
    save_forest(forest, args.out)
    log.info("trained %d trees on %d rows; wrote %s", forest.n_trees, table.n, args.out)


def cmd_explain(args) -> None:
    model = load_forest(args.model)
    D = read_table(args.data, args.target, model)
    result = explain_one(model, D, args.method, args.index, h=args.h, M=args.M,
                         seed=args.seed, k_range=range(1, args.k_max + 1),
                         lime_samples=args.lime_samples,
                         shapley_permutations=args.shapley_permutations)
    json.dump(result, sys.stdout, indent=1)
    sys.stdout.write("\n")


def _matrix(frame: pd.DataFrame, prefix: str) -> np.ndarray | None:
    cols = [c for c in frame.columns if c.startswith(prefix)]
    return frame[cols].to_numpy(dtype=float) if cols else None


def cmd_evaluate(args) -> None:
    exps = pd.read_csv(args.explanations, float_precision="round_trip")
    coefficients = _matrix(exps, "coef_")
    if args.method == "shapley":
        coefficients = None
    truth = pd.read_csv(args.truth, float_precision="round_trip") if args.truth else None
    ice = pd.read_csv(args.ice, float_precision="round_trip") if args.ice else None
    report = evaluate(args.method, coefficients=coefficients,
                      effects=_matrix(exps, "effect_"),
                      local_predictions=None if args.method == "shapley" else exps["g"].to_numpy(),
                      black_box=exps["f"].to_numpy(),
                      true_coefficients=None if truth is None else _matrix(truth, "coef_"),
                      true_effects=None if truth is None else _matrix(truth, "effect_"),
                      ice_effects=None if ice is None else _matrix(ice, "effect_"))
    text = json.dumps(report.to_dict(), indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def cmd_sweep(args) -> None:
    overrides = {"seed": args.seed, "out": args.out}
    if args.config:
        config = ExperimentConfig.from_yaml(args.config, overrides)
    else:
        datasets = [{"synthetic": i, "n": args.n, "d": args.d} for i in args.datasets]
        config = ExperimentConfig.from_dict({"datasets": datasets,
                                             **{k: v for k, v in overrides.items()
                                                if v is not None}})
    if args.methods:
        config.methods = args.methods
        config.validate()
    manifest = run_experiment(config)
    log.info("wrote %d files to %s", len(manifest["files"]), config.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="locexplain", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def forest_flags(p):
        p.add_argument("--n-trees", type=int, default=500)
        p.add_argument("--mtry", type=int, default=None)
        p.add_argument("--min-leaf", type=int, default=5)

    p = sub.add_parser("generate", help="write a synthetic dataset and its true slopes")
    p.add_argument("--dataset", type=int, required=True, choices=range(1, 7))
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the black-box forest on a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--categorical", nargs="*")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    forest_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="explain one instance as JSON on stdout")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", default=None, help="column to drop from the features")
    p.add_argument("--method", choices=METHODS, default="varimp")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--lime-samples", type=int, default=5000)
    p.add_argument("--shapley-permutations", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="score an explanation CSV against truth/ICE")
    p.add_argument("--explanations", required=True)
    p.add_argument("--method", default="unknown")
    p.add_argument("--truth", default=None)
    p.add_argument("--ice", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run a full experiment from a config file")
    p.add_argument("--config", default=None)
    p.add_argument("--datasets", type=int, nargs="*", default=[1, 2, 3, 4, 5, 6])
    p.add_argument("--methods", nargs="*", choices=METHODS, default=None)
    p.add_argument("--n", type=int, default=1000, help="rows per half")
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, IndexError, OSError, RuntimeError) as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
