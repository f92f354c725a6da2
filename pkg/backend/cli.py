"""
Command-line harness for the transient stability experiments.

    python -m backend.cli simulate --case backend/cases/wscc9.json --scenario backend/cases/wscc9_sweep.json
    python -m backend.cli tune --data runs/dataset.csv --optimizer ibcc
    python -m backend.cli eval --model runs/model.json --data runs/dataset.csv

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import __version__
from .chaos import orbit
from .dataset import load_csv, save_csv
from .exceptions import ConfigError, TsaError
from .experiments import StabilityExperimentTrainer, benchmark_optimizers, evaluate
from .llm import feature_weights, load_model, save_model
from .powersim import generate_dataset
from .schemas import ExperimentConfig, PowerCase, ScenarioConfig

logger = logging.getLogger("backend.cli")

DEFAULT_X0 = (0.5346, 0.5347)


def _package_versions() -> Dict[str, str]:
    import joblib
    import pydantic
    import scipy
    import sklearn

    return {"backend": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "pandas": pd.__version__,
            "joblib": joblib.__version__, "pydantic": pydantic.__version__}


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)


def write_manifest(output: Path, command: str, config: Dict[str, Any], seed: int) -> Path:
    """Sidecar ``<name>.manifest.json`` that records how ``output`` was produced."""
    manifest = {
        "command": command,
        "output": output.name,
        "config_sha256": hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest(),
        "config": config,
        "seed": seed,
        "versions": _package_versions(),
    }
    path = output.with_name(output.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def write_table(path: Path, frame: pd.DataFrame) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def _read_model(path: Path, cls):
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    return cls.model_validate_json(path.read_text(encoding="utf-8"))


def load_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file values overridden by the command-line flags."""
    values: Dict[str, Any] = {}
    if args.config is not None:
        try:
            values = json.loads(_read_text(args.config))
        except ValueError as exc:
            raise ConfigError(f"cannot parse {args.config}: {exc}") from exc
    overrides = {
        "seed": args.seed,
        "threads": args.threads,
        "out_dir": args.out_dir,
        "dataset_path": getattr(args, "data", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    optimizer = dict(values.get("optimizer", {}))
    for flag, key in (("population", "population"), ("generations", "max_generations")):
        if getattr(args, flag, None) is not None:
            optimizer[key] = getattr(args, flag)
    if optimizer:
        values["optimizer"] = optimizer
    return ExperimentConfig.model_validate(values)


def _read_text(path: Path) -> str:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    return path.read_text(encoding="utf-8")


def _out_path(config: ExperimentConfig, name: str) -> Path:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    return config.out_dir / name


def _config_dict(config: ExperimentConfig, **extra) -> Dict[str, Any]:
    payload = json.loads(config.model_dump_json())
    payload.pop("threads", None)  # never changes results
    payload["optimizer"].pop("threads", None)
    payload.update(extra)
    return payload


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    case_path = args.case or config.case_path
    scenario_path = args.scenario or config.scenario_path
    if case_path is None or scenario_path is None:
        raise ConfigError("simulate needs --case and --scenario")
    case = _read_model(Path(case_path), PowerCase)
    grid = _read_model(Path(scenario_path), ScenarioConfig)
    seed = args.seed if args.seed is not None else grid.seed
    skipped: List[dict] = []
    data = generate_dataset(case, grid, seed=seed, threads=config.threads or os.cpu_count(), skipped=skipped)

    out = save_csv(data, args.out or _out_path(config, "dataset.csv"))
    sidecar = write_json(out.with_name(out.stem + ".skipped.json"), skipped)
    manifest_config = {"case": json.loads(case.model_dump_json(by_alias=True)),
                       "scenario": json.loads(grid.model_dump_json()), "seed": seed}
    write_manifest(out, "simulate", manifest_config, seed)
    counts = data.class_counts()
    print(f"✅ {data.n_samples} samples ({counts[1]} stable, {counts[-1]} unstable) -> {out}")
    print(f"   {len(skipped)} skipped scenarios listed in {sidecar}")
    return 0


def cmd_tune(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    trainer = StabilityExperimentTrainer(config)
    train_set, test_set = trainer.split()
    result = trainer.tune(train_set, test_set, args.optimizer)

    prefix = f"{args.optimizer}_"
    trace_path = result.trace.save_csv(_out_path(config, prefix + "trace.csv"))
    model_path = save_model(result.model, _out_path(config, prefix + "model.json"))
    report = result.report.model_copy(update={"trace_path": str(trace_path),
                                              "trained_model_path": str(model_path)})
    report_path = write_json(_out_path(config, prefix + "report.json"), report.model_dump(by_alias=True))
    manifest_config = _config_dict(config, optimizer_name=args.optimizer)
    for path in (trace_path, model_path, report_path):
        write_manifest(path, "tune", manifest_config, config.seed)

    print(f"✅ {args.optimizer}: lambda={report.lambda_:.6g} sigma={report.sigma:.6g}")
    print(f"   CV accuracy {report.cv_accuracy:.2f}%, test accuracy {report.test.accuracy:.2f}% "
          f"({report.generations_run} generations, {report.chaos_triggers} chaotic searches)")
    print(f"   report: {report_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    model = load_model(args.model)
    data = load_csv(args.data)
    report = evaluate(model, data)
    out = write_json(_out_path(config, "eval.json"), report.model_dump())
    write_manifest(out, "eval", {"model": str(args.model), "data": str(args.data)}, config.seed)
    c = report.confusion
    table = pd.DataFrame([[c.stable_as_stable, c.stable_as_unstable],
                          [c.unstable_as_stable, c.unstable_as_unstable]],
                         index=["actual stable", "actual unstable"],
                         columns=["predicted stable", "predicted unstable"])
    print(f"✅ accuracy {report.accuracy:.2f}% on {report.n_samples} samples")
    print(table.to_string())
    return 0


def cmd_robustness(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    counts = args.counts if args.counts is not None else config.irrelevant_counts
    if any(c < 0 for c in counts):
        raise ConfigError("irrelevant feature counts must be >= 0")
    table = StabilityExperimentTrainer(config).robustness(counts, args.optimizer)
    out = write_table(_out_path(config, "robustness.csv"), table)
    write_manifest(out, "robustness", _config_dict(config, counts=list(counts),
                                                   optimizer_name=args.optimizer), config.seed)
    print(table.to_string(index=False))
    return 0


def cmd_weights(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    model = load_model(args.model)
    table = pd.DataFrame(feature_weights(model), columns=["feature", "weight"])
    out = write_table(args.out or _out_path(config, "weights.csv"), table)
    write_manifest(out, "weights", {"model": str(args.model)}, config.seed)
    print(table.to_string(index=False))
    return 0


def cmd_chaos_demo(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    x0 = tuple(args.x0)
    rng = np.random.default_rng(config.seed)
    outputs = []
    for variant, improved in (("standard", False), ("improved", True)):
        points = orbit(x0, args.steps, improved=improved, rng=rng if improved else None)
        frame = pd.DataFrame(points, columns=[f"x{i + 1}" for i in range(points.shape[1])])
        frame.insert(0, "step", np.arange(1, args.steps + 1))
        out = _out_path(config, f"chaos_{variant}.csv")
        frame.to_csv(out, index=False, float_format="%.17g", lineterminator="\n")
        write_manifest(out, "chaos-demo", {"x0": list(x0), "steps": args.steps}, config.seed)
        distinct = [int(frame[c].nunique()) for c in frame.columns[1:]]
        outputs.append(f"{variant}: {out} (distinct values per coordinate {distinct})")
    print("✅ " + "\n   ".join(outputs))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    drop = args.drop if args.drop is not None else config.ablation_drop
    table = StabilityExperimentTrainer(config).ablate(drop, args.optimizer)
    out = write_table(_out_path(config, "ablation.csv"), table)
    write_manifest(out, "ablate", _config_dict(config, drop=drop, optimizer_name=args.optimizer), config.seed)
    print(table.to_string(index=False))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    if args.tolerance is not None:
        config = config.model_copy(update={"compare_tolerance": args.tolerance})
    runs = args.runs if args.runs is not None else config.compare_runs
    table = StabilityExperimentTrainer(config).compare(args.optimizers, runs)
    out = write_table(_out_path(config, "compare.csv"), table.drop(columns=["mean_seconds"]))
    write_manifest(out, "compare", _config_dict(config, optimizers=list(args.optimizers), runs=runs),
                   config.seed)
    print(table.to_string(index=False))
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    config = load_experiment_config(args)
    optimizer = config.optimizer
    if config.threads is not None:
        optimizer = optimizer.model_copy(update={"threads": config.threads})
    table = benchmark_optimizers(args.function, args.optimizers, args.runs, args.tolerance,
                                 optimizer, config.seed)
    out = write_table(_out_path(config, f"benchmark_{args.function}.csv"), table.drop(columns=["mean_seconds"]))
    write_manifest(out, "benchmark", _config_dict(config, function=args.function, runs=args.runs,
                                                  tolerance=args.tolerance,
                                                  optimizers=list(args.optimizers)), config.seed)
    print(table.to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsa", description="LLM/IBCC transient stability assessment")
    parser.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    parser.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    parser.add_argument("--out-dir", type=Path, help="output directory (default: runs)")
    parser.add_argument("--config", type=Path, help="experiment config JSON")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a labelled dataset from a scenario grid")
    p.add_argument("--case", type=Path)
    p.add_argument("--scenario", type=Path)
    p.add_argument("--out", type=Path, help="dataset CSV path (default: <out-dir>/dataset.csv)")
    p.set_defaults(func=cmd_simulate)

    optimizer_choices = ["ibcc", "bcc", "random"]
    p = sub.add_parser("tune", help="tune (lambda, sigma), train and evaluate")
    p.add_argument("--data", type=Path)
    p.add_argument("--optimizer", choices=optimizer_choices, default="ibcc")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="test accuracy versus injected irrelevant features")
    p.add_argument("--data", type=Path)
    p.add_argument("--counts", type=int, nargs="+")
    p.add_argument("--optimizer", choices=optimizer_choices, default="ibcc")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("weights", help="list the learned feature weights")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("chaos-demo", help="orbits of the standard and improved Tent maps")
    p.add_argument("--x0", type=float, nargs="+", default=list(DEFAULT_X0))
    p.add_argument("--steps", type=int, default=5000)
    p.set_defaults(func=cmd_chaos_demo)

    p = sub.add_parser("ablate", help="retune after removing the lowest/highest weighted features")
    p.add_argument("--data", type=Path)
    p.add_argument("--drop", type=int)
    p.add_argument("--optimizer", choices=optimizer_choices, default="ibcc")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", help="repeated tuning runs per optimizer")
    p.add_argument("--data", type=Path)
    p.add_argument("--optimizers", nargs="+", choices=optimizer_choices, default=optimizer_choices)
    p.add_argument("--runs", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("benchmark", help="optimizer success counts on analytic functions")
    p.add_argument("--function", choices=["sphere", "rastrigin", "two_basin"], default="rastrigin")
    p.add_argument("--optimizers", nargs="+", choices=optimizer_choices, default=["ibcc", "bcc"])
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=0.5)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return ConfigError.exit_code
    except TsaError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
