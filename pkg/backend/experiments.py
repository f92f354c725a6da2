import logging
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, confusion_matrix

from .bcc import CrossValidationFitness, OptimizerTrace, run_optimizer
from .benchmarks import get_benchmark
from .dataset import (Dataset, inject_irrelevant_features, kfold_split, load_csv, select_features,
                      stratified_train_test_split)
from .exceptions import ConfigError, DatasetError
from .llm import LlmHyperparams, LlmModel, feature_weights, predict_many, train
from .schemas import (ConfusionCounts, EvaluationReport, ExperimentConfig, FeatureWeight,
                      OptimizerConfig, RunReport)

logger = logging.getLogger(__name__)


@dataclass
class TuneResult:
    report: RunReport
    model: LlmModel
    trace: OptimizerTrace


def evaluate(model: LlmModel, data: Dataset) -> EvaluationReport:
    """Accuracy (percent) and the 2x2 confusion table of ``model`` on ``data``."""
    if data.n_samples == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    if tuple(data.feature_names) != tuple(model.feature_names):
        missing = sorted(set(model.feature_names) - set(data.feature_names))
        raise DatasetError(f"dataset features do not match the model (missing {missing[:5]})")
    predicted = predict_many(model, data.features)
    table = confusion_matrix(data.labels, predicted, labels=[1, -1])
    confusion = ConfusionCounts(
        stable_as_stable=int(table[0, 0]),
        stable_as_unstable=int(table[0, 1]),
        unstable_as_stable=int(table[1, 0]),
        unstable_as_unstable=int(table[1, 1]),
    )
    accuracy = 100.0 * accuracy_score(data.labels, predicted)
    return EvaluationReport(n_samples=data.n_samples, accuracy=accuracy, confusion=confusion)


class StabilityExperimentTrainer:
    """Tunes, trains and evaluates the stability classifier for one experiment config"""

    def __init__(self, config: ExperimentConfig, dataset: Optional[Dataset] = None):
        self.config = config
        self.dataset = dataset

    def load_dataset(self) -> Dataset:
        if self.dataset is None:
            if self.config.dataset_path is None:
                raise ConfigError("no dataset given")
            self.dataset = load_csv(self.config.dataset_path)
        return self.dataset

    def split(self, data: Optional[Dataset] = None) -> Tuple[Dataset, Dataset]:
        """Stratified train/test split with the configured fraction and seed."""
        data = data or self.load_dataset()
        train_set, test_set = stratified_train_test_split(data, self.config.train_fraction,
                                                          self.config.split_seed)
        logger.info(f"Split {data.n_samples} samples into {train_set.n_samples} train / "
                    f"{test_set.n_samples} test")
        return train_set, test_set

    def optimizer_config(self, seed: Optional[int] = None) -> OptimizerConfig:
        update = {"seed": self.config.seed if seed is None else seed}
        update["threads"] = self.config.threads or os.cpu_count()
        return self.config.optimizer.model_copy(update=update)

    def tune(self, train_set: Dataset, test_set: Dataset, optimizer: str = "ibcc",
             seed: Optional[int] = None) -> TuneResult:
        """Search (lambda, sigma) on CV accuracy, fit the final model and score the test split."""
        if min(train_set.class_counts().values()) == 0:
            raise DatasetError("training data holds a single class")
        opt_config = self.optimizer_config(seed)
        folds = kfold_split(train_set.n_samples, self.config.folds, opt_config.seed, train_set.labels)
        fitness = CrossValidationFitness(train_set, folds, self.config.llm)

        logger.info(f"Tuning with {optimizer} on {train_set.n_samples} samples x "
                    f"{train_set.n_features} features")
        started = time.perf_counter()
        best, cv_accuracy, trace = run_optimizer(optimizer, fitness, opt_config)
        search_time = time.perf_counter() - started

        lambda_, sigma = (float(v) for v in best)
        started = time.perf_counter()
        model = train(train_set, LlmHyperparams(lambda_, sigma), self.config.llm)
        train_time = time.perf_counter() - started
        test_report = evaluate(model, test_set)
        logger.info(f"{optimizer}: lambda={lambda_:.6g} sigma={sigma:.6g} "
                    f"CV {cv_accuracy:.2f}% test {test_report.accuracy:.2f}%")

        report = RunReport(
            optimizer=optimizer,
            lambda_=lambda_,
            sigma=sigma,
            cv_accuracy=cv_accuracy,
            test=test_report,
            n_train=train_set.n_samples,
            feature_weights=[FeatureWeight(feature=name, weight=w) for name, w in feature_weights(model)],
            generations_run=trace.generations_run,
            chaos_triggers=trace.chaos_triggers,
            seed=opt_config.seed,
            timings={"search_seconds": search_time, "final_train_seconds": train_time},
        )
        return TuneResult(report, model, trace)

    def robustness(self, counts: Sequence[int], optimizer: str = "ibcc") -> pd.DataFrame:
        """Retune after appending 0..N standard normal columns; one row per count."""
        data = self.load_dataset()
        rows = []
        for count in counts:
            noisy = inject_irrelevant_features(data, count, self.config.seed)
            train_set, test_set = self.split(noisy)
            result = self.tune(train_set, test_set, optimizer)
            weights = dict(feature_weights(result.model))
            noise = [w for name, w in weights.items() if name not in data.feature_names]
            real = [weights[name] for name in data.feature_names]
            rows.append({
                "irrelevant_features": count,
                "test_accuracy": result.report.test.accuracy,
                "cv_accuracy": result.report.cv_accuracy,
                "lambda": result.report.lambda_,
                "sigma": result.report.sigma,
                "median_feature_weight": float(np.median(real)),
                "median_noise_weight": float(np.median(noise)) if noise else float("nan"),
            })
        return pd.DataFrame(rows)

    def ablate(self, drop: int, optimizer: str = "ibcc") -> pd.DataFrame:
        """Retune without the ``drop`` lowest- and, separately, highest-weighted features."""
        data = self.load_dataset()
        if drop >= data.n_features:
            raise ConfigError(f"cannot drop {drop} of {data.n_features} features")
        train_set, test_set = self.split(data)
        full = self.tune(train_set, test_set, optimizer)
        ranked = [name for name, _ in feature_weights(full.model)]
        rows = [{"scenario": "all", "removed": "", "n_features": data.n_features,
                 "test_accuracy": full.report.test.accuracy}]
        for scenario, removed in (("drop_lowest", ranked[-drop:]), ("drop_highest", ranked[:drop])):
            kept = [name for name in data.feature_names if name not in removed]
            reduced_train = select_features(train_set, kept)
            reduced_test = select_features(test_set, kept)
            result = self.tune(reduced_train, reduced_test, optimizer)
            rows.append({"scenario": scenario, "removed": " ".join(removed), "n_features": len(kept),
                         "test_accuracy": result.report.test.accuracy})
        return pd.DataFrame(rows)

    def compare(self, optimizers: Sequence[str], runs: int) -> pd.DataFrame:
        """Repeated independent searches per optimizer, summarised per optimizer."""
        data = self.load_dataset()
        train_set, test_set = self.split(data)
        records = []
        for name in optimizers:
            for run in range(runs):
                seed = self.config.seed + run
                opt_config = self.optimizer_config(seed)
                folds = kfold_split(train_set.n_samples, self.config.folds, self.config.seed,
                                    train_set.labels)
                fitness = CrossValidationFitness(train_set, folds, self.config.llm)
                started = time.perf_counter()
                best, value, _ = run_optimizer(name, fitness, opt_config)
                records.append({"optimizer": name, "run": run, "seconds": time.perf_counter() - started,
                                "lambda": float(f"{best[0]:.3g}"), "sigma": float(f"{best[1]:.3g}"),
                                "cv_accuracy": value})
        frame = pd.DataFrame(records)
        return summarise_runs(frame, self.config.compare_tolerance, ["lambda", "sigma"])


def summarise_runs(frame: pd.DataFrame, tolerance: float, position_columns: List[str],
                   target: Optional[float] = None) -> pd.DataFrame:
    """Per-optimizer mean time, modal best point, mean/best fitness and success rate.

    A run succeeds when its fitness is within ``tolerance`` of ``target``
    (default: the best fitness seen by any run).
    """
    value_column = "cv_accuracy" if "cv_accuracy" in frame else "best_fitness"
    reference = frame[value_column].max() if target is None else target
    rows = []
    for name, group in frame.groupby("optimizer", sort=False):
        modal = group.groupby(position_columns).size().idxmax()
        modal = modal if isinstance(modal, tuple) else (modal,)
        row: Dict[str, object] = {"optimizer": name, "runs": len(group),
                                  "mean_seconds": group["seconds"].mean()}
        row.update({f"modal_{col}": value for col, value in zip(position_columns, modal)})
        row.update({
            f"mean_{value_column}": group[value_column].mean(),
            f"best_{value_column}": group[value_column].max(),
            "successes": int((group[value_column] >= reference - tolerance).sum()),
        })
        row["success_rate"] = row["successes"] / len(group)
        rows.append(row)
    return pd.DataFrame(rows)


def benchmark_optimizers(function: str, optimizers: Sequence[str], runs: int, tolerance: float,
                         base: OptimizerConfig, seed: int = 0) -> pd.DataFrame:
    """Run each optimizer ``runs`` times on an analytic function and count near-optimal results."""
    bench = get_benchmark(function)
    diagonal = float(np.linalg.norm(np.subtract(bench.upper, bench.lower)))
    config = base.model_copy(update={
        "lower": list(bench.lower), "upper": list(bench.upper), "fitness_stop": None,
        "s_min": min(base.s_min, 0.1 * diagonal), "s_max": None, "sensing_range": None,
    })
    records = []
    for name in optimizers:
        for run in range(runs):
            started = time.perf_counter()
            best, value, trace = run_optimizer(name, bench.fn, config.model_copy(update={"seed": seed + run}))
            records.append({"optimizer": name, "run": run, "seconds": time.perf_counter() - started,
                            **{f"x{i + 1}": float(f"{v:.2g}") for i, v in enumerate(best)},
                            "best_fitness": value, "chaos_triggers": trace.chaos_triggers})
        logger.info(f"{function}/{name}: {runs} runs done")
    frame = pd.DataFrame(records)
    columns = [f"x{i + 1}" for i in range(len(bench.lower))]
    return summarise_runs(frame, tolerance, columns, target=bench.optimum_value)
