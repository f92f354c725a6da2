#!/usr/bin/env python3
"""
Transient Stability Model Training Script
Simulates the 9-bus scenario grid, tunes the LLM classifier with IBCC and
saves the model served by the API.
"""

import logging
import os
import sys
from pathlib import Path

from backend.dataset import save_csv
from backend.experiments import StabilityExperimentTrainer
from backend.llm import save_model
from backend.powersim import generate_dataset
from backend.schemas import ExperimentConfig, OptimizerConfig, PowerCase, ScenarioConfig

logging.basicConfig(level=logging.INFO)

CASES_DIR = Path(__file__).parent / "backend" / "cases"
MODELS_DIR = Path(__file__).parent / "backend" / "models"


def main():
    """Simulate, tune and save"""
    print("🚀 Starting Transient Stability Model Training")
    print("=" * 50)

    case_path = CASES_DIR / "wscc9.json"
    scenario_path = CASES_DIR / os.environ.get("TSA_SCENARIO", "wscc9_sweep.json")
    if not case_path.exists() or not scenario_path.exists():
        print(f"❌ Case files not found in {CASES_DIR}")
        return False

    try:
        case = PowerCase.model_validate_json(case_path.read_text())
        grid = ScenarioConfig.model_validate_json(scenario_path.read_text())

        print(f"🔄 Simulating scenarios from {scenario_path.name}... This may take a few minutes.")
        dataset = generate_dataset(case, grid, threads=os.cpu_count())
        dataset_path = save_csv(dataset, MODELS_DIR / "tsa_dataset.csv")
        counts = dataset.class_counts()
        print(f"📊 Dataset: {dataset.n_samples} samples ({counts[1]} stable, {counts[-1]} unstable)")

        config = ExperimentConfig(
            dataset_path=dataset_path,
            optimizer=OptimizerConfig(population=int(os.environ.get("TSA_POPULATION", 20)),
                                      max_generations=int(os.environ.get("TSA_GENERATIONS", 50))),
        )
        trainer = StabilityExperimentTrainer(config, dataset)
        train_set, test_set = trainer.split()

        print("🔄 Tuning lambda and sigma with IBCC...")
        result = trainer.tune(train_set, test_set, "ibcc")
        report = result.report

        print("\n✅ MODEL TRAINING COMPLETED SUCCESSFULLY!")
        print("=" * 50)
        print(f"🎯 lambda = {report.lambda_:.6g}, sigma = {report.sigma:.6g}")
        print(f"   CV accuracy:   {report.cv_accuracy:.2f}%")
        print(f"   Test accuracy: {report.test.accuracy:.2f}%")
        print("\n📈 Top features:")
        for fw in report.feature_weights[:5]:
            print(f"   {fw.feature}: {fw.weight:.4g}")

        model_path = save_model(result.model, MODELS_DIR / "tsa_model.json")
        print(f"\n💾 Model saved to: {model_path}")
        print("🎉 Ready to serve predictions via API!")
        return True

    except Exception as e:
        print(f"❌ Error during training: {e}")
        import traceback
        traceback.print_exc()
        return False


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
