"""Bundled end-to-end demo: a two-parameter Arrhenius ground-truth problem.

Generates an 8-station data set with 5% multiplicative noise, trains a
surrogate family on a 26-point temperature grid in log10 space, and runs the
full calibration. Ground truth is recorded so recovery can be asserted.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import (
    CalibrationConfig,
    derive_seed,
    load_config,
    write_config,
    write_data_summary,
    write_parameter_space,
)
from .runner import RunOutcome, fit_families_from_samples, run_calibration, write_samples_csv
from .testmodels import ArrheniusModel, default_arrhenius_space, make_synthetic_problem

__all__ = [
    "DEMO_TRUTH",
    "DEMO_STATIONS",
    "DEMO_GRID",
    "DEMO_NOISE_FRACTION",
    "DEMO_TRAIN_SAMPLES",
    "demo_config",
    "build_demo_problem",
    "run_demo",
]

DEMO_TRUTH = {"Q": 1.18, "log10w": -4.3}
# Two measurement blocks at the temperature-range ends: the classical design
# for pinning an activation energy, and one whose pushforward spread is nearly
# uniform across stations.
DEMO_STATIONS = np.array([950.0, 990.0, 1030.0, 1070.0, 1780.0, 1820.0, 1860.0, 1900.0])
DEMO_GRID = np.linspace(900.0, 2000.0, 26)  # surrogate stations; data stations interpolate
DEMO_NOISE_FRACTION = 0.05
DEMO_TRAIN_SAMPLES = 220


def demo_config(master_seed: int = 2024) -> CalibrationConfig:
    return CalibrationConfig(
        pce_order=2,
        prune_threshold=1e-4,
        prune_passes=10,
        synthetic_sets=20,
        mcmc_steps=50_000,
        jump_size=0.5,
        burn_in=10_000,
        subsample=5,
        beta_grid=tuple(float(b) for b in np.logspace(np.log10(0.05), np.log10(2.0), 10)),
        tolerance=0.2,
        weight_mode="uniform",
        master_seed=master_seed,
        data_space="log10",
    )


def build_demo_problem(out_dir, master_seed: int = 2024) -> dict[str, Path]:
    """Write the demo inputs: bounds, data, manifest, truth, samples, config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    space = default_arrhenius_space()
    model = ArrheniusModel(space)
    config = demo_config(master_seed)

    sets, truth = make_synthetic_problem(
        model,
        [DEMO_TRUTH[name] for name in space.names],
        DEMO_STATIONS,
        DEMO_NOISE_FRACTION,
        n_sets=1,
        seed=derive_seed(master_seed, "demo-data"),
        labels=["arrhenius-demo"],
    )
    data = sets[0]

    paths = {
        "bounds": out_dir / "bounds.csv",
        "data": out_dir / "data_d1.csv",
        "manifest": out_dir / "manifest.csv",
        "truth": out_dir / "truth.json",
        "samples": out_dir / "samples.csv",
        "config": out_dir / "config.txt",
    }
    write_parameter_space(space, paths["bounds"])
    write_data_summary(data, paths["data"])
    paths["manifest"].write_text(
        "id,label,path,dim\n1,arrhenius-demo,data_d1.csv,1\n", encoding="utf-8"
    )
    paths["truth"].write_text(
        json.dumps(
            {
                "parameters": truth.parameters,
                "noise_fraction": truth.noise_fraction,
                "seed": truth.seed,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )

    rng = np.random.default_rng(derive_seed(master_seed, "demo-train-inputs"))
    inputs = rng.uniform(space.lower, space.upper, size=(DEMO_TRAIN_SAMPLES, space.size))
    outputs = np.stack([np.log10(model.evaluate(nu, DEMO_GRID)) for nu in inputs])
    write_samples_csv(paths["samples"], space, inputs, {1: (DEMO_GRID, outputs)})
    write_config(config, paths["config"])
    return paths


def run_demo(out_dir, master_seed: int = 2024, n_workers: int = 1) -> RunOutcome:
    """Build the demo problem, fit surrogates, and run the calibration."""
    out_dir = Path(out_dir)
    paths = build_demo_problem(out_dir, master_seed)
    from .core import load_experiment_manifest, load_parameter_space

    space = load_parameter_space(paths["bounds"])
    config = load_config(paths["config"])
    data_sets = load_experiment_manifest(paths["manifest"])
    families = fit_families_from_samples(
        space,
        paths["samples"],
        out_dir / "surrogates",
        order=config.pce_order,
        prune_threshold=config.prune_threshold,
        prune_passes=config.prune_passes,
        data_space=config.data_space,
    )
    return run_calibration(
        space,
        config,
        data_sets,
        families,
        out_dir / "run",
        n_workers=n_workers,
        input_files={name: paths[name] for name in ("bounds", "manifest", "data", "samples", "config")},
    )
