"""Synthetic-data calibration pipeline.

Generates replicate synthetic data sets from reported summary statistics,
tunes the variance scale factor beta per experiment until pushforward
statistics match the reported error bars (grid search over candidates with a
shared synthetic-data seed), then runs the joint weighted calibration and
produces pushforward reports.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    DataSummarySet,
    GaussianPrior,
    InconsistentDataError,
    NumericalError,
    ParameterEntry,
    ParameterSpace,
    SumcalError,
    SyntheticDataCollection,
    ValidationError,
    derive_seed,
    float_repr,
)
from .likelihood import combined_loglik, log_posterior
from .mcmc import Chain, map_estimate, postprocess, run_chain, warm_start

__all__ = [
    "SamplerSettings",
    "CandidateResult",
    "ConsistencyReport",
    "PushforwardSummary",
    "JointResult",
    "draw_synthetic",
    "pushforward",
    "pushforward_stat",
    "consistency_distance",
    "calibrate_beta",
    "joint_calibrate",
    "summarize_pushforward",
    "experiment_specific_copies",
    "write_consistency_csv",
    "write_synthetic_csv",
    "write_pushforward_csv",
]


@dataclass(frozen=True)
class SamplerSettings:
    """MCMC settings shared by the beta search and the joint calibration."""

    steps: int
    jump: float
    burn_in: int
    subsample: int
    adapt: bool = True
    adapt_start: int | None = None
    warm_iterations: int = 30

    def __post_init__(self):
        if self.steps < 1 or self.subsample < 1:
            raise ValidationError("steps and subsample must be >= 1")
        if not (0 <= self.burn_in < self.steps):
            raise ValidationError("burn-in must satisfy 0 <= burn_in < steps")
        if not (self.jump > 0):
            raise ValidationError("jump size must be positive")


def draw_synthetic(data: DataSummarySet, beta: float, k: int, seed: int) -> SyntheticDataCollection:
    """K replicate synthetic data sets: z_{n,k} ~ Normal(y_n, beta * s_n^2).

    Independent across stations and replicates; bit-exact given the seed.
    """
    if not (beta > 0):
        raise ValidationError(f"beta must be positive, got {beta!r}")
    if k < 1:
        raise ValidationError(f"need at least one replicate, got {k}")
    rng = np.random.default_rng(seed)
    draws = data.values + math.sqrt(beta) * data.sigmas * rng.standard_normal((k, data.n_stations))
    return SyntheticDataCollection(
        set_id=data.id, beta=float(beta), draws=draws, seed=int(seed), sigmas=data.sigmas
    )


def pushforward(samples, predictor) -> np.ndarray:
    """Push posterior samples through a predictor: one row per sample, one
    column per station."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if hasattr(predictor, "predict_many"):
        return predictor.predict_many(samples)
    return np.stack([np.asarray(predictor(nu), dtype=float) for nu in samples])


def pushforward_stat(samples: np.ndarray, kind: str = "3sigma") -> np.ndarray:
    """Per-station statistic of pushforward samples; 3 x sample sd (ddof=1)."""
    if kind != "3sigma":
        raise ValidationError(f"unknown statistic '{kind}'")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 2:
        raise ValidationError("at least two pushforward samples required")
    return 3.0 * samples.std(axis=0, ddof=1)


def consistency_distance(reported, computed) -> float:
    """Relative l2 distance ||s - s~||_2 / ||s||_2."""
    reported = np.asarray(reported, dtype=float).ravel()
    computed = np.asarray(computed, dtype=float).ravel()
    if reported.shape != computed.shape:
        raise ValidationError("reported and computed statistics must have equal length")
    norm = np.linalg.norm(reported)
    if norm == 0.0:
        raise ValidationError("reported statistics have zero norm")
    return float(np.linalg.norm(reported - computed) / norm)


# ---------------------------------------------------------------------------
# beta consistency search


@dataclass(frozen=True)
class CandidateResult:
    beta: float
    rho: float  # nan when failed
    n_retained: int
    chain_seed: int
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class ConsistencyReport:
    """Outcome of the beta grid search for one experiment."""

    experiment: int
    candidates: tuple[CandidateResult, ...]
    selected_index: int
    tolerance: float
    synthetic_seed: int
    reported: np.ndarray  # s_n
    computed: np.ndarray  # s~_n at the selected beta

    @property
    def selected(self) -> CandidateResult:
        return self.candidates[self.selected_index]

    @property
    def consistent(self) -> bool:
        return bool(self.selected.rho <= self.tolerance)


def _run_candidate(data, beta, k, synth_seed, chain_seed, prior, predictor, settings,
                   statistic="3sigma"):
    """One beta candidate: draw, infer, push forward, measure the distance."""
    collection = draw_synthetic(data, beta, k, synth_seed)
    target = log_posterior(prior, combined_loglik([collection], [predictor]))
    start = warm_start(target, prior.means, settings.warm_iterations, scales=prior.sigmas).point
    chain = run_chain(
        target,
        start,
        settings.steps,
        settings.jump,
        scales=prior.sigmas,
        adapt=settings.adapt,
        adapt_start=settings.adapt_start,
        seed=chain_seed,
    )
    retained = postprocess(chain, settings.burn_in, settings.subsample)
    computed = pushforward_stat(pushforward(retained, predictor), statistic)
    rho = consistency_distance(data.sigmas, computed)
    return rho, retained.shape[0], computed


def _candidate_task(args):
    data, beta, k, synth_seed, chain_seed, prior, predictor, settings, statistic = args
    try:
        rho, n_retained, computed = _run_candidate(
            data, beta, k, synth_seed, chain_seed, prior, predictor, settings, statistic
        )
        return CandidateResult(beta, rho, n_retained, chain_seed), computed
    except (SumcalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return CandidateResult(beta, float("nan"), 0, chain_seed, failed=True, error=str(exc)), None


def calibrate_beta(data: DataSummarySet, beta_grid, prior: GaussianPrior, predictor,
                   k: int, settings: SamplerSettings, tolerance: float, master_seed: int,
                   statistic: str = "3sigma", n_workers: int = 1,
                   ) -> tuple[ConsistencyReport, SyntheticDataCollection]:
    """Grid search for the variance scale factor of one experiment.

    Every candidate draws its synthetic data with the same derived seed, so
    the distance profile over beta is not blurred by data resampling. Chains
    get disjoint seed streams per candidate. The candidate with the smallest
    distance wins (first on ties); whether it meets the tolerance is recorded,
    not enforced.
    """
    grid = [float(b) for b in beta_grid]
    if not grid:
        raise ValidationError("beta grid is empty")
    if any(b <= 0 for b in grid):
        raise ValidationError("beta grid values must be positive")
    if not (tolerance > 0):
        raise ValidationError("tolerance must be positive")
    synth_seed = derive_seed(master_seed, f"synthetic-d{data.id}")
    tasks = [
        (
            data,
            beta,
            k,
            synth_seed,
            derive_seed(master_seed, f"beta-chain-d{data.id}", i),
            prior,
            predictor,
            settings,
            statistic,
        )
        for i, beta in enumerate(grid)
    ]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(_candidate_task, tasks))
    else:
        outcomes = [_candidate_task(t) for t in tasks]

    candidates = tuple(result for result, _ in outcomes)
    valid = [i for i, c in enumerate(candidates) if not c.failed]
    if not valid:
        details = "; ".join(f"beta={c.beta:g}: {c.error}" for c in candidates)
        raise NumericalError(f"set {data.id}: every beta candidate failed ({details})")
    selected = min(valid, key=lambda i: candidates[i].rho)
    report = ConsistencyReport(
        experiment=data.id,
        candidates=candidates,
        selected_index=selected,
        tolerance=float(tolerance),
        synthetic_seed=synth_seed,
        reported=data.sigmas,
        computed=outcomes[selected][1],
    )
    collection = draw_synthetic(data, candidates[selected].beta, k, synth_seed)
    return report, collection


# ---------------------------------------------------------------------------
# joint calibration


@dataclass(frozen=True)
class PushforwardSummary:
    """Per-station pushforward posterior statistics for one experiment."""

    experiment: int
    means: np.ndarray
    sds: np.ndarray
    three_sigma: np.ndarray  # always 3 * sds
    map_prediction: np.ndarray
    n_samples: int


@dataclass(frozen=True)
class JointResult:
    chain: Chain
    retained: np.ndarray  # (n_retained, s)
    map_point: np.ndarray
    map_logpost: float
    summaries: dict[int, PushforwardSummary]
    weights: np.ndarray | None


def summarize_pushforward(set_id: int, retained, map_point, predictor) -> PushforwardSummary:
    """Pushforward posterior statistics for one experiment's stations."""
    pushed = pushforward(retained, predictor)
    if pushed.shape[0] < 2:
        raise ValidationError("at least two retained samples required")
    sds = pushed.std(axis=0, ddof=1)
    return PushforwardSummary(
        experiment=set_id,
        means=pushed.mean(axis=0),
        sds=sds,
        three_sigma=3.0 * sds,
        map_prediction=np.asarray(predictor(map_point), dtype=float),
        n_samples=pushed.shape[0],
    )


def joint_calibrate(collections, predictors, prior: GaussianPrior,
                    settings: SamplerSettings, master_seed: int,
                    weights=None) -> JointResult:
    """Joint inference over all experiments' consistent synthetic data.

    Runs one chain on the combined (optionally weighted) likelihood plus the
    prior, then summarizes the pushforward posterior per experiment with
    mean, sd, 3 sigma half-width, and the MAP prediction.
    """
    collections = list(collections)
    predictors = list(predictors)
    target = log_posterior(prior, combined_loglik(collections, predictors, weights))
    start = warm_start(target, prior.means, settings.warm_iterations, scales=prior.sigmas).point
    chain = run_chain(
        target,
        start,
        settings.steps,
        settings.jump,
        scales=prior.sigmas,
        adapt=settings.adapt,
        adapt_start=settings.adapt_start,
        seed=derive_seed(master_seed, "joint-chain"),
    )
    retained = postprocess(chain, settings.burn_in, settings.subsample)
    map_point, map_logpost = map_estimate(chain)
    summaries = {
        coll.set_id: summarize_pushforward(coll.set_id, retained, map_point, pred)
        for coll, pred in zip(collections, predictors)
    }
    return JointResult(
        chain=chain,
        retained=retained,
        map_point=map_point,
        map_logpost=map_logpost,
        summaries=summaries,
        weights=None if weights is None else np.asarray(weights, dtype=float),
    )


def experiment_specific_copies(space: ParameterSpace, shared_names, experiment_ids,
                               ) -> tuple[ParameterSpace, dict[int, np.ndarray]]:
    """Replicate shared parameters per experiment.

    Each named parameter is removed from the space and replaced by one copy
    per experiment id (named ``<name>__d<id>``, appended after the untouched
    entries). The returned binding maps experiment id -> index array routing
    the expanded space into the original layout, for use with
    :class:`sumcal.core.BoundPredictor`.
    """
    shared_names = list(shared_names)
    experiment_ids = list(experiment_ids)
    if len(set(shared_names)) != len(shared_names):
        raise ValidationError("shared names must be unique")
    if len(set(experiment_ids)) != len(experiment_ids):
        raise ValidationError("experiment ids must be unique")
    shared_positions = {name: space.index_of(name) for name in shared_names}
    if not shared_names or not experiment_ids:
        bindings = {d: np.arange(space.size, dtype=np.intp) for d in experiment_ids}
        return space, bindings

    kept = [e for e in space.entries if e.name not in shared_positions]
    entries = list(kept)
    copy_position: dict[tuple[str, int], int] = {}
    for name in shared_names:
        original = space.entries[shared_positions[name]]
        for d in experiment_ids:
            copy_position[(name, d)] = len(entries)
            entries.append(replace(original, name=f"{name}__d{d}"))
    expanded = ParameterSpace(tuple(entries))

    kept_position = {e.name: i for i, e in enumerate(kept)}
    bindings = {}
    for d in experiment_ids:
        idx = np.empty(space.size, dtype=np.intp)
        for j, entry in enumerate(space.entries):
            if entry.name in shared_positions:
                idx[j] = copy_position[(entry.name, d)]
            else:
                idx[j] = kept_position[entry.name]
        bindings[d] = idx
    return expanded, bindings


# ---------------------------------------------------------------------------
# artifact writers


def write_consistency_csv(report: ConsistencyReport, path) -> None:
    """``beta,rho,accepted_flag`` per candidate; accepted means rho <= tolerance.

    The selected beta is the argmin row (recorded in the run manifest too).
    Failed candidates carry rho=nan and flag 0.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta", "rho", "accepted_flag"])
        for c in report.candidates:
            accepted = int((not c.failed) and c.rho <= report.tolerance)
            writer.writerow([float_repr(c.beta), float_repr(c.rho), accepted])


def write_synthetic_csv(collection: SyntheticDataCollection, path) -> None:
    """Synthetic draws, one row per station: ``station,z_1..z_K`` plus a header
    comment carrying (beta, K, seed) for regeneration."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(
            f"# set={collection.set_id} beta={float_repr(collection.beta)} "
            f"K={collection.k} seed={collection.seed}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["station"] + [f"z_{k + 1}" for k in range(collection.k)])
        for n in range(collection.n_stations):
            writer.writerow([n + 1] + [float_repr(z) for z in collection.draws[:, n]])


def write_pushforward_csv(summary: PushforwardSummary, data: DataSummarySet, path) -> None:
    """``station,coord...,mean,sd,three_sigma,map_pred,y,s`` in the working data space."""
    if summary.means.shape[0] != data.n_stations:
        raise ValidationError("summary and data set disagree on the station count")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        coord_names = [f"coord{i + 1}" for i in range(data.coord_dim)]
        writer.writerow(["station"] + coord_names + ["mean", "sd", "three_sigma", "map_pred", "y", "s"])
        for n in range(data.n_stations):
            row = [n + 1]
            row += [float_repr(c) for c in data.coords[n]]
            row += [
                float_repr(summary.means[n]),
                float_repr(summary.sds[n]),
                float_repr(summary.three_sigma[n]),
                float_repr(summary.map_prediction[n]),
                float_repr(data.values[n]),
                float_repr(data.sigmas[n]),
            ]
            writer.writerow(row)
