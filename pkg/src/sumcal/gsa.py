"""Global sensitivity analysis: total-effect Sobol indices from PCE
coefficients, parameter ranking with variance-threshold truncation, and an
independent Monte Carlo estimator used as a testing oracle.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import NumericalError, ValidationError, float_repr
from .pce import PceSurrogate

__all__ = [
    "SensitivityTable",
    "TruncationResult",
    "total_sobol",
    "sensitivity_table",
    "rank_and_truncate",
    "mc_sobol_total",
    "write_sensitivity_csv",
    "write_ranking_csv",
]


def total_sobol(surrogate: PceSurrogate) -> np.ndarray:
    """Total-effect Sobol indices from squared PCE coefficients.

    S_j = sum of c_u^2 over indices with u_j > 0, divided by the total
    variance (all non-constant c_u^2). Interactions are counted once per
    participating parameter, so the indices can sum past 1. A constant
    surrogate has zero variance and yields the explicit all-zero vector.
    """
    degrees = surrogate.index_array
    sq = surrogate.coefficients**2
    nonconstant = degrees.sum(axis=1) > 0
    variance = sq[nonconstant].sum()
    if variance == 0.0:
        return np.zeros(surrogate.dimension)
    return (sq[:, None] * (degrees > 0)).sum(axis=0) / variance


@dataclass(frozen=True)
class SensitivityTable:
    """Total indices for one experiment: one row per station, one column per parameter.

    ``active`` masks parameters that the experiment's observable cannot
    depend on; masked columns carry zeros and never enter the ranking.
    """

    experiment: int
    parameters: tuple[str, ...]
    station_labels: tuple[str, ...]
    indices: np.ndarray  # (n_stations, n_parameters)
    active: np.ndarray  # (n_parameters,) bool

    def __post_init__(self):
        indices = np.array(self.indices, dtype=float)
        if indices.ndim != 2 or indices.shape != (len(self.station_labels), len(self.parameters)):
            raise ValidationError("sensitivity matrix shape must be (stations, parameters)")
        if np.any(indices < -1e-12) or np.any(indices > 1.0 + 1e-9):
            raise ValidationError("total indices must lie in [0, 1]")
        active = np.array(self.active, dtype=bool)
        if active.shape != (len(self.parameters),):
            raise ValidationError("active mask length must match parameter count")
        indices[:, ~active] = 0.0
        indices.setflags(write=False)
        active.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "active", active)

    def max_per_parameter(self) -> np.ndarray:
        return self.indices.max(axis=0)


def sensitivity_table(experiment: int, surrogates, station_labels=None, active=None) -> SensitivityTable:
    """Build a table from per-station surrogates sharing one parameter space."""
    surrogates = list(surrogates)
    if not surrogates:
        raise ValidationError("at least one surrogate required")
    space = surrogates[0].space
    rows = [total_sobol(s) for s in surrogates]
    if station_labels is None:
        station_labels = tuple(str(n + 1) for n in range(len(surrogates)))
    if active is None:
        mask = np.ones(space.size, dtype=bool)
    else:
        mask = np.zeros(space.size, dtype=bool)
        for name in active:
            mask[space.index_of(name)] = True
    return SensitivityTable(
        experiment=experiment,
        parameters=space.names,
        station_labels=tuple(station_labels),
        indices=np.array(rows),
        active=mask,
    )


@dataclass(frozen=True)
class TruncationResult:
    parameters: tuple[str, ...]  # all parameters in global rank order
    max_indices: np.ndarray  # aligned with ``parameters``
    retained: tuple[str, ...]  # prefix of ``parameters`` that meets the threshold
    threshold: float
    coverage: dict[int, float]  # per experiment, with the retained set
    reached: bool  # False when even all parameters miss the threshold

    def is_retained(self, name: str) -> bool:
        return name in self.retained


def rank_and_truncate(tables, threshold: float, clamp: bool = True) -> TruncationResult:
    """Rank parameters by their peak total index and truncate at a variance target.

    Parameters are sorted by the maximum total index over all experiments and
    stations (ties broken by original parameter order) and retained greedily
    until every experiment's summed max-indices over the retained set
    (clamped at 1 when ``clamp``) reach ``threshold``. If the target is
    unreachable, all parameters are returned with ``reached=False``.
    """
    tables = list(tables)
    if not tables:
        raise ValidationError("at least one sensitivity table required")
    if not (0.0 < threshold < 1.0):
        raise ValidationError(f"threshold must be in (0, 1), got {threshold!r}")
    names = tables[0].parameters
    for table in tables:
        if table.parameters != names:
            raise ValidationError("all tables must share one parameter ordering")
    per_experiment = np.stack([t.max_per_parameter() for t in tables])  # (D, s)
    global_max = per_experiment.max(axis=0)
    order = sorted(range(len(names)), key=lambda j: (-global_max[j], j))

    def coverage_at(count: int) -> np.ndarray:
        sums = per_experiment[:, order[:count]].sum(axis=1)
        return np.minimum(sums, 1.0) if clamp else sums

    retained_count = len(names)
    reached = False
    for count in range(1, len(names) + 1):
        if np.all(coverage_at(count) >= threshold):
            retained_count = count
            reached = True
            break
    final = coverage_at(retained_count)
    return TruncationResult(
        parameters=tuple(names[j] for j in order),
        max_indices=global_max[order],
        retained=tuple(names[j] for j in order[:retained_count]),
        threshold=threshold,
        coverage={t.experiment: float(c) for t, c in zip(tables, final)},
        reached=reached,
    )


def mc_sobol_total(model, dimension: int, n_samples: int, seed: int,
                   max_nonfinite: float = 0.01) -> np.ndarray:
    """Jansen total-effect estimator from paired sample matrices.

    ``model`` maps an (m, dimension) matrix of reference coordinates (uniform
    on [-1, 1]^s) to m outputs. Deterministic given the seed. Rows with
    non-finite outputs are dropped; more than ``max_nonfinite`` of them is an
    error.
    """
    if n_samples < 1000:
        raise ValidationError(f"need at least 1000 samples, got {n_samples}")
    if dimension < 1:
        raise ValidationError("dimension must be >= 1")
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, size=(n_samples, dimension))
    b = rng.uniform(-1.0, 1.0, size=(n_samples, dimension))

    f_a = np.asarray(model(a), dtype=float).ravel()
    f_mixed = np.empty((dimension, n_samples))
    for j in range(dimension):
        ab = a.copy()
        ab[:, j] = b[:, j]
        f_mixed[j] = np.asarray(model(ab), dtype=float).ravel()

    finite = np.isfinite(f_a) & np.all(np.isfinite(f_mixed), axis=0)
    n_bad = int(n_samples - finite.sum())
    if n_bad > max_nonfinite * n_samples:
        raise NumericalError(
            f"model returned non-finite values for {n_bad}/{n_samples} draws "
            f"(limit {max_nonfinite:.0%})"
        )
    f_a = f_a[finite]
    f_mixed = f_mixed[:, finite]
    variance = np.var(f_a, ddof=1)
    if variance == 0.0:
        return np.zeros(dimension)
    return ((f_a - f_mixed) ** 2).mean(axis=1) / (2.0 * variance)


def write_sensitivity_csv(tables, path) -> None:
    """``experiment,station,parameter,total_index`` rows for all tables."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "station", "parameter", "total_index"])
        for table in tables:
            for n, label in enumerate(table.station_labels):
                for j, name in enumerate(table.parameters):
                    writer.writerow([table.experiment, label, name, float_repr(table.indices[n, j])])


def write_ranking_csv(result: TruncationResult, path) -> None:
    """``rank,parameter,max_index,retained`` rows in global rank order."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "parameter", "max_index", "retained"])
        for rank, (name, value) in enumerate(zip(result.parameters, result.max_indices), start=1):
            writer.writerow([rank, name, float_repr(value), int(result.is_retained(name))])


def read_ranking_csv(path) -> list[tuple[str, float, bool]]:
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["rank", "parameter", "max_index", "retained"]:
            raise ValidationError(f"{path}: not a ranking CSV")
        for row in reader:
            if not row:
                continue
            out.append((row[1], float(row[2]), bool(int(row[3]))))
    return out
