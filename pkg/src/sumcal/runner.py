"""Run orchestration shared by the command-line front end and the demo:
training-sample files, per-experiment surrogate fitting, the staged
calibration run, and all persisted artifacts. Artifacts carry no timestamps,
so identical inputs and seeds reproduce them byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    CalibrationConfig,
    DataSummarySet,
    GaussianPrior,
    ParameterSpace,
    ValidationError,
    default_prior,
    derive_seed,
    float_repr,
)
from .likelihood import default_weights
from .mcmc import write_chain_csv, write_trace_files
from .pce import (
    FitReport,
    StationPredictor,
    SurrogateFamily,
    family_predictor,
    fit_surrogate,
    read_family_archive,
    relative_l2_error,
    write_family_archive,
)
from .pipeline import (
    ConsistencyReport,
    JointResult,
    SamplerSettings,
    calibrate_beta,
    joint_calibrate,
    write_consistency_csv,
    write_pushforward_csv,
    write_synthetic_csv,
)

__all__ = [
    "RunOutcome",
    "write_samples_csv",
    "read_samples_csv",
    "fit_families_from_samples",
    "working_data_set",
    "predictor_for",
    "load_family_archives",
    "run_beta_stage",
    "run_calibration",
    "render_report",
]


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# training-sample files


def _coord_token(coord) -> str:
    coord = np.atleast_1d(np.asarray(coord, dtype=float))
    return "|".join(float_repr(c) for c in coord)


def write_samples_csv(path, space: ParameterSpace, inputs, outputs: dict) -> None:
    """Training samples: parameter columns, then one output column per
    (experiment, station) named ``d<ID>@<coord>``.

    ``outputs`` maps experiment id -> (station coords (G,), matrix (L, G)).
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != space.size:
        raise ValidationError("inputs must have one column per parameter")
    header = list(space.names)
    columns = []
    for set_id in sorted(outputs):
        coords, matrix = outputs[set_id]
        coords = np.asarray(coords, dtype=float).ravel()
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape != (inputs.shape[0], coords.shape[0]):
            raise ValidationError(f"set {set_id}: output matrix must be (L, n_stations)")
        for g, coord in enumerate(coords):
            header.append(f"d{set_id}@{_coord_token(coord)}")
            columns.append(matrix[:, g])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in range(inputs.shape[0]):
            cells = [float_repr(v) for v in inputs[row]]
            cells += [float_repr(col[row]) for col in columns]
            writer.writerow(cells)


def read_samples_csv(path, space: ParameterSpace) -> tuple[np.ndarray, dict]:
    """Read a training-sample file; returns (inputs, {id: (coords, matrix)})."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty samples file")
        if tuple(header[: space.size]) != space.names:
            raise ValidationError(
                f"{path}: first {space.size} columns must be the parameter names "
                f"in bounds-file order"
            )
        keys = []
        for col, name in enumerate(header[space.size :], start=space.size):
            if "@" not in name or not name.startswith("d"):
                raise ValidationError(f"{path}: malformed output column '{name}'")
            set_part, _, coord_part = name.partition("@")
            try:
                set_id = int(set_part[1:])
                coord = float(coord_part.split("|")[0])
            except ValueError:
                raise ValidationError(f"{path}: malformed output column '{name}'") from None
            keys.append((set_id, coord, col))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed number ({exc})") from None
    if not rows:
        raise ValidationError(f"{path}: no sample rows")
    table = np.array(rows)
    inputs = table[:, : space.size]
    outputs: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for set_id in sorted({k[0] for k in keys}):
        triples = [k for k in keys if k[0] == set_id]
        coords = np.array([t[1] for t in triples])
        if np.any(np.diff(coords) <= 0):
            raise ValidationError(f"{path}: set {set_id} station coordinates must increase")
        outputs[set_id] = (coords, table[:, [t[2] for t in triples]])
    return inputs, outputs


# ---------------------------------------------------------------------------
# surrogate fitting stage


def fit_families_from_samples(
    space: ParameterSpace,
    samples_path,
    out_dir,
    order: int,
    prune_threshold: float = 1e-4,
    prune_passes: int = 10,
    test_fraction: float = 0.1,
    data_space: str = "linear",
) -> dict[int, SurrogateFamily]:
    """Fit one family per experiment from a samples file and archive them.

    The last ``test_fraction`` of the rows is held out; the per-station
    report carries train and test errors so overfitting is visible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not (0.0 <= test_fraction < 1.0):
        raise ValidationError("test fraction must be in [0, 1)")
    inputs, outputs = read_samples_csv(samples_path, space)
    n_rows = inputs.shape[0]
    n_test = int(round(test_fraction * n_rows))
    n_train = n_rows - n_test
    if n_train < 1:
        raise ValidationError("test fraction leaves no training rows")

    families: dict[int, SurrogateFamily] = {}
    report_rows = []
    for set_id, (coords, matrix) in outputs.items():
        surrogates = []
        for g, coord in enumerate(coords):
            surr, fit = fit_surrogate(
                space,
                inputs[:n_train],
                matrix[:n_train, g],
                order,
                prune_threshold,
                prune_passes,
            )
            test_error = float("nan")
            if n_test:
                ref = matrix[n_train:, g]
                finite = np.isfinite(ref)
                if finite.any():
                    test_error = relative_l2_error(ref[finite], surr.evaluate(inputs[n_train:][finite]))
            surrogates.append(surr)
            report_rows.append((set_id, coord, surr, fit, test_error))
        family = SurrogateFamily(coords=coords, surrogates=tuple(surrogates))
        families[set_id] = family
        write_family_archive(
            family,
            out_dir / f"surrogate_d{set_id}.pce",
            order=order,
            data_space=data_space,
            extra={"experiment": str(set_id)},
        )
    with (out_dir / "fit_report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["experiment", "station_coord", "n_terms", "n_failed", "train_error", "test_error"]
        )
        for set_id, coord, surr, fit, test_error in report_rows:
            writer.writerow(
                [
                    set_id,
                    float_repr(coord),
                    fit.n_terms,
                    fit.n_failed,
                    float_repr(fit.train_error),
                    float_repr(test_error),
                ]
            )
    return families


def load_family_archives(archive_dir, data_sets, space: ParameterSpace,
                         config: CalibrationConfig) -> dict[int, SurrogateFamily]:
    """Load ``surrogate_d<ID>.pce`` per experiment and cross-check bounds and
    data space against the run configuration."""
    archive_dir = Path(archive_dir)
    families = {}
    for data in data_sets:
        path = archive_dir / f"surrogate_d{data.id}.pce"
        if not path.exists():
            raise ValidationError(f"missing surrogate archive {path}")
        family, meta = read_family_archive(path)
        if meta["bounds_checksum"] != space.checksum():
            raise ValidationError(f"{path}: surrogate bounds do not match the bounds file")
        if meta.get("data_space", "linear") != config.data_space:
            raise ValidationError(
                f"{path}: archive data space '{meta.get('data_space')}' differs from "
                f"config '{config.data_space}'"
            )
        families[data.id] = family
    return families


# ---------------------------------------------------------------------------
# calibration stages


def working_data_set(data: DataSummarySet, config: CalibrationConfig) -> DataSummarySet:
    """The data set in the configured working space."""
    return data.to_log10() if config.data_space == "log10" else data


def predictor_for(family: SurrogateFamily, data: DataSummarySet) -> StationPredictor:
    """Predictor at the experiment's stations.

    One-dimensional stations interpolate along the family coordinate;
    two-dimensional stations use the station number as the family coordinate
    (one surrogate per station, no interpolation).
    """
    if data.coord_dim == 1:
        coords = data.coords[:, 0]
    else:
        if family.n_stations != data.n_stations:
            raise ValidationError(
                f"set {data.id}: family has {family.n_stations} stations, data has {data.n_stations}"
            )
        coords = np.arange(1, data.n_stations + 1, dtype=float)
    return family_predictor(family, coords)


def sampler_settings(config: CalibrationConfig) -> SamplerSettings:
    return SamplerSettings(
        steps=config.mcmc_steps,
        jump=config.jump_size,
        burn_in=config.burn_in,
        subsample=config.subsample,
    )


@dataclass(frozen=True)
class RunOutcome:
    space: ParameterSpace
    config: CalibrationConfig
    working_sets: dict[int, DataSummarySet]
    reports: dict[int, ConsistencyReport]
    joint: JointResult
    out_dir: Path

    @property
    def all_consistent(self) -> bool:
        return all(r.consistent for r in self.reports.values())


def run_beta_stage(space: ParameterSpace, config: CalibrationConfig, data_sets,
                   families: dict[int, SurrogateFamily], out_dir,
                   n_workers: int = 1) -> tuple[dict, dict, dict]:
    """Per-experiment beta search; persists consistency and synthetic CSVs.

    Returns (reports, collections, predictors), all keyed by experiment id.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prior = default_prior(space)
    settings = sampler_settings(config)
    reports: dict[int, ConsistencyReport] = {}
    collections: dict[int, object] = {}
    predictors: dict[int, StationPredictor] = {}
    for data in sorted(data_sets, key=lambda d: d.id):
        working = working_data_set(data, config)
        predictor = predictor_for(families[data.id], working)
        report, collection = calibrate_beta(
            working,
            config.beta_grid,
            prior,
            predictor,
            config.synthetic_sets,
            settings,
            config.tolerance,
            config.master_seed,
            config.statistic,
            n_workers=n_workers,
        )
        write_consistency_csv(report, out_dir / f"consistency_d{data.id}.csv")
        write_synthetic_csv(collection, out_dir / f"synthetic_d{data.id}.csv")
        reports[data.id] = report
        collections[data.id] = collection
        predictors[data.id] = predictor
    return reports, collections, predictors


def run_calibration(space: ParameterSpace, config: CalibrationConfig, data_sets,
                    families: dict[int, SurrogateFamily], out_dir,
                    n_workers: int = 1, trace_stride: int = 0,
                    input_files: dict | None = None) -> RunOutcome:
    """Full pipeline: beta search per experiment, joint calibration, artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_sets = sorted(data_sets, key=lambda d: d.id)
    reports, collections, predictors = run_beta_stage(
        space, config, data_sets, families, out_dir, n_workers
    )
    ids = [d.id for d in data_sets]
    if config.weight_mode == "inverse-count":
        weights = default_weights([collections[i].n_stations for i in ids])
    else:
        weights = None
    joint = joint_calibrate(
        [collections[i] for i in ids],
        [predictors[i] for i in ids],
        default_prior(space),
        sampler_settings(config),
        config.master_seed,
        weights=weights,
    )

    working_sets = {d.id: working_data_set(d, config) for d in data_sets}
    write_chain_csv(joint.chain, out_dir / "chain.csv", space.names)
    if trace_stride < 1:
        trace_stride = max(1, config.mcmc_steps // 10_000)
    write_trace_files(joint.chain, space, out_dir / "trace", stride=trace_stride)
    for i in ids:
        write_pushforward_csv(joint.summaries[i], working_sets[i], out_dir / f"pushforward_d{i}.csv")

    map_payload = {
        "log_posterior": joint.map_logpost,
        "map_iteration": int(np.argmax(joint.chain.logposts)) + 1,
        "parameters": {name: float(v) for name, v in zip(space.names, joint.map_point)},
    }
    (out_dir / "map.json").write_text(
        json.dumps(map_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    outcome = RunOutcome(
        space=space,
        config=config,
        working_sets=working_sets,
        reports=reports,
        joint=joint,
        out_dir=out_dir,
    )
    _write_run_manifest(outcome, data_sets, input_files or {})
    (out_dir / "report.txt").write_text(render_report(outcome), encoding="utf-8")
    return outcome


def _write_run_manifest(outcome: RunOutcome, data_sets, input_files: dict) -> None:
    config = outcome.config
    reports = outcome.reports
    manifest = {
        "package_version": __version__,
        "config": {
            **{k: v for k, v in asdict(config).items() if k != "beta_grid"},
            "beta_grid": [float(b) for b in config.beta_grid],
        },
        "bounds_checksum": outcome.space.checksum(),
        "input_files": {str(k): file_sha256(v) for k, v in sorted(input_files.items())},
        "experiments": [
            {
                "id": d.id,
                "label": d.label,
                "n_stations": d.n_stations,
                "coord_dim": d.coord_dim,
                "synthetic_seed": reports[d.id].synthetic_seed,
                "chain_seeds": [c.chain_seed for c in reports[d.id].candidates],
                "selected_beta": reports[d.id].selected.beta,
                "rho": reports[d.id].selected.rho,
                "consistent": reports[d.id].consistent,
                "n_retained": reports[d.id].selected.n_retained,
            }
            for d in sorted(data_sets, key=lambda d: d.id)
        ],
        "joint": {
            "chain_seed": derive_seed(config.master_seed, "joint-chain"),
            "acceptance_rate": outcome.joint.chain.acceptance_rate,
            "n_retained": int(outcome.joint.retained.shape[0]),
            "map_log_posterior": outcome.joint.map_logpost,
            "weights": None if outcome.joint.weights is None
            else [float(w) for w in outcome.joint.weights],
        },
        "artifacts": sorted(
            str(p.relative_to(outcome.out_dir))
            for p in outcome.out_dir.rglob("*")
            if p.is_file() and p.name not in ("run_manifest.json", "report.txt")
        ),
    }
    (outcome.out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def render_report(outcome: RunOutcome) -> str:
    """Human-readable run summary; deterministic for fixed inputs and seeds."""
    config = outcome.config
    lines = []
    lines.append("calibration run summary")
    lines.append("=======================")
    lines.append(
        f"settings: K={config.synthetic_sets} M={config.mcmc_steps} jump={config.jump_size:g} "
        f"burn-in={config.burn_in} subsample={config.subsample} "
        f"weights={config.weight_mode} data-space={config.data_space} seed={config.master_seed}"
    )
    lines.append(f"beta grid: {len(config.beta_grid)} candidates in "
                 f"[{config.beta_grid[0]:g}, {config.beta_grid[-1]:g}]")
    lines.append("")
    lines.append("experiments:")
    for set_id in sorted(outcome.reports):
        report = outcome.reports[set_id]
        data = outcome.working_sets[set_id]
        status = "consistent" if report.consistent else "INCONSISTENT"
        lines.append(
            f"  d{set_id} {data.label}: stations={data.n_stations} "
            f"beta={report.selected.beta:g} rho={report.selected.rho:.6g} "
            f"{status} (tolerance {report.tolerance:g})"
        )
    joint = outcome.joint
    lines.append("")
    lines.append(
        f"joint chain: steps={joint.chain.n_steps} acceptance={joint.chain.acceptance_rate:.4f} "
        f"retained={joint.retained.shape[0]}"
    )
    lines.append(f"MAP log-posterior: {joint.map_logpost:.6g}")
    lines.append("MAP parameters:")
    for name, value, entry in zip(outcome.space.names, joint.map_point, outcome.space.entries):
        unit = f" [{entry.unit}]" if entry.unit else ""
        lines.append(f"  {name} = {value:.6g}{unit}")
    return "\n".join(lines) + "\n"
