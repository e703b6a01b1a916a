"""Shared data model: parameter spaces, data summaries, priors, and run configuration.

All types here are immutable after construction and safe for concurrent reads.
File formats (bounds CSV, data-summary CSV, experiment manifest, flat config)
are owned by this module; loaders validate and report row numbers on failure.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "SumcalError",
    "ValidationError",
    "NumericalError",
    "InconsistentDataError",
    "ParameterEntry",
    "ParameterSpace",
    "DataSummarySet",
    "SyntheticDataCollection",
    "GaussianPrior",
    "CalibrationConfig",
    "FunctionPredictor",
    "default_prior",
    "load_parameter_space",
    "write_parameter_space",
    "load_data_summary",
    "write_data_summary",
    "load_experiment_manifest",
    "load_config",
    "write_config",
    "derive_seed",
    "float_repr",
]

LN10 = math.log(10.0)


class SumcalError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SumcalError):
    """Malformed input: files, shapes, bounds, configuration."""


class NumericalError(SumcalError):
    """Numerical failure: rank deficiency, non-finite results, failed chains."""


class InconsistentDataError(SumcalError):
    """No synthetic-data scale factor reached the consistency tolerance."""


def float_repr(value) -> str:
    """Shortest exact decimal for a float; used for byte-stable artifacts."""
    return repr(float(value))


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    """Derive a per-stage RNG seed from the master seed.

    Stages are independent streams keyed by (stage name, index), so any stage
    can be rerun in isolation and still reproduce its draws.
    """
    digest = hashlib.sha256(f"{master}:{stage}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# parameter space


@dataclass(frozen=True)
class ParameterEntry:
    name: str
    nominal: float
    lower: float
    upper: float
    unit: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValidationError("parameter name must be non-empty")
        if not (self.lower < self.upper):
            raise ValidationError(
                f"degenerate bounds for '{self.name}': lower={self.lower!r} upper={self.upper!r}"
            )
        if not (self.lower <= self.nominal <= self.upper):
            raise ValidationError(
                f"nominal {self.nominal!r} of '{self.name}' outside [{self.lower!r}, {self.upper!r}]"
            )


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered, named parameters with bounds; owns the physical<->reference mapping.

    Entry order is the single source of coordinate ordering: every sample
    matrix column j refers to ``entries[j]``.
    """

    entries: tuple[ParameterEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("parameter space must contain at least one entry")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValidationError(f"duplicate parameter names: {', '.join(dup)}")

    @property
    def size(self) -> int:
        return len(self.entries)

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    @cached_property
    def lower(self) -> np.ndarray:
        return _readonly([e.lower for e in self.entries])

    @cached_property
    def upper(self) -> np.ndarray:
        return _readonly([e.upper for e in self.entries])

    @cached_property
    def nominal(self) -> np.ndarray:
        return _readonly([e.nominal for e in self.entries])

    @cached_property
    def widths(self) -> np.ndarray:
        return _readonly(self.upper - self.lower)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown parameter '{name}'") from None

    def to_reference(self, values) -> np.ndarray:
        """Affine map from physical values to [-1, 1] reference coordinates."""
        values = np.asarray(values, dtype=float)
        return 2.0 * (values - self.lower) / self.widths - 1.0

    def from_reference(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return self.lower + 0.5 * (xi + 1.0) * self.widths

    def checksum(self) -> str:
        """Stable digest of all entries; ties surrogate archives to their bounds."""
        lines = [
            f"{e.name},{float_repr(e.nominal)},{float_repr(e.lower)},{float_repr(e.upper)},{e.unit}"
            for e in self.entries
        ]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


BOUNDS_HEADER = ["name", "nominal", "lower", "upper", "unit"]


def load_parameter_space(path) -> ParameterSpace:
    """Read a bounds CSV (header ``name,nominal,lower,upper,unit``)."""
    path = Path(path)
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != BOUNDS_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(BOUNDS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ValidationError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            name, nominal, lower, upper, unit = (c.strip() for c in row)
            try:
                entry = ParameterEntry(name, float(nominal), float(lower), float(upper), unit)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed number ({exc})") from None
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            entries.append(entry)
    if not entries:
        raise ValidationError(f"{path}: no parameter rows")
    try:
        return ParameterSpace(tuple(entries))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_parameter_space(space: ParameterSpace, path) -> None:
    """Write the canonical bounds CSV; load(write(s)) == s."""
    path = Path(path)
    lines = [",".join(BOUNDS_HEADER)]
    for e in space.entries:
        lines.append(
            f"{e.name},{float_repr(e.nominal)},{float_repr(e.lower)},{float_repr(e.upper)},{e.unit}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# experimental data summaries


@dataclass(frozen=True)
class DataSummarySet:
    """One experiment's summary statistics: stations, measured values, error bars."""

    id: int
    label: str
    coords: np.ndarray  # (N, dim) with dim in {1, 2}
    values: np.ndarray  # (N,) measured means
    sigmas: np.ndarray  # (N,) reported uncertainties, > 0

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or coords.shape[1] not in (1, 2):
            raise ValidationError(f"set {self.id}: station coordinates must be (N, 1) or (N, 2)")
        values = np.array(self.values, dtype=float)
        sigmas = np.array(self.sigmas, dtype=float)
        n = coords.shape[0]
        if n == 0:
            raise ValidationError(f"set {self.id}: no stations")
        if values.shape != (n,) or sigmas.shape != (n,):
            raise ValidationError(f"set {self.id}: coords/values/sigmas lengths differ")
        if not np.all(np.isfinite(coords)) or not np.all(np.isfinite(values)):
            raise ValidationError(f"set {self.id}: non-finite station data")
        if not np.all(sigmas > 0):
            bad = int(np.argmin(sigmas > 0)) + 1
            raise ValidationError(f"set {self.id}: station {bad} has non-positive uncertainty")
        for name, arr in (("coords", coords), ("values", values), ("sigmas", sigmas)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_stations(self) -> int:
        return self.coords.shape[0]

    @property
    def coord_dim(self) -> int:
        return self.coords.shape[1]

    def to_log10(self) -> "DataSummarySet":
        """Re-express values in base-10 log space.

        Error bars transform by the usual first-order rule s' = s / (y ln 10);
        requires strictly positive values.
        """
        if not np.all(self.values > 0):
            raise ValidationError(f"set {self.id}: log10 data space needs positive values")
        return DataSummarySet(
            id=self.id,
            label=self.label,
            coords=self.coords,
            values=np.log10(self.values),
            sigmas=self.sigmas / (self.values * LN10),
        )


def load_data_summary(path, set_id: int, label: str, dim: int) -> DataSummarySet:
    """Read one experiment's data-summary CSV (``station,coord1[,coord2],y,s``)."""
    path = Path(path)
    if dim not in (1, 2):
        raise ValidationError(f"{path}: coordinate dimension must be 1 or 2, got {dim}")
    expected = ["station"] + [f"coord{i + 1}" for i in range(dim)] + ["y", "s"]
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ValidationError(f"{path}: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise ValidationError(
                    f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}"
                )
            try:
                station = int(row[0])
                nums = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed number ({exc})") from None
            rows.append((station, lineno, nums))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    stations = [r[0] for r in rows]
    if len(set(stations)) != len(stations):
        raise ValidationError(f"{path}: duplicate station numbers")
    rows.sort(key=lambda r: r[0])
    coords = np.array([r[2][:dim] for r in rows])
    values = np.array([r[2][dim] for r in rows])
    sigmas = np.array([r[2][dim + 1] for r in rows])
    for (station, lineno, nums) in rows:
        if nums[dim + 1] <= 0:
            raise ValidationError(f"{path}:{lineno}: station {station} has s <= 0")
    return DataSummarySet(id=set_id, label=label, coords=coords, values=values, sigmas=sigmas)


def write_data_summary(data: DataSummarySet, path) -> None:
    path = Path(path)
    header = ["station"] + [f"coord{i + 1}" for i in range(data.coord_dim)] + ["y", "s"]
    lines = [",".join(header)]
    for n in range(data.n_stations):
        cells = [str(n + 1)]
        cells += [float_repr(c) for c in data.coords[n]]
        cells += [float_repr(data.values[n]), float_repr(data.sigmas[n])]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


MANIFEST_HEADER = ["id", "label", "path", "dim"]


def load_experiment_manifest(path) -> list[DataSummarySet]:
    """Read the experiment manifest (``id,label,path,dim``) and all listed sets.

    Relative data paths are resolved against the manifest's directory.
    """
    path = Path(path)
    sets: list[DataSummarySet] = []
    seen: set[int] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                set_id = int(row[0])
                dim = int(row[3])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed integer ({exc})") from None
            if set_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate experiment id {set_id}")
            seen.add(set_id)
            data_path = Path(row[2].strip())
            if not data_path.is_absolute():
                data_path = path.parent / data_path
            sets.append(load_data_summary(data_path, set_id, row[1].strip(), dim))
    if not sets:
        raise ValidationError(f"{path}: no experiments listed")
    return sets


# ---------------------------------------------------------------------------
# synthetic data and priors


@dataclass(frozen=True)
class SyntheticDataCollection:
    """K replicate synthetic data sets for one experiment.

    Regenerating with identical (seed, beta, K, source set) reproduces the
    draws bit-exactly; see :func:`sumcal.pipeline.draw_synthetic`.
    """

    set_id: int
    beta: float
    draws: np.ndarray  # (K, N)
    seed: int
    sigmas: np.ndarray  # (N,) reported uncertainties of the source set

    def __post_init__(self):
        if not (self.beta > 0):
            raise ValidationError(f"set {self.set_id}: beta must be positive, got {self.beta!r}")
        draws = np.array(self.draws, dtype=float)
        if draws.ndim != 2 or draws.shape[0] < 1 or draws.shape[1] < 1:
            raise ValidationError(f"set {self.set_id}: draws must be a (K, N) matrix")
        sigmas = np.array(self.sigmas, dtype=float)
        if sigmas.shape != (draws.shape[1],):
            raise ValidationError(f"set {self.set_id}: sigmas length must match station count")
        if not np.all(sigmas > 0):
            raise ValidationError(f"set {self.set_id}: sigmas must be positive")
        draws.setflags(write=False)
        sigmas.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def k(self) -> int:
        return self.draws.shape[0]

    @property
    def n_stations(self) -> int:
        return self.draws.shape[1]

    @cached_property
    def station_means(self) -> np.ndarray:
        return _readonly(self.draws.mean(axis=0))

    @cached_property
    def station_ssd(self) -> np.ndarray:
        """Per-station sum of squared deviations around the replicate mean."""
        return _readonly(((self.draws - self.station_means) ** 2).sum(axis=0))


@dataclass(frozen=True)
class GaussianPrior:
    """Independent Gaussian prior per parameter."""

    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        means = np.atleast_1d(np.array(self.means, dtype=float))
        sigmas = np.atleast_1d(np.array(self.sigmas, dtype=float))
        if means.shape != sigmas.shape or means.ndim != 1:
            raise ValidationError("prior means/sigmas must be 1-D and equal length")
        if not np.all(sigmas > 0):
            raise ValidationError("prior sigmas must be positive")
        means.setflags(write=False)
        sigmas.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def size(self) -> int:
        return self.means.shape[0]


def default_prior(space: ParameterSpace) -> GaussianPrior:
    """Gaussian prior from bounds: mean (a+b)/2, sd (b-a)/6.

    Places about 99.73% of the mass inside [a, b] for every parameter.
    """
    return GaussianPrior(
        means=0.5 * (space.lower + space.upper),
        sigmas=space.widths / 6.0,
    )


# ---------------------------------------------------------------------------
# predictors


class FunctionPredictor:
    """Adapts a plain callable nu -> (N,) predictions to the predictor contract.

    ``batch_fn``, when given, maps an (M, s) matrix to an (M, N) matrix and is
    used by pushforward evaluation; otherwise rows are evaluated one by one.
    """

    def __init__(self, fn, n_stations: int, batch_fn=None):
        self._fn = fn
        self._batch_fn = batch_fn
        self.n_stations = int(n_stations)

    def __call__(self, nu) -> np.ndarray:
        out = np.atleast_1d(np.asarray(self._fn(np.asarray(nu, dtype=float)), dtype=float))
        if out.shape != (self.n_stations,):
            raise ValidationError(
                f"predictor returned shape {out.shape}, expected ({self.n_stations},)"
            )
        return out

    def predict_many(self, nus) -> np.ndarray:
        nus = np.asarray(nus, dtype=float)
        if self._batch_fn is not None:
            out = np.asarray(self._batch_fn(nus), dtype=float)
            if out.shape != (nus.shape[0], self.n_stations):
                raise ValidationError("batch predictor returned wrong shape")
            return out
        return np.stack([self(nu) for nu in nus])


class BoundPredictor:
    """Routes a full-space parameter vector into a base predictor's layout.

    Used with experiment-specific parameter copies: ``index_map[j]`` is the
    column of the expanded space feeding base coordinate j.
    """

    def __init__(self, base, index_map):
        self.base = base
        self.index_map = np.asarray(index_map, dtype=np.intp)
        self.n_stations = base.n_stations

    def __call__(self, nu) -> np.ndarray:
        return self.base(np.asarray(nu, dtype=float)[self.index_map])

    def predict_many(self, nus) -> np.ndarray:
        return self.base.predict_many(np.asarray(nus, dtype=float)[:, self.index_map])


# ---------------------------------------------------------------------------
# configuration

_STATISTICS = ("3sigma",)
_DISTANCES = ("relative_l2",)
_WEIGHT_MODES = ("uniform", "inverse-count")
_DATA_SPACES = ("linear", "log10")


def _default_beta_grid() -> tuple[float, ...]:
    return tuple(float(b) for b in np.logspace(-2.0, 2.0, 20))


@dataclass(frozen=True)
class CalibrationConfig:
    """Full run configuration; one flat key per field in the config file."""

    pce_order: int = 2
    prune_threshold: float = 1e-4
    prune_passes: int = 10
    synthetic_sets: int = 20  # K, replicate synthetic data sets per experiment
    mcmc_steps: int = 50_000  # M
    jump_size: float = 0.5  # pre-adaptive step, in units of (b-a)/6 per coordinate
    burn_in: int = 10_000
    subsample: int = 5
    beta_grid: tuple[float, ...] = field(default_factory=_default_beta_grid)
    statistic: str = "3sigma"
    distance: str = "relative_l2"
    tolerance: float = 0.2
    weight_mode: str = "uniform"
    master_seed: int = 0
    data_space: str = "linear"

    def __post_init__(self):
        if self.pce_order < 0:
            raise ValidationError("pce_order must be >= 0")
        if self.prune_threshold < 0:
            raise ValidationError("prune_threshold must be >= 0")
        for name in ("prune_passes", "synthetic_sets", "mcmc_steps", "subsample"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.burn_in < 0:
            raise ValidationError("burn_in must be >= 0")
        if self.burn_in >= self.mcmc_steps:
            raise ValidationError("burn_in must be smaller than mcmc_steps")
        if not (self.jump_size > 0):
            raise ValidationError("jump_size must be positive")
        if not (self.tolerance > 0):
            raise ValidationError("tolerance must be positive")
        grid = tuple(float(b) for b in self.beta_grid)
        if not grid:
            raise ValidationError("beta_grid must be non-empty")
        if not all(b > 0 for b in grid):
            raise ValidationError("beta_grid values must be positive")
        if any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
            raise ValidationError("beta_grid must be strictly increasing")
        object.__setattr__(self, "beta_grid", grid)
        if self.statistic not in _STATISTICS:
            raise ValidationError(f"statistic must be one of {_STATISTICS}")
        if self.distance not in _DISTANCES:
            raise ValidationError(f"distance must be one of {_DISTANCES}")
        if self.weight_mode not in _WEIGHT_MODES:
            raise ValidationError(f"weight_mode must be one of {_WEIGHT_MODES}")
        if self.data_space not in _DATA_SPACES:
            raise ValidationError(f"data_space must be one of {_DATA_SPACES}")
        if self.master_seed < 0:
            raise ValidationError("master_seed must be >= 0")

    @property
    def retained_count(self) -> int:
        """Number of post-processed chain states per run."""
        return (self.mcmc_steps - self.burn_in) // self.subsample


_INT_KEYS = {"pce_order", "prune_passes", "synthetic_sets", "mcmc_steps", "burn_in", "subsample", "master_seed"}
_FLOAT_KEYS = {"prune_threshold", "jump_size", "tolerance"}
_STR_KEYS = {"statistic", "distance", "weight_mode", "data_space"}


def _parse_beta_grid(text: str) -> tuple[float, ...]:
    text = text.strip()
    if text.startswith("logspace:"):
        parts = text[len("logspace:"):].split(",")
        if len(parts) != 3:
            raise ValidationError("beta_grid logspace form is logspace:<lo>,<hi>,<count>")
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        if lo <= 0 or hi <= lo or count < 1:
            raise ValidationError("beta_grid logspace needs 0 < lo < hi and count >= 1")
        return tuple(float(b) for b in np.logspace(math.log10(lo), math.log10(hi), count))
    return tuple(float(p) for p in text.split(",") if p.strip())


def load_config(path) -> CalibrationConfig:
    """Read the flat ``key = value`` config file; unknown keys are rejected."""
    path = Path(path)
    known = {f.name for f in fields(CalibrationConfig)}
    raw: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ValidationError(f"{path}:{lineno}: unknown config key '{key}'")
        if key in raw:
            raise ValidationError(f"{path}:{lineno}: duplicate config key '{key}'")
        try:
            if key in _INT_KEYS:
                raw[key] = int(value)
            elif key in _FLOAT_KEYS:
                raw[key] = float(value)
            elif key == "beta_grid":
                raw[key] = _parse_beta_grid(value)
            else:
                raw[key] = value
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: malformed value for '{key}' ({exc})") from None
    try:
        return CalibrationConfig(**raw)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_config(config: CalibrationConfig, path) -> None:
    """Write the canonical config file (explicit beta grid, repr floats)."""
    path = Path(path)
    lines = []
    for f in fields(CalibrationConfig):
        value = getattr(config, f.name)
        if f.name == "beta_grid":
            text = ",".join(float_repr(b) for b in value)
        elif f.name in _FLOAT_KEYS:
            text = float_repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def fullscale_config(master_seed: int = 0) -> CalibrationConfig:
    """Production-scale settings for full calibration campaigns.

    Desk-scale demos use much smaller chains; these settings are sized for
    runs backed by a real forward-model training corpus.
    """
    return CalibrationConfig(
        synthetic_sets=100,
        mcmc_steps=1_000_000,
        jump_size=0.5,
        burn_in=100_000,
        subsample=5,
        master_seed=master_seed,
    )
