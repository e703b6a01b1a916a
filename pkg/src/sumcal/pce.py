"""Normalized-Legendre polynomial chaos surrogates.

Builds per-station surrogates by least squares with iterative magnitude
pruning, evaluates them anywhere (polynomial extrapolation outside the
bounds), and linearly interpolates coefficients between stations. Index sets
use a fixed graded-lexicographic order so archives are byte-stable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .core import (
    NumericalError,
    ParameterEntry,
    ParameterSpace,
    ValidationError,
    float_repr,
)

__all__ = [
    "MultiIndex",
    "PceSurrogate",
    "SurrogateFamily",
    "FitReport",
    "StationPredictor",
    "scale_to_reference",
    "legendre_normalized",
    "total_order_index_set",
    "fit_surrogate",
    "fit_family",
    "relative_l2_error",
    "interpolate_coefficients",
    "family_predictor",
    "surrogates_predictor",
    "write_family_archive",
    "read_family_archive",
]

MultiIndex = tuple[int, ...]

DEFAULT_MAX_TERMS = 100_000
DOMAIN_SLACK = 1e-12


def scale_to_reference(value, lower: float, upper: float):
    """Map a physical value to the [-1, 1] reference coordinate."""
    if not (lower < upper):
        raise ValidationError(f"degenerate bounds: lower={lower!r} upper={upper!r}")
    value = np.asarray(value, dtype=float)
    out = 2.0 * (value - lower) / (upper - lower) - 1.0
    return float(out) if out.ndim == 0 else out


def _legendre_table(x: np.ndarray, max_degree: int) -> np.ndarray:
    """Classical Legendre values P_0..P_max at x, shape (max_degree+1, len(x))."""
    table = np.empty((max_degree + 1, x.shape[0]))
    table[0] = 1.0
    if max_degree >= 1:
        table[1] = x
    for n in range(1, max_degree):
        table[n + 1] = ((2 * n + 1) * x * table[n] - n * table[n - 1]) / (n + 1)
    return table


def legendre_normalized(degree: int, x):
    """Normalized Legendre polynomial sqrt(2n+1) * P_n(x).

    Orthonormal under the uniform probability measure on [-1, 1]; arguments
    outside [-1 - 1e-12, 1 + 1e-12] are rejected.
    """
    if degree < 0:
        raise ValidationError(f"degree must be >= 0, got {degree}")
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.abs(arr) > 1.0 + DOMAIN_SLACK):
        raise ValidationError("argument outside [-1, 1]")
    values = math.sqrt(2 * degree + 1) * _legendre_table(arr, degree)[degree]
    return float(values[0]) if np.isscalar(x) or np.ndim(x) == 0 else values


def total_order_index_set(dimension: int, order: int, max_terms: int = DEFAULT_MAX_TERMS) -> list[MultiIndex]:
    """All multi-indices with total degree <= order, in graded-lex order.

    Cardinality is C(dimension + order, order); exceeding ``max_terms`` is an
    error naming the cap.
    """
    if dimension < 1:
        raise ValidationError(f"dimension must be >= 1, got {dimension}")
    if order < 0:
        raise ValidationError(f"order must be >= 0, got {order}")
    count = math.comb(dimension + order, order)
    if count > max_terms:
        raise ValidationError(
            f"index set size C({dimension + order},{order}) = {count} exceeds cap {max_terms}"
        )
    out: list[MultiIndex] = []

    def compose(prefix: tuple[int, ...], dims_left: int, total: int) -> None:
        if dims_left == 1:
            out.append(prefix + (total,))
            return
        for head in range(total, -1, -1):
            compose(prefix + (head,), dims_left - 1, total - head)

    for grade in range(order + 1):
        compose((), dimension, grade)
    return out


def _graded_lex_key(index: MultiIndex):
    return (sum(index), tuple(-u for u in index))


def _basis_matrix(xi: np.ndarray, index_array: np.ndarray) -> np.ndarray:
    """Product-basis values Phi_u(xi), shape (n_points, n_indices).

    No domain guard: surrogate evaluation extrapolates polynomially outside
    the bounds (proposals beyond the box are penalized by the prior, not
    rejected).
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n_points, dim = xi.shape
    if index_array.shape[1] != dim:
        raise ValidationError(f"dimension mismatch: points have {dim}, indices have {index_array.shape[1]}")
    max_degree = int(index_array.max(initial=0))
    phi = np.ones((n_points, index_array.shape[0]))
    for j in range(dim):
        degrees = index_array[:, j]
        if degrees.max(initial=0) == 0:
            continue
        table = _legendre_table(xi[:, j], max_degree)
        phi *= table[degrees, :].T
    norms = np.sqrt((2.0 * index_array + 1.0).prod(axis=1))
    return phi * norms


@dataclass(frozen=True)
class PceSurrogate:
    """A polynomial chaos expansion for one station's output."""

    space: ParameterSpace
    indices: tuple[MultiIndex, ...]
    coefficients: np.ndarray

    def __post_init__(self):
        s = self.space.size
        indices = tuple(tuple(int(u) for u in idx) for idx in self.indices)
        if not indices:
            raise ValidationError("index set must be non-empty")
        if len(set(indices)) != len(indices):
            raise ValidationError("duplicate multi-indices")
        for idx in indices:
            if len(idx) != s:
                raise ValidationError(f"multi-index {idx} has length {len(idx)}, expected {s}")
            if any(u < 0 for u in idx):
                raise ValidationError(f"negative degree in multi-index {idx}")
        if (0,) * s not in indices:
            raise ValidationError("constant multi-index (0,...,0) must be present")
        coeffs = np.array(self.coefficients, dtype=float)
        if coeffs.shape != (len(indices),):
            raise ValidationError("coefficient count must match index count")
        coeffs.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def dimension(self) -> int:
        return self.space.size

    @cached_property
    def index_array(self) -> np.ndarray:
        arr = np.array(self.indices, dtype=np.int64).reshape(len(self.indices), self.dimension)
        arr.setflags(write=False)
        return arr

    @cached_property
    def order(self) -> int:
        return int(self.index_array.sum(axis=1).max())

    def coefficient(self, index: MultiIndex) -> float:
        try:
            return float(self.coefficients[self.indices.index(tuple(index))])
        except ValueError:
            return 0.0

    def eval_reference(self, xi) -> float | np.ndarray:
        """Evaluate at reference coordinates; accepts (s,) or (M, s)."""
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        values = _basis_matrix(xi, self.index_array) @ self.coefficients
        return float(values[0]) if single else values

    def evaluate(self, nu) -> float | np.ndarray:
        """Evaluate at physical parameter values; accepts (s,) or (M, s)."""
        nu = np.asarray(nu, dtype=float)
        if nu.shape[-1] != self.dimension:
            raise ValidationError(
                f"dimension mismatch: got {nu.shape[-1]} values, surrogate has {self.dimension}"
            )
        return self.eval_reference(self.space.to_reference(nu))

    def variance(self) -> float:
        """Output variance under uniform inputs: sum of squared non-constant coefficients."""
        mask = self.index_array.sum(axis=1) > 0
        return float(np.sum(self.coefficients[mask] ** 2))


@dataclass(frozen=True)
class SurrogateFamily:
    """One surrogate per station along a scalar station coordinate."""

    coords: np.ndarray
    surrogates: tuple[PceSurrogate, ...]

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 1 or coords.shape[0] != len(self.surrogates):
            raise ValidationError("one station coordinate per surrogate required")
        if len(self.surrogates) == 0:
            raise ValidationError("family must contain at least one station")
        if np.any(np.diff(coords) <= 0):
            raise ValidationError("station coordinates must be strictly increasing")
        first = self.surrogates[0].space
        for surr in self.surrogates:
            if surr.space is not first and surr.space != first:
                raise ValidationError("all surrogates in a family must share one parameter space")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def space(self) -> ParameterSpace:
        return self.surrogates[0].space

    @property
    def n_stations(self) -> int:
        return len(self.surrogates)

    def interpolate(self, t: float) -> PceSurrogate:
        return interpolate_coefficients(self, t)


@dataclass(frozen=True)
class FitReport:
    """Diagnostics from one surrogate fit."""

    n_samples: int
    n_failed: int  # rows dropped for non-finite outputs (model failures)
    n_passes: int
    n_terms_initial: int
    n_terms: int
    train_error: float


def fit_surrogate(
    space: ParameterSpace,
    inputs,
    outputs,
    order: int,
    prune_threshold: float = 1e-4,
    max_passes: int = 10,
    max_terms: int = DEFAULT_MAX_TERMS,
) -> tuple[PceSurrogate, FitReport]:
    """Least-squares PCE fit with iterative magnitude pruning.

    Rows with non-finite outputs are dropped and counted as model failures.
    After each fit, indices with |c| < prune_threshold * max|c| are removed
    (never the constant term) and the system is refit, up to ``max_passes``.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    outputs = np.asarray(outputs, dtype=float).ravel()
    if inputs.shape[0] != outputs.shape[0]:
        raise ValidationError("inputs and outputs must have the same number of rows")
    if inputs.shape[1] != space.size:
        raise ValidationError(
            f"inputs have {inputs.shape[1]} columns, parameter space has {space.size}"
        )
    keep_rows = np.isfinite(outputs) & np.all(np.isfinite(inputs), axis=1)
    n_failed = int(inputs.shape[0] - keep_rows.sum())
    if keep_rows.sum() == 0:
        raise NumericalError("all model outputs are non-finite; nothing to fit")
    inputs = inputs[keep_rows]
    outputs = outputs[keep_rows]

    slack = 1e-8 * space.widths
    if np.any(inputs < space.lower - slack) or np.any(inputs > space.upper + slack):
        raise ValidationError("training inputs fall outside the parameter bounds")

    xi = space.to_reference(inputs)
    index_array = np.array(total_order_index_set(space.size, order, max_terms), dtype=np.int64)
    n_initial = index_array.shape[0]
    n_rows = inputs.shape[0]

    coeffs = None
    passes = 0
    while True:
        n_terms = index_array.shape[0]
        if n_rows < n_terms:
            raise NumericalError(
                f"rank-deficient design matrix: {n_terms} basis terms need at least "
                f"{n_terms} samples, got {n_rows}"
            )
        phi = _basis_matrix(xi, index_array)
        coeffs, _, rank, _ = np.linalg.lstsq(phi, outputs, rcond=None)
        if rank < n_terms:
            raise NumericalError(
                f"rank-deficient design matrix: rank {rank} < {n_terms} basis terms"
            )
        passes += 1
        cmax = np.abs(coeffs).max()
        keep = np.abs(coeffs) >= prune_threshold * cmax
        keep[index_array.sum(axis=1) == 0] = True
        if keep.all() or passes >= max_passes:
            break
        index_array = index_array[keep]
        coeffs = coeffs[keep]

    surrogate = PceSurrogate(
        space=space,
        indices=tuple(tuple(int(u) for u in row) for row in index_array),
        coefficients=coeffs,
    )
    fitted = _basis_matrix(xi, index_array) @ coeffs
    report = FitReport(
        n_samples=n_rows,
        n_failed=n_failed,
        n_passes=passes,
        n_terms_initial=n_initial,
        n_terms=index_array.shape[0],
        train_error=relative_l2_error(outputs, fitted),
    )
    return surrogate, report


def fit_family(
    space: ParameterSpace,
    coords,
    inputs,
    outputs,
    order: int,
    prune_threshold: float = 1e-4,
    max_passes: int = 10,
) -> tuple[SurrogateFamily, list[FitReport]]:
    """Fit one surrogate per station; ``outputs`` is (L, n_stations)."""
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    coords = np.asarray(coords, dtype=float)
    if outputs.shape[1] != coords.shape[0]:
        raise ValidationError("one output column per station coordinate required")
    surrogates = []
    reports = []
    for n in range(coords.shape[0]):
        surr, report = fit_surrogate(
            space, inputs, outputs[:, n], order, prune_threshold, max_passes
        )
        surrogates.append(surr)
        reports.append(report)
    return SurrogateFamily(coords=coords, surrogates=tuple(surrogates)), reports


def relative_l2_error(reference, approximation) -> float:
    """sqrt( sum (f - g)^2 / sum f^2 ) over all entries."""
    reference = np.asarray(reference, dtype=float)
    approximation = np.asarray(approximation, dtype=float)
    if reference.shape != approximation.shape:
        raise ValidationError(
            f"shape mismatch: {reference.shape} vs {approximation.shape}"
        )
    denom = np.sum(reference**2)
    if denom == 0.0:
        raise ValidationError("all-zero reference outputs: relative error undefined")
    return float(np.sqrt(np.sum((reference - approximation) ** 2) / denom))


def interpolate_coefficients(family: SurrogateFamily, t: float) -> PceSurrogate:
    """Linearly interpolate PCE coefficients to station coordinate ``t``.

    Works over the union of the bracketing stations' index sets (missing
    coefficients are 0); at a station coordinate the station's surrogate is
    returned unchanged. Extrapolation is an error.
    """
    coords = family.coords
    t = float(t)
    if t < coords[0] or t > coords[-1]:
        raise ValidationError(
            f"coordinate {t!r} outside the station range [{coords[0]!r}, {coords[-1]!r}]"
        )
    exact = np.nonzero(coords == t)[0]
    if exact.size:
        return family.surrogates[int(exact[0])]
    hi = int(np.searchsorted(coords, t))
    lo = hi - 1
    left, right = family.surrogates[lo], family.surrogates[hi]
    weight = (t - coords[lo]) / (coords[hi] - coords[lo])
    union = sorted(set(left.indices) | set(right.indices), key=_graded_lex_key)
    coeffs = np.array(
        [(1.0 - weight) * left.coefficient(u) + weight * right.coefficient(u) for u in union]
    )
    return PceSurrogate(space=family.space, indices=tuple(union), coefficients=coeffs)


# ---------------------------------------------------------------------------
# station predictors


class StationPredictor:
    """Evaluates a fixed bank of surrogates (one per station) in one pass.

    All stations share a union index set, so a single basis row serves every
    station: predictions = C @ Phi(xi).
    """

    def __init__(self, space: ParameterSpace, index_array: np.ndarray, coeff_matrix: np.ndarray,
                 station_coords: np.ndarray | None = None):
        self.space = space
        self.index_array = np.asarray(index_array, dtype=np.int64)
        self.coeff_matrix = np.asarray(coeff_matrix, dtype=float)
        if self.coeff_matrix.shape[1] != self.index_array.shape[0]:
            raise ValidationError("coefficient matrix and index set disagree")
        self.station_coords = None if station_coords is None else np.asarray(station_coords, dtype=float)
        self.n_stations = self.coeff_matrix.shape[0]

    def __call__(self, nu) -> np.ndarray:
        xi = self.space.to_reference(np.asarray(nu, dtype=float))
        phi = _basis_matrix(xi, self.index_array)[0]
        return self.coeff_matrix @ phi

    def predict_many(self, nus) -> np.ndarray:
        xi = self.space.to_reference(np.atleast_2d(np.asarray(nus, dtype=float)))
        phi = _basis_matrix(xi, self.index_array)
        return phi @ self.coeff_matrix.T


def surrogates_predictor(surrogates, station_coords=None) -> StationPredictor:
    """Bundle per-station surrogates (shared space) into one predictor."""
    surrogates = list(surrogates)
    if not surrogates:
        raise ValidationError("at least one surrogate required")
    space = surrogates[0].space
    union = sorted({u for s in surrogates for u in s.indices}, key=_graded_lex_key)
    position = {u: i for i, u in enumerate(union)}
    coeff_matrix = np.zeros((len(surrogates), len(union)))
    for row, surr in enumerate(surrogates):
        if surr.space != space:
            raise ValidationError("surrogates must share one parameter space")
        for u, c in zip(surr.indices, surr.coefficients):
            coeff_matrix[row, position[u]] = c
    index_array = np.array(union, dtype=np.int64).reshape(len(union), space.size)
    return StationPredictor(space, index_array, coeff_matrix, station_coords)


def family_predictor(family: SurrogateFamily, coords) -> StationPredictor:
    """Predictor at arbitrary coordinates, interpolating between stations."""
    coords = np.asarray(coords, dtype=float).ravel()
    surrogates = [interpolate_coefficients(family, t) for t in coords]
    return surrogates_predictor(surrogates, station_coords=coords)


# ---------------------------------------------------------------------------
# archive format


ARCHIVE_MAGIC = "# pce-family-archive v1"


def write_family_archive(family: SurrogateFamily, path, order: int | None = None,
                         data_space: str = "linear", extra: dict | None = None) -> None:
    """Write a family to the text archive format.

    Header records dimension, order, the bounds checksum, and the parameter
    entries; each station block lists ``u_1 ... u_s c`` rows in graded-lex
    order. Identical inputs produce byte-identical files. ``extra`` adds
    free-form header keys (e.g. the experiment id).
    """
    path = Path(path)
    space = family.space
    if order is None:
        order = max(s.order for s in family.surrogates)
    lines = [ARCHIVE_MAGIC]
    lines.append(f"dimension {space.size}")
    lines.append(f"order {order}")
    lines.append(f"data_space {data_space}")
    for key in sorted(extra or {}):
        lines.append(f"{key} {extra[key]}")
    lines.append(f"bounds_checksum {space.checksum()}")
    for e in space.entries:
        lines.append(
            "param\t" + "\t".join(
                [e.name, float_repr(e.nominal), float_repr(e.lower), float_repr(e.upper), e.unit]
            )
        )
    lines.append(f"stations {family.n_stations}")
    for coord, surr in zip(family.coords, family.surrogates):
        lines.append(f"station {float_repr(coord)}")
        for idx, c in zip(surr.indices, surr.coefficients):
            lines.append(" ".join(str(u) for u in idx) + " " + float_repr(c))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_family_archive(path) -> tuple[SurrogateFamily, dict]:
    """Read an archive; returns the family and header metadata."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != ARCHIVE_MAGIC:
        raise ValidationError(f"{path}: not a surrogate archive")
    meta: dict = {}
    entries: list[ParameterEntry] = []
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("station "):
        line = lines[pos]
        pos += 1
        if not line.strip():
            continue
        if line.startswith("param\t"):
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValidationError(f"{path}: malformed param line: {line!r}")
            entries.append(
                ParameterEntry(parts[1], float(parts[2]), float(parts[3]), float(parts[4]), parts[5])
            )
            continue
        key, _, value = line.partition(" ")
        meta[key] = value
    for key in ("dimension", "order", "bounds_checksum", "stations"):
        if key not in meta:
            raise ValidationError(f"{path}: missing '{key}' in archive header")
    dimension = int(meta["dimension"])
    meta["dimension"] = dimension
    meta["order"] = int(meta["order"])
    meta["stations"] = int(meta["stations"])
    meta.setdefault("data_space", "linear")
    if len(entries) != dimension:
        raise ValidationError(f"{path}: {len(entries)} param lines, dimension says {dimension}")
    space = ParameterSpace(tuple(entries))
    if space.checksum() != meta["bounds_checksum"]:
        raise ValidationError(f"{path}: bounds checksum does not match the param lines")

    coords: list[float] = []
    surrogates: list[PceSurrogate] = []
    current_indices: list[MultiIndex] = []
    current_coeffs: list[float] = []

    def flush():
        if coords and len(coords) > len(surrogates):
            surrogates.append(
                PceSurrogate(space, tuple(current_indices), np.array(current_coeffs))
            )
            current_indices.clear()
            current_coeffs.clear()

    for line in lines[pos:]:
        if not line.strip():
            continue
        if line.startswith("station "):
            flush()
            coords.append(float(line.split(" ", 1)[1]))
            continue
        parts = line.split()
        if len(parts) != dimension + 1:
            raise ValidationError(f"{path}: malformed coefficient row: {line!r}")
        current_indices.append(tuple(int(u) for u in parts[:dimension]))
        current_coeffs.append(float(parts[-1]))
    flush()
    if len(surrogates) != meta["stations"]:
        raise ValidationError(
            f"{path}: found {len(surrogates)} station blocks, header says {meta['stations']}"
        )
    return SurrogateFamily(coords=np.array(coords), surrogates=tuple(surrogates)), meta
