"""Analytic forward models for ground-truth pipeline tests and demos.

The Arrhenius rate model stands in for an expensive simulator: cheap, smooth,
strictly positive, and exactly linear in its parameters after a log10
transform, which makes end-to-end recovery assertions sharp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DataSummarySet,
    FunctionPredictor,
    ParameterEntry,
    ParameterSpace,
    ValidationError,
)

__all__ = [
    "KB_EV_PER_K",
    "ArrheniusModel",
    "TruthRecord",
    "arrhenius_eval",
    "default_arrhenius_space",
    "make_synthetic_problem",
]

KB_EV_PER_K = 8.617333262e-5  # Boltzmann constant, eV/K


def arrhenius_eval(q_ev, log10_freq, temperature):
    """Thermally activated rate: 10**log10w * exp(-Q / (kB * T)).

    Strictly positive, and strictly increasing in T for Q > 0.
    """
    temperature = np.asarray(temperature, dtype=float)
    if np.any(temperature <= 0):
        raise ValidationError("temperature must be positive")
    out = 10.0**np.asarray(log10_freq, dtype=float) * np.exp(
        -np.asarray(q_ev, dtype=float) / (KB_EV_PER_K * temperature)
    )
    return float(out) if out.ndim == 0 else out


def default_arrhenius_space() -> ParameterSpace:
    """Two-parameter space used by the bundled demo problem."""
    return ParameterSpace(
        (
            ParameterEntry("Q", 1.1, 0.7, 1.5, "eV"),
            ParameterEntry("log10w", -4.0, -5.5, -2.5, "log10(m^2/s)"),
        )
    )


@dataclass(frozen=True)
class ArrheniusModel:
    """Arrhenius model bound to named parameters of a space.

    ``offset_name``, when set, names an additive offset on log10w: a stand-in
    for experiment-specific operating conditions.
    """

    space: ParameterSpace
    q_name: str = "Q"
    logw_name: str = "log10w"
    offset_name: str | None = None

    def __post_init__(self):
        self.space.index_of(self.q_name)
        self.space.index_of(self.logw_name)
        if self.offset_name is not None:
            self.space.index_of(self.offset_name)

    def evaluate(self, nu, temperatures) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        q = nu[self.space.index_of(self.q_name)]
        logw = nu[self.space.index_of(self.logw_name)]
        if self.offset_name is not None:
            logw = logw + nu[self.space.index_of(self.offset_name)]
        return np.atleast_1d(arrhenius_eval(q, logw, temperatures))

    def predictor(self, temperatures, log10: bool = False) -> FunctionPredictor:
        """Station predictor at the given temperatures; optionally in log10 space."""
        temperatures = np.asarray(temperatures, dtype=float).ravel()

        def fn(nu):
            out = self.evaluate(nu, temperatures)
            return np.log10(out) if log10 else out

        def batch_fn(nus):
            return np.stack([fn(nu) for nu in nus])

        return FunctionPredictor(fn, temperatures.shape[0], batch_fn=batch_fn)


@dataclass(frozen=True)
class TruthRecord:
    """Ground truth behind a generated problem, for recovery assertions."""

    parameters: dict[str, float]
    noise_fraction: float
    seed: int


def make_synthetic_problem(model: ArrheniusModel, truth, stations, noise_fraction: float,
                           n_sets: int = 1, seed: int = 0,
                           labels=None) -> tuple[list[DataSummarySet], TruthRecord]:
    """Generate data-summary sets from a known truth.

    Per set: y_n = f(truth, T_n) * (1 + noise draws), s_n = noise_fraction * y_n.
    Multiplicative noise keeps observables positive across decades.
    """
    stations = np.asarray(stations, dtype=float).ravel()
    if stations.size == 0:
        raise ValidationError("at least one station required")
    if not (noise_fraction > 0):
        raise ValidationError("noise fraction must be positive")
    if n_sets < 1:
        raise ValidationError("at least one data set required")
    truth = np.asarray(truth, dtype=float).ravel()
    if truth.shape != (model.space.size,):
        raise ValidationError("truth vector must match the model's parameter space")
    rng = np.random.default_rng(seed)
    exact = model.evaluate(truth, stations)
    sets = []
    for d in range(1, n_sets + 1):
        values = exact * (1.0 + noise_fraction * rng.standard_normal(stations.shape[0]))
        if np.any(values <= 0):
            raise ValidationError("noise drove a synthetic observable non-positive; reduce it")
        label = labels[d - 1] if labels is not None else f"synthetic-{d}"
        sets.append(
            DataSummarySet(
                id=d,
                label=label,
                coords=stations[:, None],
                values=values,
                sigmas=noise_fraction * values,
            )
        )
    record = TruthRecord(
        parameters=dict(zip(model.space.names, (float(v) for v in truth))),
        noise_fraction=float(noise_fraction),
        seed=int(seed),
    )
    return sets, record
