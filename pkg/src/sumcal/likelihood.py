"""Log-density assembly: Gaussian data likelihoods, log-pooled synthetic-data
likelihoods, weighted multi-experiment combination, Gaussian priors, and
log-posteriors. Everything stays in log space; no raw probabilities.
"""
from __future__ import annotations

import math

import numpy as np

from .core import GaussianPrior, SyntheticDataCollection, ValidationError

__all__ = [
    "LogDensity",
    "gaussian_loglik",
    "pooled_loglik",
    "default_weights",
    "combined_loglik",
    "log_prior",
    "prior_density",
    "log_posterior",
]

LOG_2PI = math.log(2.0 * math.pi)


class LogDensity:
    """A log density up to an additive constant: nu (s-vector) -> float.

    Evaluation is pure and reentrant; instances can be shared across chains.
    """

    def __init__(self, fn, label: str = "", components: tuple[str, ...] = ()):
        self._fn = fn
        self.label = label
        self.components = tuple(components)

    def __call__(self, nu) -> float:
        return float(self._fn(np.asarray(nu, dtype=float)))

    def __repr__(self):
        return f"LogDensity({self.label or self._fn!r})"


def gaussian_loglik(observations, predictions, sigmas) -> float:
    """Independent-Gaussian log-likelihood.

    -1/2 * sum_n [ log(2 pi sigma_n^2) + (q_n - f_n)^2 / sigma_n^2 ]
    """
    q = np.asarray(observations, dtype=float).ravel()
    f = np.asarray(predictions, dtype=float).ravel()
    sig = np.asarray(sigmas, dtype=float).ravel()
    if not (q.shape == f.shape == sig.shape):
        raise ValidationError("observations, predictions and sigmas must have equal length")
    if not np.all(sig > 0):
        raise ValidationError("sigmas must be positive")
    z = (q - f) / sig
    return float(-0.5 * np.sum(LOG_2PI + 2.0 * np.log(sig) + z * z))


def pooled_loglik(collection: SyntheticDataCollection, predictions) -> float:
    """Log-pooled likelihood of K replicate synthetic data sets.

    -1/2 * sum_n [ log(2 pi beta s_n^2)
                   + (1 / (K beta s_n^2)) * sum_k (z_{n,k} - f_n)^2 ]

    The replicate sum is evaluated through the centered identity
    sum_k (z - f)^2 = ssd_n + K (zbar_n - f_n)^2, which is exact and avoids
    cancellation for far-from-zero observables.
    """
    f = np.asarray(predictions, dtype=float).ravel()
    if f.shape != (collection.n_stations,):
        raise ValidationError(
            f"predictions have length {f.shape[0]}, collection has {collection.n_stations} stations"
        )
    beta = collection.beta
    var = beta * collection.sigmas**2
    resid = collection.station_ssd + collection.k * (collection.station_means - f) ** 2
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * var) + resid / (collection.k * var)))


def default_weights(counts) -> np.ndarray:
    """Inverse-count weights alpha_d = N_d^-1 / sum_d N_d^-1; sums to 1."""
    counts = np.asarray(counts, dtype=float).ravel()
    if counts.size == 0:
        raise ValidationError("at least one station count required")
    if np.any(counts < 1):
        raise ValidationError("station counts must be >= 1")
    inv = 1.0 / counts
    return inv / inv.sum()


def combined_loglik(collections, predictors, weights=None) -> LogDensity:
    """Multi-experiment log-likelihood over consistent synthetic data.

    Unweighted: sum_d pooled_d(nu). Weighted: D * sum_d alpha_d * pooled_d(nu),
    so uniform weights reproduce the unweighted value exactly.
    """
    collections = list(collections)
    predictors = list(predictors)
    if not collections:
        raise ValidationError("at least one synthetic-data collection required")
    if len(predictors) != len(collections):
        raise ValidationError("one predictor per collection required")
    for coll, pred in zip(collections, predictors):
        if pred.n_stations != coll.n_stations:
            raise ValidationError(
                f"set {coll.set_id}: predictor has {pred.n_stations} stations, "
                f"collection has {coll.n_stations}"
            )
    n_sets = len(collections)
    if weights is not None:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != (n_sets,):
            raise ValidationError("one weight per collection required")
        if np.any(weights <= 0):
            raise ValidationError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValidationError("weights must sum to 1")

    if weights is None:
        def fn(nu):
            return sum(pooled_loglik(c, p(nu)) for c, p in zip(collections, predictors))
    else:
        def fn(nu):
            return n_sets * sum(
                w * pooled_loglik(c, p(nu))
                for w, c, p in zip(weights, collections, predictors)
            )

    labels = tuple(f"set{c.set_id}" for c in collections)
    kind = "weighted" if weights is not None else "unweighted"
    return LogDensity(fn, label=f"{kind} pooled likelihood", components=labels)


def log_prior(prior: GaussianPrior, nu) -> float:
    """Sum of independent Gaussian log densities."""
    nu = np.asarray(nu, dtype=float).ravel()
    if nu.shape != prior.means.shape:
        raise ValidationError(
            f"dimension mismatch: point has {nu.shape[0]}, prior has {prior.size}"
        )
    z = (nu - prior.means) / prior.sigmas
    return float(-0.5 * np.sum(LOG_2PI + 2.0 * np.log(prior.sigmas) + z * z))


def prior_density(prior: GaussianPrior) -> LogDensity:
    return LogDensity(lambda nu: log_prior(prior, nu), label="gaussian prior")


def log_posterior(prior: GaussianPrior, likelihood: LogDensity) -> LogDensity:
    """Pointwise sum of log-prior and log-likelihood (constant dropped)."""
    return LogDensity(
        lambda nu: log_prior(prior, nu) + likelihood(nu),
        label="log posterior",
        components=("prior",) + likelihood.components,
    )
