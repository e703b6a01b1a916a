"""Adaptive random-walk Metropolis sampling, chain post-processing, MAP
extraction, and a deterministic warm-start ascent for chain starting values.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import NumericalError, ValidationError, float_repr

__all__ = [
    "Chain",
    "WarmStartResult",
    "run_chain",
    "postprocess",
    "map_estimate",
    "warm_start",
    "write_chain_csv",
    "read_chain_csv",
    "write_trace_files",
]

ADAPT_SCALE = 2.38**2  # optimal random-walk scaling constant, divided by dimension
COV_JITTER = 1e-10
DEFAULT_STATE_CAP = 200_000_000  # entries, ~1.6 GB of float64


@dataclass(frozen=True)
class Chain:
    """A finished Metropolis chain: states 1..M plus the start state.

    ``states[m]`` differs from ``states[m-1]`` only where ``accepted[m]`` is
    True; ``logposts`` tracks the target value of each state.
    """

    states: np.ndarray  # (M, s)
    logposts: np.ndarray  # (M,)
    accepted: np.ndarray  # (M,) bool
    start: np.ndarray  # (s,)
    start_logpost: float
    seed: int
    jump: float
    adapt_start: int | None  # None when adaptation was off
    initial_step: np.ndarray  # (s,) pre-adaptive proposal sd per coordinate
    final_proposal_cov: np.ndarray | None  # (s, s) after the last adaptive step

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    def acceptance_rate_after(self, step: int) -> float:
        """Acceptance rate over steps > ``step`` (1-based), e.g. the adaptive phase."""
        if step >= self.n_steps:
            raise ValidationError("step must be smaller than the chain length")
        return float(self.accepted[step:].mean())


def run_chain(target, start, steps: int, jump: float, scales=None, adapt: bool = True,
              adapt_start: int | None = None, seed: int = 0,
              state_cap: int = DEFAULT_STATE_CAP) -> Chain:
    """Random-walk Metropolis with optional covariance adaptation.

    Proposals are Gaussian around the current state. Before ``adapt_start``
    (default max(1000, 2s)) the proposal sd is ``jump * scales`` per
    coordinate; afterwards the covariance is (2.38^2 / s) times the running
    sample covariance of the whole history plus a 1e-10 jitter, updated every
    step. Acceptance uses min(1, exp(delta log-posterior)). Deterministic
    given the seed. Out-of-bounds proposals are never rejected outright; a
    smooth prior in the target is expected to penalize them.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    s = start.shape[0]
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if not (jump > 0):
        raise ValidationError("jump size must be positive")
    if steps * s > state_cap:
        raise ValidationError(
            f"chain storage {steps} x {s} exceeds the cap of {state_cap} entries"
        )
    if scales is None:
        scales = np.ones(s)
    else:
        scales = np.asarray(scales, dtype=float).ravel()
        if scales.shape != (s,) or not np.all(scales > 0):
            raise ValidationError("scales must be positive and match the dimension")
    lp0 = float(target(start))
    if not math.isfinite(lp0):
        raise NumericalError(f"target is not finite at the start point ({lp0})")
    if adapt_start is None:
        adapt_start = max(1000, 2 * s)

    rng = np.random.default_rng(seed)
    step_sd = jump * scales
    sd_scale = ADAPT_SCALE / s
    eye = np.eye(s)

    states = np.empty((steps, s))
    logposts = np.empty(steps)
    accepted = np.zeros(steps, dtype=bool)

    # running mean/covariance of the chain history (Welford), seeded with the start
    hist_n = 1
    hist_mean = start.copy()
    hist_m2 = np.zeros((s, s))

    cur = start.copy()
    lp = lp0
    proposal_cov = None
    for m in range(1, steps + 1):
        draw = rng.standard_normal(s)
        if adapt and m > adapt_start and hist_n >= 2:
            proposal_cov = sd_scale * (hist_m2 / (hist_n - 1)) + COV_JITTER * eye
            if s == 1:
                step = math.sqrt(proposal_cov[0, 0]) * draw
            else:
                try:
                    step = np.linalg.cholesky(proposal_cov) @ draw
                except np.linalg.LinAlgError:
                    step = step_sd * draw
        else:
            step = step_sd * draw
        prop = cur + step
        lp_prop = float(target(prop))
        if math.isfinite(lp_prop):
            delta = lp_prop - lp
            alpha = 1.0 if delta >= 0 else math.exp(delta)
        else:
            alpha = 0.0
        if rng.random() < alpha:
            cur = prop
            lp = lp_prop
            accepted[m - 1] = True
        states[m - 1] = cur
        logposts[m - 1] = lp
        hist_n += 1
        delta_mean = cur - hist_mean
        hist_mean += delta_mean / hist_n
        hist_m2 += np.outer(delta_mean, cur - hist_mean)

    states.setflags(write=False)
    logposts.setflags(write=False)
    accepted.setflags(write=False)
    return Chain(
        states=states,
        logposts=logposts,
        accepted=accepted,
        start=start,
        start_logpost=lp0,
        seed=seed,
        jump=jump,
        adapt_start=adapt_start if adapt else None,
        initial_step=step_sd,
        final_proposal_cov=proposal_cov,
    )


def postprocess(chain: Chain, burn_in: int, subsample: int = 1) -> np.ndarray:
    """Retained states: 1-based indices m with m > burn_in and (m - burn_in) % subsample == 0."""
    if burn_in < 0:
        raise ValidationError("burn-in must be >= 0")
    if burn_in >= chain.n_steps:
        raise ValidationError(
            f"burn-in {burn_in} must be smaller than the chain length {chain.n_steps}"
        )
    if subsample < 1:
        raise ValidationError("subsample rate must be >= 1")
    return chain.states[burn_in + subsample - 1 :: subsample].copy()


def map_estimate(chain: Chain) -> tuple[np.ndarray, float]:
    """State with the highest recorded log-posterior; first occurrence on ties."""
    best = int(np.argmax(chain.logposts))
    return chain.states[best].copy(), float(chain.logposts[best])


@dataclass(frozen=True)
class WarmStartResult:
    point: np.ndarray
    value: float
    stalled: bool  # True when no ascent step improved the target


def warm_start(target, start, iterations: int = 50, scales=None,
               fd_step: float = 1e-6) -> WarmStartResult:
    """Deterministic finite-difference gradient ascent with backtracking.

    Never returns a point worse than the start; if every backtracking step
    fails on the first iteration, the start is returned with ``stalled``.
    """
    x = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    s = x.shape[0]
    if scales is None:
        scales = np.ones(s)
    else:
        scales = np.asarray(scales, dtype=float).ravel()
        if scales.shape != (s,) or not np.all(scales > 0):
            raise ValidationError("scales must be positive and match the dimension")
    f = float(target(x))
    if not math.isfinite(f):
        raise NumericalError(f"target is not finite at the start point ({f})")

    h = fd_step * scales
    improved_ever = False
    for _ in range(max(0, iterations)):
        grad = np.empty(s)
        for j in range(s):
            e = np.zeros(s)
            e[j] = h[j]
            grad[j] = (float(target(x + e)) - float(target(x - e))) / (2.0 * h[j])
        if not np.all(np.isfinite(grad)) or np.linalg.norm(grad * scales) < 1e-14:
            break
        direction = grad * scales**2  # diagonal preconditioning by the coordinate scales
        t = 1.0
        improved = False
        for _ in range(40):
            candidate = x + t * direction
            fc = float(target(candidate))
            if math.isfinite(fc) and fc > f:
                x, f = candidate, fc
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        improved_ever = True
    return WarmStartResult(point=x, value=f, stalled=not improved_ever)


# ---------------------------------------------------------------------------
# chain archives and trace data


def write_chain_csv(chain: Chain, path, parameter_names) -> None:
    """Chain archive: ``iter,logpost,<name>...`` rows; iter 0 is the start state."""
    path = Path(path)
    names = list(parameter_names)
    if len(names) != chain.dimension:
        raise ValidationError("one column name per chain dimension required")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "logpost"] + names)
        writer.writerow([0, float_repr(chain.start_logpost)] + [float_repr(v) for v in chain.start])
        for m in range(chain.n_steps):
            writer.writerow(
                [m + 1, float_repr(chain.logposts[m])]
                + [float_repr(v) for v in chain.states[m]]
            )


def read_chain_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read a chain archive; returns (states incl. start, logposts, names)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["iter", "logpost"]:
            raise ValidationError(f"{path}: not a chain archive")
        names = header[2:]
        states = []
        logposts = []
        for row in reader:
            if not row:
                continue
            logposts.append(float(row[1]))
            states.append([float(c) for c in row[2:]])
    return np.array(states), np.array(logposts), names


def write_trace_files(chain: Chain, space, out_dir, stride: int = 1) -> list[Path]:
    """Plot-ready trace data per parameter: ``iteration,value_scaled`` in [-1, 1]."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    scaled = space.to_reference(chain.states)
    paths = []
    for j, name in enumerate(space.names):
        path = out_dir / f"trace_{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "value_scaled"])
            for m in range(0, chain.n_steps, stride):
                writer.writerow([m + 1, float_repr(scaled[m, j])])
        paths.append(path)
    return paths
