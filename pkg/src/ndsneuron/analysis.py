"""Spike-train periodicity, lag-tau self-synchronisation and run verdicts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .control import RunRecord
from .core import Trajectory

Variable = Literal["x", "y", "u", "xy-plane", "xyz-euclidean"]
_COLUMNS = {"x": 0, "y": 1, "u": 2}

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class SpikeTrain:
    times: np.ndarray
    horizon: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64).reshape(-1)
        if len(times) and (np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] >= self.horizon):
            raise ValueError("spike times must be strictly increasing within [0, horizon)")
        object.__setattr__(self, "times", times)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.horizon, dtype=np.int8)
        out[self.times] = 1
        return out

    def pattern(self, start: int, period: int) -> np.ndarray:
        """Spike offsets within ``[start, start + period)``."""
        t = self.times
        return t[(t >= start) & (t < start + period)] - start


@dataclass(frozen=True)
class StabilizationVerdict:
    kind: Literal["stabilized", "diverged", "unresolved"]
    spike_stabilization_time: int | None = None
    full_stabilization_time: int | None = None
    period: int | None = None

    def __post_init__(self):
        if self.kind == "stabilized" and (self.period is None or self.spike_stabilization_time is None):
            raise ValueError("a stabilized verdict needs a period and a spike stabilization time")
        if self.kind == "diverged" and (
            self.spike_stabilization_time is not None or self.full_stabilization_time is not None
        ):
            raise ValueError("a diverged verdict carries no stabilization time")

    @property
    def stabilized(self) -> bool:
        return self.kind == "stabilized"


@dataclass(frozen=True)
class DifferenceSeries:
    """Lag-``tau`` differences; ``values[i]`` belongs to time ``lag + i``.

    Scalar selectors and ``xyz-euclidean`` hold non-negative magnitudes.
    ``xy-plane`` holds the signed ``(dx, dy)`` pairs, since the spiral
    towards the origin is only visible with signs kept.
    """

    variable: Variable
    lag: int
    values: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.lag, self.lag + len(self.values))

    def magnitudes(self) -> np.ndarray:
        if self.values.ndim == 2:
            return np.hypot(self.values[:, 0], self.values[:, 1])
        return self.values


def extract_spikes(trajectory: Trajectory) -> SpikeTrain:
    times = np.flatnonzero(trajectory.spikes) + trajectory.start_time
    return SpikeTrain(times, len(trajectory) + trajectory.start_time)


def _first_clean_window(bad: np.ndarray, window: int, candidates: np.ndarray) -> int | None:
    """First candidate ``s`` with ``bad[s:s + window]`` all False."""
    if window <= 0:
        raise ValueError("window must be positive")
    last = len(bad) - window
    candidates = candidates[(candidates >= 0) & (candidates <= last)]
    if not len(candidates):
        return None
    csum = np.concatenate(([0], np.cumsum(bad, dtype=np.int64)))
    clean = csum[candidates + window] == csum[candidates]
    hits = np.flatnonzero(clean)
    return int(candidates[hits[0]]) if len(hits) else None


def spike_periodicity(train: SpikeTrain, tau: int, window: int, start: int = 0) -> int | None:
    """Earliest spike time from which the train repeats with period ``tau``.

    The result ``t*`` is a spike time ``>= start`` such that for every ``s``
    in ``[t*, t* + window)`` the neuron spikes at ``s`` exactly when it
    spikes at ``s + tau``. Anchoring on a spike means a silent stretch is
    never reported as periodic.
    """
    if tau < 1:
        raise ValueError("tau must be positive")
    if window < 2 * tau:
        raise ValueError("window must be at least 2 * tau")
    g = train.dense()
    if len(g) <= tau:
        return None
    mismatch = g[:-tau] != g[tau:]
    candidates = train.times[train.times >= start]
    return _first_clean_window(mismatch, window, candidates)


def lagged_sup_difference(trajectory: Trajectory, tau: int) -> np.ndarray:
    """max over (x, y, u) of |rho(t) - rho(t - tau)|, for t = tau, tau+1, ..."""
    s = trajectory.states
    return np.abs(s[tau:] - s[:-tau]).max(axis=1)


def full_stabilization(
    trajectory: Trajectory,
    tau: int,
    epsilon: float = DEFAULT_EPSILON,
    window: int | None = None,
    start: int = 0,
) -> int | None:
    """Earliest ``t* >= max(tau, start)`` where the state repeats with lag ``tau``.

    Every ``s`` in ``[t*, t* + window)`` must satisfy
    ``max_rho |rho(s) - rho(s - tau)| < epsilon``. ``window`` defaults to
    ``2 * tau``.
    """
    window = 2 * tau if window is None else window
    if window < tau:
        raise ValueError("window must be at least tau")
    if len(trajectory) <= tau:
        return None
    bad = lagged_sup_difference(trajectory, tau) >= epsilon
    first = max(start - tau, 0)
    found = _first_clean_window(bad, window, np.arange(first, len(bad)))
    return None if found is None else found + tau + trajectory.start_time


def difference_pattern(trajectory: Trajectory, variable: Variable, tau: int) -> DifferenceSeries:
    if len(trajectory) <= tau:
        raise ValueError("trajectory must be longer than the lag")
    diff = trajectory.states[tau:] - trajectory.states[:-tau]
    if variable in _COLUMNS:
        values = np.abs(diff[:, _COLUMNS[variable]])
    elif variable == "xy-plane":
        values = diff[:, :2].copy()
    elif variable == "xyz-euclidean":
        values = np.sqrt((diff**2).sum(axis=1))
    else:
        raise ValueError(f"unknown variable selector {variable!r}")
    return DifferenceSeries(variable, tau, values)


def classify_run(
    record: RunRecord,
    tau: int,
    epsilon: float = DEFAULT_EPSILON,
    window: int | None = None,
    max_multiple: int = 10,
    start: int | None = None,
) -> StabilizationVerdict:
    """Verdict for one run.

    The period is the smallest ``m * tau`` (``m <= max_multiple``) whose spike
    pattern becomes periodic at or after ``start`` (the control onset by
    default). The verification window is ``max(window, 2 * period)``.
    """
    if record.diverged:
        return StabilizationVerdict("diverged")
    start = record.config.control_on if start is None else start
    trajectory = record.trajectory
    train = extract_spikes(trajectory)
    for m in range(1, max_multiple + 1):
        period = m * tau
        w = 2 * period if window is None else max(window, 2 * period)
        t_spike = spike_periodicity(train, period, w, start)
        if t_spike is not None:
            t_full = full_stabilization(trajectory, period, epsilon, w, start)
            return StabilizationVerdict("stabilized", t_spike, t_full, period)
    return StabilizationVerdict("unresolved")
