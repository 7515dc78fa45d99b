"""Drive composition, reset policies and controlled runs.

Timing convention
-----------------
A drive entering the update that produces ``u(t)`` is *delivered* at time
``t`` and recorded as ``drives[t]``. Feedback and input spikes are indexed
like the neuron's own output: an input spike at time ``q`` is delivered at
``q - 1``, so that it reaches the threshold test whose outcome is reported as
``gamma(q)``. With this alignment a delay-``tau`` self-connection closes its
loop in exactly ``tau`` steps; a spike at ``s`` can trigger the next one at
``s + tau``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .core import DivergenceError, NdsParams, NdsState, Trajectory, nds_step, random_initial_state


@dataclass(frozen=True, slots=True)
class FeedbackConnection:
    delay: int
    weight: float = 0.3

    def __post_init__(self):
        if int(self.delay) != self.delay or self.delay < 1:
            raise ValueError("feedback delay must be an integer >= 1")


@dataclass(frozen=True)
class InputSchedule:
    """External spike train; each listed time contributes ``amplitude``."""

    spike_times: tuple[int, ...]
    amplitude: float = 0.3
    _lookup: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = tuple(int(t) for t in self.spike_times)
        if any(t < 0 for t in times):
            raise ValueError("input spike times must be >= 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("input spike times must be strictly increasing")
        object.__setattr__(self, "spike_times", times)
        object.__setattr__(self, "_lookup", frozenset(times))

    def __contains__(self, t: int) -> bool:
        return t in self._lookup


@dataclass(frozen=True, slots=True)
class FixedInjection:
    """A fixed value applied to ``u`` once per period.

    Fires at every ``t`` in ``[start_time, end_time)`` with
    ``(t - start_time) % period == phase``. ``assign`` overwrites ``u(t)``
    after the normal update; ``add`` adds the value to the drive delivered
    at ``t``.
    """

    value: float
    phase: int
    period: int
    start_time: int = 0
    end_time: int | None = None
    mode: Literal["assign", "add"] = "assign"

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("injection period must be positive")
        if not 0 <= self.phase < self.period:
            raise ValueError("injection phase must lie in [0, period)")
        if self.end_time is not None and self.end_time <= self.start_time:
            raise ValueError("injection end_time must exceed start_time")
        if self.mode not in ("assign", "add"):
            raise ValueError(f"unknown injection mode {self.mode!r}")

    def fires_at(self, t: int) -> bool:
        if t < self.start_time or (self.end_time is not None and t >= self.end_time):
            return False
        return (t - self.start_time) % self.period == self.phase


@dataclass(frozen=True, slots=True)
class ResetPolicy:
    kind: Literal["fixed", "relative"] = "fixed"
    value: float = -1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "relative"):
            raise ValueError(f"unknown reset kind {self.kind!r}")

    def apply(self, u: float) -> float:
        return apply_reset(self, u)


def apply_reset(policy: ResetPolicy, u: float) -> float:
    if policy.kind == "fixed":
        return policy.value
    return u + policy.value


@dataclass(frozen=True)
class ControlledRunConfig:
    params: NdsParams = NdsParams()
    initial: NdsState | None = None
    total_steps: int = 5000
    control_on: int = 1001
    control_off: int | None = None
    feedback: tuple[FeedbackConnection, ...] = ()
    inputs: tuple[InputSchedule, ...] = ()
    injections: tuple[FixedInjection, ...] = ()
    reset: ResetPolicy | None = None
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("feedback", "inputs", "injections"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        off = self.total_steps if self.control_off is None else self.control_off
        if not 0 <= self.control_on <= off <= self.total_steps:
            raise ValueError("need 0 <= control_on <= control_off <= total_steps")

    @property
    def reset_policy(self) -> ResetPolicy:
        if self.reset is None:
            return ResetPolicy("fixed", self.params.eta0)
        return self.reset

    def resolved_initial(self) -> NdsState:
        if self.initial is not None:
            return self.initial
        return random_initial_state(self.rng_seed)

    def control_active(self, t: int) -> bool:
        return t >= self.control_on and (self.control_off is None or t < self.control_off)


@dataclass(frozen=True)
class RunRecord:
    config: ControlledRunConfig
    trajectory: Trajectory
    drives: np.ndarray
    spike_times: np.ndarray
    diverged_at: int | None = None

    def __post_init__(self):
        if len(self.drives) != len(self.trajectory):
            raise ValueError("drives must align with the trajectory")

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


def feedback_drive(
    spike_history: Sequence[int],
    connections: Sequence[FeedbackConnection],
    t: int,
    control_active: bool = True,
) -> float:
    """Sum of ``w_j * gamma(t - tau_j)``; spikes outside the history count as 0."""
    if not control_active:
        return 0.0
    total = 0.0
    n = len(spike_history)
    for conn in connections:
        i = t - conn.delay
        if 0 <= i < n and spike_history[i]:
            total += conn.weight
    return total


def input_drive(schedules: Sequence[InputSchedule], t: int) -> float:
    total = 0.0
    for schedule in schedules:
        if t in schedule:
            total += schedule.amplitude
    return total


def run_controlled(config: ControlledRunConfig) -> RunRecord:
    """Run the neuron under feedback, inputs, injections and a reset policy.

    Divergence does not raise: the record is truncated at the last finite
    state and ``diverged_at`` holds the step that exceeded the bound.
    """
    params = config.params
    reset = config.reset_policy
    feedback = config.feedback
    inputs = config.inputs
    added = tuple(j for j in config.injections if j.mode == "add")
    assigned = tuple(j for j in config.injections if j.mode == "assign")

    state = config.resolved_initial()
    states = [state.as_tuple()]
    spikes = [0]
    drives = [0.0]
    diverged_at = None

    for t in range(1, config.total_steps + 1):
        drive = 0.0
        if config.control_active(t):
            # spikes are indexed one step ahead of delivery, see module docstring
            drive = feedback_drive(spikes, feedback, t + 1) + input_drive(inputs, t + 1)
            for inj in added:
                if inj.fires_at(t):
                    drive += inj.value
        try:
            state, spike = nds_step(state, params, drive, reset)
        except DivergenceError:
            diverged_at = t
            break
        for inj in assigned:
            if inj.fires_at(t):
                state = NdsState(state.x, state.y, inj.value)
        states.append((state.x, state.y, state.u))
        spikes.append(spike)
        drives.append(drive)

    trajectory = Trajectory(np.array(states), np.array(spikes, dtype=np.int8))
    return RunRecord(
        config=config,
        trajectory=trajectory,
        drives=np.array(drives),
        spike_times=np.flatnonzero(trajectory.spikes),
        diverged_at=diverged_at,
    )


def feedback_config(
    tau: int = 100,
    weight: float = 0.3,
    **kwargs,
) -> ControlledRunConfig:
    """Single self-connection configuration used throughout the experiments."""
    return ControlledRunConfig(feedback=(FeedbackConnection(tau, weight),), **kwargs)
