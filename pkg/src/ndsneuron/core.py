"""Discrete NDS neuron map and the continuous Rössler reference system.

The NDS neuron is a discretised Rössler system with a threshold/reset on its
third variable ``u``::

    x(t+1) = x(t) + b (-y(t) - u(t))
    y(t+1) = y(t) + c (x(t) + a y(t))
    u(t+1) = eta0                                  if u(t) > theta
             u(t) + d (v - u(t) x(t) + k u(t)) + D(t)   otherwise

and the binary output gamma(t+1) = 1 exactly when the reset branch fires.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, Union

import numpy as np


class DivergenceError(ArithmeticError):
    """A trajectory left the region bounded by ``divergence_bound``."""

    def __init__(self, step: int | None = None, value: float = math.nan):
        self.step = step
        self.value = value
        where = "" if step is None else f" at step {step}"
        super().__init__(f"trajectory diverged{where} (|value| = {value:g})")


@dataclass(frozen=True, slots=True)
class NdsParams:
    a: float = 0.002
    v: float = 0.002
    b: float = 0.03
    c: float = 0.03
    d: float = 0.8
    k: float = -0.057
    theta: float = -0.01
    eta0: float = -1.0
    divergence_bound: float = 1e6

    def __post_init__(self):
        if not self.divergence_bound > 0:
            raise ValueError("divergence_bound must be positive")


@dataclass(frozen=True, slots=True)
class NdsState:
    x: float
    y: float
    u: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.u)


@dataclass(frozen=True, slots=True)
class RosslerParams:
    a: float = 0.2
    b: float = 0.2
    c: float = 5.7


class Reset(Protocol):
    def apply(self, u: float) -> float: ...


@dataclass(frozen=True)
class Trajectory:
    """States and spike output of one run.

    ``states`` is an ``(n, 3)`` float array of ``(x, y, u)`` rows and
    ``spikes[t]`` is the output emitted by the transition into ``states[t]``
    (``spikes[0]`` is 0).
    """

    states: np.ndarray
    spikes: np.ndarray
    start_time: int = 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float).reshape(-1, 3)
        spikes = np.asarray(self.spikes, dtype=np.int8).reshape(-1)
        if len(states) != len(spikes):
            raise ValueError("states and spikes must have equal length")
        if not np.isin(spikes, (0, 1)).all():
            raise ValueError("spikes must be binary")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "spikes", spikes)

    def __len__(self) -> int:
        return len(self.states)

    def state(self, t: int) -> NdsState:
        x, y, u = self.states[t]
        return NdsState(float(x), float(y), float(u))

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def u(self) -> np.ndarray:
        return self.states[:, 2]

    def head(self, n: int) -> "Trajectory":
        return Trajectory(self.states[:n], self.spikes[:n], self.start_time)


def nds_step(
    state: NdsState,
    params: NdsParams,
    drive: float = 0.0,
    reset: Reset | None = None,
) -> tuple[NdsState, int]:
    """Advance the neuron by one time step.

    ``drive`` is added to ``u`` only on the non-reset branch. When ``reset``
    is given it replaces the fixed ``u -> eta0`` assignment.

    Raises:
        DivergenceError: if any component of the new state exceeds
            ``params.divergence_bound`` in magnitude.
    """
    x, y, u = state.x, state.y, state.u
    if u > params.theta:
        u_next = params.eta0 if reset is None else reset.apply(u)
        spike = 1
    else:
        u_next = u + params.d * (params.v - u * x + params.k * u) + drive
        spike = 0
    x_next = x + params.b * (-y - u)
    y_next = y + params.c * (x + params.a * y)

    bound = params.divergence_bound
    # NaN fails every comparison, so test with `not <=`
    for value in (x_next, y_next, u_next):
        if not abs(value) <= bound:
            raise DivergenceError(value=value)
    return NdsState(x_next, y_next, u_next), spike


DriveSource = Union[Sequence[float], Callable[[int], float], None]


def run_free(
    params: NdsParams,
    initial: NdsState,
    steps: int,
    drive_source: DriveSource = None,
) -> Trajectory:
    """Iterate ``nds_step`` from ``initial`` for ``steps`` transitions.

    ``drive_source[t]`` (or ``drive_source(t)``) is the drive used on the
    transition that produces ``states[t + 1]``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if drive_source is None:
        drive_at = lambda t: 0.0  # noqa: E731
    elif callable(drive_source):
        drive_at = drive_source
    else:
        drive_at = drive_source.__getitem__

    states = [initial.as_tuple()]
    spikes = [0]
    state = initial
    for t in range(steps):
        try:
            state, spike = nds_step(state, params, drive_at(t))
        except DivergenceError as err:
            raise DivergenceError(t + 1, err.value) from None
        states.append((state.x, state.y, state.u))
        spikes.append(spike)
    return Trajectory(np.array(states), np.array(spikes, dtype=np.int8))


def random_initial_state(seed: int | np.random.Generator) -> NdsState:
    """Draw an initial state: x, u ~ U[-0.5, 0.5], y ~ U[0, 0.5].

    Starting points with strongly negative y lie outside the attractor's
    y-range and a few percent of them escape to infinity during the
    transient, so y is drawn from the non-negative half only.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x, y, u = rng.uniform((-0.5, 0.0, -0.5), (0.5, 0.5, 0.5))
    return NdsState(float(x), float(y), float(u))


def rossler_derivative(state: Sequence[float], params: RosslerParams = RosslerParams()) -> np.ndarray:
    x, y, z = state
    return np.array([-y - z, x + params.a * y, params.b + z * (x - params.c)])


def rossler_integrate(
    initial: Sequence[float],
    params: RosslerParams = RosslerParams(),
    dt: float = 0.01,
    steps: int = 10000,
    bound: float = 1e6,
) -> np.ndarray:
    """Classic fixed-step RK4 integration; returns an ``(steps + 1, 3)`` array."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out = np.empty((steps + 1, 3))
    s = np.asarray(initial, dtype=float)
    out[0] = s
    f = rossler_derivative
    for i in range(steps):
        k1 = f(s, params)
        k2 = f(s + 0.5 * dt * k1, params)
        k3 = f(s + 0.5 * dt * k2, params)
        k4 = f(s + dt * k3, params)
        s = s + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.abs(s) <= bound):
            raise DivergenceError(i + 1, float(np.max(np.abs(s))))
        out[i + 1] = s
    return out
