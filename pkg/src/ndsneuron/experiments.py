"""Reproducible runners for the NDS control, forcing and reset experiments.

Every stochastic choice is an initial condition, and every initial condition
comes from a seed derived from ``(master seed, key...)`` with
``numpy.random.SeedSequence``. Results therefore do not depend on execution
order or on the number of worker processes.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Sequence

import numpy as np

from .analysis import (
    DEFAULT_EPSILON,
    DifferenceSeries,
    StabilizationVerdict,
    classify_run,
    difference_pattern,
    extract_spikes,
)
from .control import (
    ControlledRunConfig,
    FeedbackConnection,
    FixedInjection,
    InputSchedule,
    ResetPolicy,
    RunRecord,
    run_controlled,
)
from .core import NdsParams, random_initial_state

CONTROL_ON = 1001
FEEDBACK_WEIGHT = 0.3
DESK_TAUS = (50, 100, 250, 500, 1000)


def run_seed(master: int, *key: int) -> int:
    """64-bit seed for one run, split from ``master`` along ``key``."""
    seq = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    lo, hi = seq.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def seeded(config: ControlledRunConfig, seed: int) -> ControlledRunConfig:
    return dataclasses.replace(config, initial=random_initial_state(seed), rng_seed=seed)


def feedback_run_config(
    tau: int = 100,
    weight: float = FEEDBACK_WEIGHT,
    total_steps: int = 10000,
    params: NdsParams = NdsParams(),
    reset: ResetPolicy | None = None,
    control_on: int = CONTROL_ON,
) -> ControlledRunConfig:
    return ControlledRunConfig(
        params=params,
        total_steps=total_steps,
        control_on=control_on,
        feedback=(FeedbackConnection(tau, weight),),
        reset=reset,
    )


def _pmap(fn: Callable, jobs: Sequence, parallelism: int = 1) -> list:
    if parallelism <= 1 or len(jobs) < 2:
        return [fn(job) for job in jobs]
    chunk = max(1, len(jobs) // (4 * parallelism))
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, jobs, chunksize=chunk))


def _classify_job(job: tuple[ControlledRunConfig, int]) -> StabilizationVerdict:
    config, tau = job
    return classify_run(run_controlled(config), tau)


# --------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class EnsembleStats:
    verdicts: tuple[StabilizationVerdict, ...]
    horizon: int

    @property
    def n(self) -> int:
        return len(self.verdicts)

    def count(self, kind: str) -> int:
        return sum(v.kind == kind for v in self.verdicts)

    @property
    def reliability(self) -> float:
        return self.count("stabilized") / self.n if self.n else math.nan

    def spike_times(self) -> np.ndarray:
        return np.array([v.spike_stabilization_time for v in self.verdicts if v.stabilized], dtype=float)

    def full_times(self, censor: bool = True) -> np.ndarray:
        """Full-stabilization times of stabilized runs.

        With ``censor`` a run whose dynamics never settled contributes the
        run horizon instead of being dropped.
        """
        out = []
        for v in self.verdicts:
            if not v.stabilized:
                continue
            if v.full_stabilization_time is not None:
                out.append(v.full_stabilization_time)
            elif censor:
                out.append(self.horizon)
        return np.array(out, dtype=float)

    @property
    def mean_spike_time(self) -> float:
        t = self.spike_times()
        return float(t.mean()) if len(t) else math.nan

    @property
    def mean_full_time(self) -> float:
        t = self.full_times()
        return float(t.mean()) if len(t) else math.nan


def run_ensemble(
    template: ControlledRunConfig,
    n: int,
    seed: int,
    tau: int,
    parallelism: int = 1,
    key: Sequence[int] = (),
) -> EnsembleStats:
    """Classify ``n`` runs of ``template`` from seeded initial conditions."""
    jobs = [(seeded(template, run_seed(seed, *key, i)), tau) for i in range(n)]
    return EnsembleStats(tuple(_pmap(_classify_job, jobs, parallelism)), template.total_steps)


# --------------------------------------------------------------------------
# reliability sweep


def sweep_horizon(tau: int, control_on: int = CONTROL_ON) -> int:
    window = 2 * tau
    return max(5000, control_on + 20 * tau + 2 * window)


@dataclass(frozen=True)
class SweepConfig:
    tau_values: tuple[int, ...] = DESK_TAUS
    ics_per_tau: int = 200
    base: ControlledRunConfig = field(default_factory=feedback_run_config)
    seed: int = 0
    parallelism: int = 1
    with_forcing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tau_values", tuple(int(t) for t in self.tau_values))
        if not self.tau_values:
            raise ValueError("tau_values must not be empty")
        if any(t < 1 for t in self.tau_values):
            raise ValueError("tau values must be positive")
        if self.ics_per_tau < 1:
            raise ValueError("ics_per_tau must be >= 1")


@dataclass(frozen=True)
class TauCounts:
    stabilized: int
    diverged: int
    unresolved: int
    mean_spike_time: float = math.nan
    reconstructed: int | None = None

    @property
    def total(self) -> int:
        return self.stabilized + self.diverged + self.unresolved

    @property
    def reliability(self) -> float:
        return self.stabilized / self.total


@dataclass(frozen=True)
class ReliabilityReport:
    per_tau: dict[int, TauCounts]
    overall_reliability: float
    seed: int
    forcing_reliability: float | None = None


def _sweep_job(job: tuple[ControlledRunConfig, int, bool]) -> tuple[StabilizationVerdict, bool | None]:
    config, tau, with_forcing = job
    record = run_controlled(config)
    verdict = classify_run(record, tau)
    if not with_forcing:
        return verdict, None
    if not verdict.stabilized:
        return verdict, False
    try:
        result = reconstruct(record, verdict)
    except ReconstructionFailed:
        return verdict, False
    return verdict, result.matched


def run_reliability_sweep(config: SweepConfig) -> ReliabilityReport:
    """Feedback stabilization reliability over ``tau_values`` x seeded ICs.

    Per-run seeds are keyed on the tau *value*, so adding or removing a tau
    leaves the other rows unchanged.
    """
    jobs = []
    for tau in config.tau_values:
        template = dataclasses.replace(
            config.base,
            feedback=tuple(dataclasses.replace(c, delay=tau) for c in config.base.feedback)
            or (FeedbackConnection(tau, FEEDBACK_WEIGHT),),
            total_steps=sweep_horizon(tau, config.base.control_on),
        )
        for i in range(config.ics_per_tau):
            jobs.append((seeded(template, run_seed(config.seed, tau, i)), tau, config.with_forcing))
    results = _pmap(_sweep_job, jobs, config.parallelism)

    per_tau = {}
    n = config.ics_per_tau
    for j, tau in enumerate(config.tau_values):
        chunk = results[j * n : (j + 1) * n]
        verdicts = [v for v, _ in chunk]
        times = [v.spike_stabilization_time for v in verdicts if v.stabilized]
        per_tau[tau] = TauCounts(
            stabilized=sum(v.kind == "stabilized" for v in verdicts),
            diverged=sum(v.kind == "diverged" for v in verdicts),
            unresolved=sum(v.kind == "unresolved" for v in verdicts),
            mean_spike_time=float(np.mean(times)) if times else math.nan,
            reconstructed=sum(bool(r) for _, r in chunk) if config.with_forcing else None,
        )
    total = n * len(config.tau_values)
    overall = sum(c.stabilized for c in per_tau.values()) / total
    forcing = None
    if config.with_forcing:
        forcing = sum(c.reconstructed for c in per_tau.values()) / total
    return ReliabilityReport(per_tau, overall, config.seed, forcing)


# --------------------------------------------------------------------------
# difference patterns


@dataclass(frozen=True)
class DifferenceAnalysis:
    record: RunRecord
    verdict: StabilizationVerdict
    series: dict[str, DifferenceSeries]


def run_difference_analysis(tau: int = 100, seed: int = 0, total_steps: int = 10000, control: bool = True) -> DifferenceAnalysis:
    if total_steps <= CONTROL_ON + 2 * tau:
        raise ValueError("total_steps must exceed control onset + 2 * tau")
    config = feedback_run_config(tau, total_steps=total_steps)
    if not control:
        config = dataclasses.replace(config, feedback=())
    record = run_controlled(seeded(config, seed))
    verdict = classify_run(record, tau)
    series = {}
    if len(record.trajectory) > tau:
        for name in ("x", "y", "u", "xy-plane", "xyz-euclidean"):
            series[name] = difference_pattern(record.trajectory, name, tau)
    return DifferenceAnalysis(record, verdict, series)


def _interval(series: DifferenceSeries, start: int | None, stop: int | None) -> np.ndarray:
    t = series.times
    keep = np.ones(len(t), dtype=bool)
    if start is not None:
        keep &= t >= start
    if stop is not None:
        keep &= t < stop
    return series.magnitudes()[keep]


def log_curvature(series: DifferenceSeries, start: int | None = None, stop: int | None = None) -> float:
    """Mean absolute second difference of log|difference| over ``[start, stop)``.

    Small values mean the difference decays smoothly from step to step.
    Exact zeros are skipped.
    """
    values = _interval(series, start, stop)
    values = values[values > 0]
    if len(values) < 3:
        return math.nan
    return float(np.abs(np.diff(np.log(values), 2)).mean())


def log_envelope_roughness(
    series: DifferenceSeries, period: int, start: int | None = None, stop: int | None = None
) -> float:
    """Mean absolute second difference of the per-period log maximum.

    Measures how unevenly a difference pattern decays from one period to
    the next: a straight-line decay on a log scale gives a value near zero.
    """
    values = _interval(series, start, stop)
    n = len(values) // period
    if n < 3:
        return math.nan
    env = values[: n * period].reshape(n, period).max(axis=1)
    env = np.log(env[env > 0])
    if len(env) < 3:
        return math.nan
    return float(np.abs(np.diff(env, 2)).mean())


def settles_below(series: DifferenceSeries, epsilon: float = DEFAULT_EPSILON, hold: int | None = None) -> bool:
    """True if the series stays below ``epsilon`` for ``hold`` consecutive steps.

    ``hold`` defaults to the lag. Isolated exact zeros, e.g. two reset steps
    one lag apart, do not count.
    """
    hold = series.lag if hold is None else hold
    below = (series.magnitudes() < epsilon).astype(np.int64)
    if len(below) < hold:
        return False
    run = np.convolve(below, np.ones(hold, dtype=np.int64), mode="valid")
    return bool((run == hold).any())


# --------------------------------------------------------------------------
# forcing and reconstruction


class ReconstructionFailed(RuntimeError):
    pass


def forcing_schedule(
    pattern: Sequence[int],
    period: int,
    anchor: int,
    delay: int,
    start: int,
    stop: int,
    amplitude: float = FEEDBACK_WEIGHT,
) -> InputSchedule:
    """Input spikes that replay a periodic firing pattern as forcing.

    ``pattern`` holds spike offsets relative to ``anchor`` within one
    period. Input times are shifted by ``delay`` so the forcing equals the
    drive a delay-``delay`` self-connection would deliver for that pattern.
    """
    offsets = {int(p) % period for p in pattern}
    times = [q for q in range(start, stop) if (q - delay - anchor) % period in offsets]
    return InputSchedule(tuple(times), amplitude)


def forcing_config(
    template: ControlledRunConfig,
    schedule: InputSchedule,
    control_on: int | None = None,
) -> ControlledRunConfig:
    return dataclasses.replace(
        template,
        feedback=(),
        inputs=(schedule,),
        injections=(),
        control_on=template.control_on if control_on is None else control_on,
    )


def aligned_orbit_distance(a: RunRecord, b: RunRecord, period: int) -> float:
    """Max |u_a - u_b| over one period, after aligning the first spikes.

    Both records are compared on their final period; ``b`` is shifted so
    that its first spike in that period lines up with ``a``'s.
    """
    na, nb = len(a.trajectory), len(b.trajectory)
    if min(na, nb) < 2 * period:
        return math.inf
    sa = a.trajectory.spikes[na - period :]
    sb = b.trajectory.spikes[nb - period :]
    if not sa.any() or not sb.any():
        return math.inf
    shift = int(np.argmax(sb)) - int(np.argmax(sa))
    base_b = nb - period + shift
    if shift > 0:
        base_b -= period
    ua = a.trajectory.u[na - period :]
    ub = b.trajectory.u[base_b : base_b + period]
    return float(np.abs(ua - ub).max())


@dataclass(frozen=True)
class ReconstructionResult:
    feedback: RunRecord
    forcing: RunRecord
    feedback_verdict: StabilizationVerdict
    forcing_verdict: StabilizationVerdict
    distance: float
    tolerance: float = DEFAULT_EPSILON

    @property
    def matched(self) -> bool:
        return self.distance < self.tolerance

    @property
    def pattern(self) -> np.ndarray:
        v = self.feedback_verdict
        return extract_spikes(self.feedback.trajectory).pattern(v.spike_stabilization_time, v.period)


def reconstruct(record: RunRecord, verdict: StabilizationVerdict, tolerance: float = DEFAULT_EPSILON) -> ReconstructionResult:
    """Re-run a stabilized feedback run with its spike pattern as forcing.

    The forcing run starts from the same initial state, has no feedback, and
    is driven from control onset by the stabilized pattern repeated over the
    whole run.

    Raises:
        ReconstructionFailed: if the forcing run never stabilizes.
    """
    if not verdict.stabilized:
        raise ValueError("reconstruction needs a stabilized feedback run")
    config = record.config
    (conn,) = config.feedback
    period = verdict.period
    anchor = verdict.spike_stabilization_time
    pattern = extract_spikes(record.trajectory).pattern(anchor, period)
    schedule = forcing_schedule(
        pattern, period, anchor, conn.delay, config.control_on, config.total_steps + 2, conn.weight
    )
    forced = run_controlled(forcing_config(config, schedule))
    forced_verdict = classify_run(forced, conn.delay)
    if not forced_verdict.stabilized:
        raise ReconstructionFailed(f"forcing run did not stabilize ({forced_verdict.kind})")
    distance = aligned_orbit_distance(record, forced, period)
    return ReconstructionResult(record, forced, verdict, forced_verdict, distance, tolerance)


def run_reconstruction(
    tau: int = 100,
    seed: int = 0,
    total_steps: int = 10000,
    max_retries: int = 20,
) -> ReconstructionResult:
    """Find a stabilized feedback run (trying successive seeds) and reconstruct it."""
    config = feedback_run_config(tau, total_steps=total_steps)
    for attempt in range(max_retries):
        record = run_controlled(seeded(config, run_seed(seed, attempt)))
        verdict = classify_run(record, tau)
        if verdict.stabilized:
            return reconstruct(record, verdict)
    raise ReconstructionFailed(f"no stabilized feedback run in {max_retries} attempts")


def run_forcing(
    spike_times: Iterable[int],
    seed: int,
    total_steps: int,
    tau: int = 100,
    amplitude: float = FEEDBACK_WEIGHT,
    start: int = 0,
    params: NdsParams = NdsParams(),
) -> tuple[RunRecord, StabilizationVerdict]:
    """Drive a neuron without feedback by an explicit input spike train."""
    times = tuple(sorted({int(t) for t in spike_times if t >= 0}))
    config = ControlledRunConfig(
        params=params,
        total_steps=total_steps,
        control_on=start,
        inputs=(InputSchedule(times, amplitude),),
    )
    record = run_controlled(seeded(config, seed))
    # judge from the usual onset so the initial transient never counts as periodic
    return record, classify_run(record, tau, start=max(start, CONTROL_ON))


# --------------------------------------------------------------------------
# fixed-value injection


def injection_config(
    value: float = 1.0,
    phase: int = 3,
    period: int = 100,
    total_steps: int = 30000,
    start_time: int = 1000,
    mode: Literal["assign", "add"] = "assign",
) -> ControlledRunConfig:
    # onset-relative phase: start 1000, phase 3 hits t = 1003, 1103, ...
    injection = FixedInjection(value, phase, period, start_time, total_steps + 1, mode)
    return ControlledRunConfig(total_steps=total_steps, control_on=CONTROL_ON, injections=(injection,))


def run_fixed_injection(
    value: float = 1.0,
    phase: int = 3,
    period: int = 100,
    seed: int = 0,
    total_steps: int = 30000,
    start_time: int = 1000,
    mode: Literal["assign", "add"] = "assign",
) -> tuple[RunRecord, StabilizationVerdict]:
    """Replace the self-feedback by a fixed value written into ``u`` once per period."""
    config = seeded(injection_config(value, phase, period, total_steps, start_time, mode), seed)
    record = run_controlled(config)
    return record, classify_run(record, period)


def injection_train_forcing(
    record: RunRecord,
    verdict: StabilizationVerdict,
    seed: int,
    tau: int = 100,
) -> tuple[RunRecord, StabilizationVerdict]:
    """Feed a stabilized injection run's spike pattern to a feedback-free neuron.

    The pattern is replayed for the whole run, starting at t = 0.
    """
    total = record.config.total_steps
    pattern = extract_spikes(record.trajectory).pattern(verdict.spike_stabilization_time, verdict.period)
    schedule = forcing_schedule(pattern, verdict.period, verdict.spike_stabilization_time, tau, 0, total + 2)
    return run_forcing(schedule.spike_times, seed, total, tau, start=0)


# --------------------------------------------------------------------------
# reset mechanism


def run_reset_experiment(
    policy: ResetPolicy,
    seed: int = 0,
    total_steps: int = 10000,
    tau: int = 100,
) -> tuple[RunRecord, StabilizationVerdict]:
    config = seeded(feedback_run_config(tau, total_steps=total_steps, reset=policy), seed)
    record = run_controlled(config)
    return record, classify_run(record, tau)


def reset_ensemble(
    policy: ResetPolicy,
    n: int = 100,
    seed: int = 0,
    total_steps: int = 10000,
    tau: int = 100,
    parallelism: int = 1,
) -> EnsembleStats:
    config = feedback_run_config(tau, total_steps=total_steps, reset=policy)
    return run_ensemble(config, n, seed, tau, parallelism)


Regime = Literal["above-threshold-2D", "near-threshold-alternating", "chaotic-stabilizing"]
NEAR_THRESHOLD_BAND = 0.035
TWO_LEVEL_MIN = 0.9


def expected_regime(eta0: float, theta: float = NdsParams().theta) -> Regime:
    if eta0 > theta:
        return "above-threshold-2D"
    if theta - NEAR_THRESHOLD_BAND <= eta0 <= theta:
        return "near-threshold-alternating"
    return "chaotic-stabilizing"


@dataclass(frozen=True)
class RegimeDiagnostics:
    u_constant: bool
    spike_every_step: bool
    two_level_fraction: float
    radius_non_decreasing: bool

    @property
    def regime(self) -> Regime:
        if self.u_constant and self.spike_every_step:
            return "above-threshold-2D"
        if self.two_level_fraction >= TWO_LEVEL_MIN:
            return "near-threshold-alternating"
        return "chaotic-stabilizing"


def regime_diagnostics(record: RunRecord, transient: int | None = None) -> RegimeDiagnostics:
    """Measure the reset-regime signatures on the post-transient tail.

    * ``u_constant`` / ``spike_every_step``: the neuron resets on every step
      and ``u`` never moves, leaving a two-dimensional (x, y) system.
    * ``two_level_fraction``: share of steps on which ``u`` is either exactly
      the reset value or above threshold, i.e. hops between two levels.
    * ``radius_non_decreasing``: the (x, y) distance from the centre of the
      frozen-``u`` rotation never shrinks (a spiral repellor).
    """
    params = record.config.params
    traj = record.trajectory
    transient = len(traj) // 2 if transient is None else transient
    tail = traj.states[transient:]
    spikes = traj.spikes[transient:]
    if len(tail) < 2:
        return RegimeDiagnostics(False, False, 0.0, False)
    u = tail[:, 2]
    eta0 = record.config.reset_policy.value
    u_constant = bool(np.all(u == u[0]))
    spike_every_step = bool(np.all(spikes == 1))
    two_level = float(np.mean((u == eta0) | (u > params.theta)))
    # centre of x' = x + b(-y - u0), y' = y + c(x + a y) with u frozen at u0
    u0 = float(u[-1])
    cx, cy = params.a * u0, -u0
    radius = np.hypot(tail[:, 0] - cx, tail[:, 1] - cy)
    return RegimeDiagnostics(u_constant, spike_every_step, two_level, bool(np.all(np.diff(radius) >= 0)))


@dataclass(frozen=True)
class ResetScanEntry:
    regime: Regime
    reliability: float
    mean_stab_time: float
    diagnostics: RegimeDiagnostics
    stats: EnsembleStats = field(repr=False)

    @property
    def consistent(self) -> bool:
        return self.diagnostics.regime == self.regime


@dataclass(frozen=True)
class ResetScanReport:
    per_value: dict[float, ResetScanEntry]
    seed: int


def _scan_job(job: tuple[ControlledRunConfig, int, bool]):
    config, tau, diagnose = job
    record = run_controlled(config)
    verdict = classify_run(record, tau)
    return verdict, (regime_diagnostics(record) if diagnose else None)


def run_reset_scan(
    values: Sequence[float],
    ics_per_value: int = 100,
    seed: int = 0,
    total_steps: int = 10000,
    tau: int = 100,
    parallelism: int = 1,
) -> ResetScanReport:
    """Reliability and regime of the fixed reset for each reset value.

    The same seeded initial conditions are used for every value. Regime
    diagnostics come from the first run of each value.
    """
    for eta0 in values:
        if not -2.0 <= eta0 <= 0.1:
            raise ValueError(f"reset value {eta0} outside [-2, 0.1]")
    jobs = []
    for eta0 in values:
        template = feedback_run_config(tau, total_steps=total_steps, params=NdsParams(eta0=float(eta0)))
        for i in range(ics_per_value):
            jobs.append((seeded(template, run_seed(seed, i)), tau, i == 0))
    results = _pmap(_scan_job, jobs, parallelism)

    per_value = {}
    n = ics_per_value
    for j, eta0 in enumerate(values):
        chunk = results[j * n : (j + 1) * n]
        stats = EnsembleStats(tuple(v for v, _ in chunk), total_steps)
        per_value[float(eta0)] = ResetScanEntry(
            regime=expected_regime(eta0),
            reliability=stats.reliability,
            mean_stab_time=stats.mean_spike_time,
            diagnostics=chunk[0][1],
            stats=stats,
        )
    return ResetScanReport(per_value, seed)
