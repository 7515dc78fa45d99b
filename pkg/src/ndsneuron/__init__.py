"""Chaos control of a discrete Rössler-type spiking neuron (NDS) by delayed self-feedback."""
from .analysis import (
    DifferenceSeries,
    SpikeTrain,
    StabilizationVerdict,
    classify_run,
    difference_pattern,
    extract_spikes,
    full_stabilization,
    spike_periodicity,
)
from .control import (
    ControlledRunConfig,
    FeedbackConnection,
    FixedInjection,
    InputSchedule,
    ResetPolicy,
    RunRecord,
    apply_reset,
    feedback_drive,
    input_drive,
    run_controlled,
)
from .core import (
    DivergenceError,
    NdsParams,
    NdsState,
    RosslerParams,
    Trajectory,
    nds_step,
    random_initial_state,
    rossler_integrate,
    run_free,
)

__version__ = "0.1.0"

__all__ = [
    "DifferenceSeries",
    "SpikeTrain",
    "StabilizationVerdict",
    "classify_run",
    "difference_pattern",
    "extract_spikes",
    "full_stabilization",
    "spike_periodicity",
    "ControlledRunConfig",
    "FeedbackConnection",
    "FixedInjection",
    "InputSchedule",
    "ResetPolicy",
    "RunRecord",
    "apply_reset",
    "feedback_drive",
    "input_drive",
    "run_controlled",
    "DivergenceError",
    "NdsParams",
    "NdsState",
    "RosslerParams",
    "Trajectory",
    "nds_step",
    "random_initial_state",
    "rossler_integrate",
    "run_free",
]
