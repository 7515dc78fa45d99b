"""Experiment configuration files and CSV serialization."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .control import ControlledRunConfig, FeedbackConnection, ResetPolicy, RunRecord
from .core import NdsParams, Trajectory
from .experiments import DESK_TAUS, ReliabilityReport, ResetScanReport

RUN_HEADER = ("t", "x", "y", "u", "gamma", "D")
REPORT_HEADER = ("tau", "stabilized", "diverged", "unresolved", "reliability")
SCAN_HEADER = ("eta0", "regime", "reliability", "mean_stab_time")


class ConfigError(ValueError):
    """Bad configuration text or value; ``key`` / ``line`` locate the problem."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Settings:
    """Flat experiment settings: model constants, run layout and sweep sizes."""

    a: float = 0.002
    v: float = 0.002
    b: float = 0.03
    c: float = 0.03
    d: float = 0.8
    k: float = -0.057
    theta: float = -0.01
    eta0: float = -1.0
    divergence_bound: float = 1e6
    total_steps: int = 10000
    control_on: int = 1001
    control_off: int | None = None
    tau: int = 100
    weight: float = 0.3
    reset: str = "fixed"
    reset_value: float | None = None
    seed: int = 0
    ics: int = 200
    tau_values: tuple[int, ...] = DESK_TAUS
    eta0_values: tuple[float, ...] = (0.1, -0.02, -0.05, -0.5, -1.0, -1.2, -1.4, -2.0)
    parallelism: int = 1
    injection_value: float = 1.0
    injection_phase: int = 3
    injection_period: int = 100
    injection_start: int = 1000
    injection_mode: str = "assign"

    @property
    def params(self) -> NdsParams:
        names = {f.name for f in fields(NdsParams)}
        return NdsParams(**{n: getattr(self, n) for n in names})

    @property
    def reset_policy(self) -> ResetPolicy:
        if self.reset == "relative":
            return ResetPolicy("relative", -1.0 if self.reset_value is None else self.reset_value)
        return ResetPolicy("fixed", self.eta0 if self.reset_value is None else self.reset_value)

    def run_config(self, feedback: bool = True) -> ControlledRunConfig:
        return ControlledRunConfig(
            params=self.params,
            total_steps=self.total_steps,
            control_on=self.control_on,
            control_off=self.control_off,
            feedback=(FeedbackConnection(self.tau, self.weight),) if feedback else (),
            reset=self.reset_policy,
            rng_seed=self.seed,
        )


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_int(p) for p in text.split(",") if p.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(_float(p) for p in text.split(",") if p.strip())


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else _int(text)


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else _float(text)


_PARSERS = {
    "total_steps": _int,
    "control_on": _int,
    "control_off": _optional_int,
    "tau": _int,
    "seed": _int,
    "ics": _int,
    "parallelism": _int,
    "injection_phase": _int,
    "injection_period": _int,
    "injection_start": _int,
    "tau_values": _int_list,
    "eta0_values": _float_list,
    "reset_value": _optional_float,
    "reset": str.strip,
    "injection_mode": str.strip,
}
KEYS = tuple(f.name for f in fields(Settings))


def _convert(key: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    return _PARSERS.get(key, _float)(raw)


def _check(s: Settings) -> None:
    positive = {
        "tau": s.tau,
        "total_steps": s.total_steps,
        "ics": s.ics,
        "parallelism": s.parallelism,
        "injection_period": s.injection_period,
    }
    for key, value in positive.items():
        if value < 1:
            raise ConfigError(f"must be >= 1, got {value}", key=key)
    if s.divergence_bound <= 0:
        raise ConfigError("must be positive", key="divergence_bound")
    if s.control_on < 0:
        raise ConfigError("must be >= 0", key="control_on")
    if s.control_on > s.total_steps:
        raise ConfigError("must not exceed total_steps", key="control_on")
    if s.control_off is not None and not s.control_on <= s.control_off <= s.total_steps:
        raise ConfigError("must lie in [control_on, total_steps]", key="control_off")
    if s.reset not in ("fixed", "relative"):
        raise ConfigError("must be 'fixed' or 'relative'", key="reset")
    if s.injection_mode not in ("assign", "add"):
        raise ConfigError("must be 'assign' or 'add'", key="injection_mode")
    if not 0 <= s.injection_phase < s.injection_period:
        raise ConfigError("must lie in [0, injection_period)", key="injection_phase")
    if s.injection_start < 0:
        raise ConfigError("must be >= 0", key="injection_start")
    if not s.tau_values or min(s.tau_values) < 1:
        raise ConfigError("needs positive entries", key="tau_values")
    if not s.eta0_values:
        raise ConfigError("must not be empty", key="eta0_values")
    if s.seed < 0:
        raise ConfigError("must be >= 0", key="seed")


def parse_config(text: str = "", overrides: Mapping[str, Any] | None = None) -> Settings:
    """Parse ``key = value`` lines over the defaults, then apply ``overrides``.

    Blank lines and ``#`` comments are ignored. Values in ``overrides`` may be
    strings (parsed like file values) or already-typed; ``None`` entries are
    skipped so unset command-line flags fall through.
    """
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError("expected 'key = value'", line=lineno)
        if key not in KEYS:
            raise ConfigError("unknown key", key=key, line=lineno)
        try:
            values[key] = _convert(key, value.strip())
        except ValueError as err:
            raise ConfigError(str(err), key=key, line=lineno) from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in KEYS:
            raise ConfigError("unknown key", key=key)
        try:
            values[key] = _convert(key, value)
        except ValueError as err:
            raise ConfigError(str(err), key=key) from None
    steps = values.get("total_steps", Settings.total_steps)
    if "control_on" not in values and steps < Settings.control_on:
        # short runs with the default onset simply never switch control on
        values["control_on"] = steps
    settings = Settings(**values)
    _check(settings)
    return settings


# --------------------------------------------------------------------------
# CSV


def format_number(value: float) -> str:
    """Shortest decimal string that reads back to exactly ``value``."""
    value = float(value)
    if value.is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(value)


def write_rows(path: str | Path, header: tuple[str, ...], rows) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror or err}") from err
    return path


def run_rows(trajectory: Trajectory, drives: np.ndarray):
    t0 = trajectory.start_time
    for i, ((x, y, u), g, dr) in enumerate(zip(trajectory.states, trajectory.spikes, drives)):
        yield (str(t0 + i), format_number(x), format_number(y), format_number(u), str(int(g)), format_number(dr))


def emit_run_csv(record: RunRecord, path: str | Path) -> Path:
    return write_rows(path, RUN_HEADER, run_rows(record.trajectory, record.drives))


def emit_trajectory_csv(trajectory: Trajectory, path: str | Path, drives: np.ndarray | None = None) -> Path:
    drives = np.zeros(len(trajectory)) if drives is None else drives
    return write_rows(path, RUN_HEADER, run_rows(trajectory, drives))


def read_run_csv(path: str | Path) -> tuple[Trajectory, np.ndarray]:
    """Read a run CSV back into a trajectory and its drive series."""
    with Path(path).open(newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != RUN_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(reader)
    if not rows:
        return Trajectory(np.empty((0, 3)), np.empty(0, dtype=np.int8)), np.empty(0)
    t0 = int(rows[0][0])
    states = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows])
    spikes = np.array([int(r[4]) for r in rows], dtype=np.int8)
    drives = np.array([float(r[5]) for r in rows])
    return Trajectory(states, spikes, t0), drives


def emit_rossler_csv(states: np.ndarray, dt: float, path: str | Path) -> Path:
    rows = ((str(i), format_number(i * dt), *(format_number(s) for s in row)) for i, row in enumerate(states))
    return write_rows(path, ("step", "time", "x", "y", "z"), rows)


def _fmt_optional(value: float) -> str:
    return "" if value is None or math.isnan(value) else format_number(value)


def emit_report(report: ReliabilityReport | ResetScanReport, path: str | Path) -> Path:
    """Tabulate a sweep (one row per tau plus ``all``) or a reset scan."""
    if isinstance(report, ResetScanReport):
        rows = [
            (format_number(eta0), e.regime, format_number(e.reliability), _fmt_optional(e.mean_stab_time))
            for eta0, e in report.per_value.items()
        ]
        return write_rows(path, SCAN_HEADER, rows)
    rows = []
    totals = [0, 0, 0]
    for tau, c in report.per_tau.items():
        rows.append((str(tau), str(c.stabilized), str(c.diverged), str(c.unresolved), format_number(c.reliability)))
        totals = [totals[0] + c.stabilized, totals[1] + c.diverged, totals[2] + c.unresolved]
    rows.append(("all", *(str(n) for n in totals), format_number(report.overall_reliability)))
    return write_rows(path, REPORT_HEADER, rows)


def settings_dict(settings: Settings) -> dict[str, Any]:
    return dataclasses.asdict(settings)
