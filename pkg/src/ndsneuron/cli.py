"""Command-line entry point: ``ndsneuron <subcommand> [flags]``.

Exit status is 0 on success, 1 on runtime failure (I/O, or a diverged
single run under ``--strict``) and 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import experiments as ex
from .analysis import classify_run
from .control import FixedInjection, RunRecord, run_controlled
from .core import rossler_integrate
from .io import (
    ConfigError,
    Settings,
    emit_report,
    emit_rossler_csv,
    emit_run_csv,
    format_number,
    parse_config,
    write_rows,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

SUBCOMMANDS = {
    "free-run": "iterate the neuron without control",
    "stabilize": "run with delayed self-feedback and classify",
    "diff-analysis": "lag-tau difference series of a feedback run",
    "reconstruct": "replay a stabilized spike pattern as forcing",
    "sweep": "stabilization reliability over tau values and seeds",
    "inject": "fixed-value injection instead of feedback",
    "reset-run": "feedback run under a fixed or relative reset",
    "reset-scan": "reliability and regime across reset values",
    "rossler-ref": "RK4 trajectory of the continuous Rossler system",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="key = value settings file")
    p.add_argument("--seed", help="master seed")
    p.add_argument("--tau", help="feedback delay")
    p.add_argument("--weight", help="feedback weight")
    p.add_argument("--eta0", help="reset value")
    p.add_argument("--reset", choices=("fixed", "relative"))
    p.add_argument("--steps", help="number of time steps")
    p.add_argument("--out", type=Path, help="output CSV path")
    p.add_argument("--ics", help="initial conditions per tau / reset value")
    p.add_argument("--tau-list", help="comma-separated tau values")
    p.add_argument("--eta0-list", help="comma-separated reset values")
    p.add_argument("--parallel", help="worker processes for ensembles")
    p.add_argument("--strict", action="store_true", help="exit 1 if a single run diverges")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ndsneuron", description="NDS neuron chaos-control experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parent = _flags()
    for name, help_text in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[parent], help=help_text, description=help_text)
    return parser


def load_settings(args: argparse.Namespace) -> Settings:
    text = ""
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config file {args.config}: {err.strerror}") from None
    overrides = {
        "seed": args.seed,
        "tau": args.tau,
        "weight": args.weight,
        "eta0": args.eta0,
        "reset": args.reset,
        "total_steps": args.steps,
        "ics": args.ics,
        "tau_values": args.tau_list,
        "eta0_values": args.eta0_list,
        "parallelism": args.parallel,
    }
    return parse_config(text, overrides)


def _out(args, default: str) -> Path:
    return args.out if args.out is not None else Path(default)


def _verdict_line(verdict) -> str:
    return (
        f"verdict={verdict.kind} period={verdict.period} "
        f"spike_time={verdict.spike_stabilization_time} full_time={verdict.full_stabilization_time}"
    )


def _single(args, s: Settings, record: RunRecord, default: str, tau: int | None = None) -> int:
    path = emit_run_csv(record, _out(args, default))
    line = f"wrote {path} ({len(record.trajectory)} rows)"
    if tau is not None:
        line += " " + _verdict_line(classify_run(record, tau))
    if record.diverged:
        line += f" diverged_at={record.diverged_at}"
    print(line)
    if record.diverged and args.strict:
        print(f"error: run diverged at step {record.diverged_at}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_free_run(args, s: Settings) -> int:
    config = ex.seeded(s.run_config(feedback=False), s.seed)
    return _single(args, s, run_controlled(config), "free_run.csv")


def _feedback_run(args, s: Settings, default: str) -> int:
    config = ex.seeded(s.run_config(), s.seed)
    return _single(args, s, run_controlled(config), default, s.tau)


def cmd_stabilize(args, s: Settings) -> int:
    return _feedback_run(args, s, "stabilize.csv")


def cmd_reset_run(args, s: Settings) -> int:
    return _feedback_run(args, s, "reset_run.csv")


def cmd_inject(args, s: Settings) -> int:
    end = s.total_steps + 1
    injection = FixedInjection(
        s.injection_value, s.injection_phase, s.injection_period, s.injection_start, end, s.injection_mode
    )
    config = dataclasses.replace(s.run_config(feedback=False), injections=(injection,))
    record = run_controlled(ex.seeded(config, s.seed))
    return _single(args, s, record, "inject.csv", s.injection_period)


def cmd_diff_analysis(args, s: Settings) -> int:
    config = ex.seeded(s.run_config(), s.seed)
    record = run_controlled(config)
    tau = s.tau
    if len(record.trajectory) <= tau:
        print("error: run too short for the requested lag", file=sys.stderr)
        return EXIT_RUNTIME
    diff = record.trajectory.states[tau:] - record.trajectory.states[:-tau]
    euclid = np.sqrt((diff**2).sum(axis=1))
    rows = (
        (str(tau + i), *(format_number(abs(v)) for v in d), format_number(d[0]), format_number(d[1]), format_number(e))
        for i, (d, e) in enumerate(zip(diff, euclid))
    )
    path = write_rows(_out(args, "diff_analysis.csv"), ("t", "dx", "dy", "du", "dx_signed", "dy_signed", "dxyz"), rows)
    print(f"wrote {path} {_verdict_line(classify_run(record, tau))}")
    if record.diverged and args.strict:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_reconstruct(args, s: Settings) -> int:
    base = s.run_config()
    for attempt in range(20):
        record = run_controlled(ex.seeded(base, ex.run_seed(s.seed, attempt)))
        verdict = classify_run(record, s.tau)
        if verdict.stabilized:
            break
    else:
        print("error: no stabilized feedback run found", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        result = ex.reconstruct(record, verdict)
    except ex.ReconstructionFailed as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    out = _out(args, "reconstruct.csv")
    fb = emit_run_csv(result.feedback, out.with_name(out.stem + "_feedback" + out.suffix))
    fo = emit_run_csv(result.forcing, out.with_name(out.stem + "_forcing" + out.suffix))
    print(f"wrote {fb} and {fo} distance={format_number(result.distance)} matched={result.matched}")
    return EXIT_OK


def cmd_sweep(args, s: Settings) -> int:
    config = ex.SweepConfig(
        tau_values=s.tau_values,
        ics_per_tau=s.ics,
        base=s.run_config(),
        seed=s.seed,
        parallelism=s.parallelism,
    )
    report = ex.run_reliability_sweep(config)
    path = emit_report(report, _out(args, "sweep.csv"))
    print(f"wrote {path} overall_reliability={format_number(report.overall_reliability)}")
    return EXIT_OK


def cmd_reset_scan(args, s: Settings) -> int:
    report = ex.run_reset_scan(s.eta0_values, s.ics, s.seed, s.total_steps, s.tau, s.parallelism)
    path = emit_report(report, _out(args, "reset_scan.csv"))
    print(f"wrote {path} ({len(report.per_value)} reset values)")
    return EXIT_OK


def cmd_rossler_ref(args, s: Settings) -> int:
    dt = 0.01
    states = rossler_integrate((1.0, 1.0, 1.0), dt=dt, steps=s.total_steps)
    path = emit_rossler_csv(states, dt, _out(args, "rossler.csv"))
    print(f"wrote {path} ({len(states)} rows)")
    return EXIT_OK


HANDLERS = {
    "free-run": cmd_free_run,
    "stabilize": cmd_stabilize,
    "diff-analysis": cmd_diff_analysis,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "inject": cmd_inject,
    "reset-run": cmd_reset_run,
    "reset-scan": cmd_reset_scan,
    "rossler-ref": cmd_rossler_ref,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = load_settings(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return HANDLERS[args.command](args, settings)
    except ValueError as err:
        # domain errors raised while building configs from valid syntax
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ArithmeticError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
