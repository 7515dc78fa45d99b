"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

All ensembles use master seed 0, fixed before any result was seen.
Run with ``pytest tests/test_acceptance.py -v -s`` to see only these lines.
"""
from fractions import Fraction

import numpy as np
import pytest

from ndsneuron import experiments as ex
from ndsneuron.analysis import classify_run, difference_pattern
from ndsneuron.cli import main
from ndsneuron.control import ResetPolicy, run_controlled
from ndsneuron.core import DivergenceError, NdsParams, NdsState, nds_step, random_initial_state, run_free

MASTER = 0


@pytest.fixture
def verdict(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} ({title}) not met: {detail}"

    return emit


@pytest.fixture(scope="module")
def fixed_ensemble():
    return ex.reset_ensemble(ResetPolicy("fixed", -1.0), n=100, seed=MASTER)


@pytest.fixture(scope="module")
def injection_runs():
    return [ex.run_fixed_injection(seed=ex.run_seed(MASTER, i)) for i in range(50)]


# 1 -----------------------------------------------------------------------


def _rational_step(x, y, u):
    a, v, b, c, d, k = (Fraction(s) for s in ("0.002", "0.002", "0.03", "0.03", "0.8", "-0.057"))
    if u > Fraction("-0.01"):
        return x + b * (-y - u), y + c * (x + a * y), Fraction(-1)
    return x + b * (-y - u), y + c * (x + a * y), u + d * (v - u * x + k * u)


def test_01_single_step_oracle(verdict):
    exact = [(Fraction(0),) * 3]
    for _ in range(3):
        exact.append(_rational_step(*exact[-1]))
    frozen = [(0, 0, -1), (Fraction("0.03"), 0, Fraction("-0.9528")),
              (Fraction("0.058584"), Fraction("0.0009"), Fraction("-0.88488512"))]
    oracle_ok = exact[1:] == [tuple(Fraction(c) for c in row) for row in frozen]
    state, got = NdsState(0.0, 0.0, 0.0), []
    for _ in range(3):
        state, _ = nds_step(state, NdsParams())
        got.append(state.as_tuple())
    want = [tuple(float(c) for c in row) for row in exact[1:]]
    ok = oracle_ok and got == want
    verdict(1, "single-step oracle", ok, f"third state {got[-1]} vs exact {want[-1]}")


# 2 -----------------------------------------------------------------------


def test_02_boundedness(verdict):
    diverged, silent = 0, 0
    for i in range(100):
        try:
            tr = run_free(NdsParams(), random_initial_state(ex.run_seed(MASTER, i)), 100_000)
        except DivergenceError:
            diverged += 1
            continue
        silent += not tr.spikes.any()
    ok = diverged == 0 and silent == 0
    verdict(2, "boundedness", ok, f"{diverged}/100 diverged, {silent}/100 without spikes")


# 3 -----------------------------------------------------------------------


def test_03_stabilization_reliability(verdict):
    report = ex.run_reliability_sweep(ex.SweepConfig(seed=MASTER))
    rows = " ".join(f"tau{t}={c.stabilized}/{c.total}" for t, c in report.per_tau.items())
    ok = report.overall_reliability >= 0.99
    verdict(3, "stabilization reliability", ok, f"overall={report.overall_reliability:.4f} (need >= 0.99); {rows}")


# 4 -----------------------------------------------------------------------


def test_04_reconstruction(verdict):
    config = ex.feedback_run_config(100, total_steps=10000)
    matched, used, i = 0, 0, 0
    while used < 20:
        record = run_controlled(ex.seeded(config, ex.run_seed(MASTER, i)))
        v = classify_run(record, 100)
        i += 1
        if not v.stabilized:
            continue
        used += 1
        try:
            result = ex.reconstruct(record, v)
        except ex.ReconstructionFailed:
            continue
        matched += result.matched
    ok = matched >= 18
    verdict(4, "reconstruction by forcing", ok, f"{matched}/20 orbits reproduced within 1e-6 (need >= 18)")


# 5 -----------------------------------------------------------------------


def test_05_synchronization_decay(verdict, fixed_ensemble):
    d = ex.run_difference_analysis(100, seed=ex.run_seed(MASTER, 0))
    t = d.verdict.full_stabilization_time
    settled = t is not None and all(
        (difference_pattern(d.record.trajectory, name, 100).values[t - 100 :] < 1e-6).all()
        for name in ("x", "y", "u", "xyz-euclidean")
    )
    runs = fixed_ensemble.verdicts[:50]
    precede = sum(
        v.stabilized and v.full_stabilization_time is not None
        and v.spike_stabilization_time < v.full_stabilization_time
        for v in runs
    )
    ok = settled and precede >= 40
    verdict(5, "synchronization decay", ok,
            f"series settle below 1e-6: {settled}; spike before full in {precede}/50 (need >= 40)")


# 6 -----------------------------------------------------------------------


def test_06_fixed_injection(verdict, fixed_ensemble, injection_runs):
    stab = [v for _, v in injection_runs if v.stabilized]
    multiples = sorted({v.period // 100 for v in stab if v.period >= 200})
    inj_median = float(np.median([v.spike_stabilization_time for v in stab])) if stab else float("nan")
    fb_median = float(np.median(fixed_ensemble.spike_times()[:50]))
    ok = bool(multiples) and inj_median >= 2 * fb_median
    verdict(6, "fixed injection", ok,
            f"{len(stab)}/50 stabilized, multiples m>=2 seen {multiples}; "
            f"median spike time {inj_median:.0f} vs feedback {fb_median:.0f} (need >= 2x)")


# 7 -----------------------------------------------------------------------


def test_07_negative_control(verdict, injection_runs):
    cases = [(i, r, v) for i, (r, v) in enumerate(injection_runs) if v.stabilized and v.period >= 200]
    outcomes = []
    for i, record, v in cases:
        _, forced = ex.injection_train_forcing(record, v, ex.run_seed(MASTER, i))
        outcomes.append(forced.kind)
    ok = bool(cases) and all(k != "stabilized" for k in outcomes)
    verdict(7, "negative control", ok, f"{len(cases)} multi-period trains replayed -> {outcomes}")


# 8 -----------------------------------------------------------------------


def test_08_relative_reset(verdict, fixed_ensemble):
    rel = ex.reset_ensemble(ResetPolicy("relative", -1.0), n=100, seed=MASTER)
    spike_ok = rel.mean_spike_time < fixed_ensemble.mean_spike_time
    full_ok = rel.mean_full_time > fixed_ensemble.mean_full_time
    verdict(8, "relative reset", spike_ok and full_ok,
            f"spike mean rel {rel.mean_spike_time:.1f} < fixed {fixed_ensemble.mean_spike_time:.1f}: {spike_ok}; "
            f"full mean rel {rel.mean_full_time:.1f} > fixed {fixed_ensemble.mean_full_time:.1f}: {full_ok}")


# 9 -----------------------------------------------------------------------


def test_09_reset_regimes(verdict):
    seed = ex.run_seed(MASTER, 0)
    above = run_controlled(ex.seeded(ex.feedback_run_config(100, params=NdsParams(eta0=0.1)), seed))
    near = run_controlled(ex.seeded(ex.feedback_run_config(100, params=NdsParams(eta0=-0.02)), seed))
    da, dn = ex.regime_diagnostics(above), ex.regime_diagnostics(near)
    above_ok = da.u_constant and da.spike_every_step and da.radius_non_decreasing
    near_ok = dn.two_level_fraction >= ex.TWO_LEVEL_MIN and not dn.spike_every_step
    verdict(9, "reset regimes", above_ok and near_ok,
            f"eta0=0.1 {da}; eta0=-0.02 two-level share {dn.two_level_fraction:.3f} (need >= {ex.TWO_LEVEL_MIN})")


# 10 ----------------------------------------------------------------------


def test_10_reset_reliability_range(verdict):
    values = [-0.05, -0.5, -1.0, -1.2, -2.0]
    scan = ex.run_reset_scan(values, ics_per_value=100, seed=MASTER)
    rel = {e: scan.per_value[e].reliability for e in values}
    ok = all(rel[e] >= 0.90 for e in values[:-1]) and rel[-2.0] <= 0.30
    verdict(10, "reset reliability range", ok, ", ".join(f"{e}: {r:.2f}" for e, r in rel.items()))


# 11 ----------------------------------------------------------------------

DETERMINISM_RUNS = [
    ["free-run", "--steps", "20000"],
    ["stabilize"],
    ["diff-analysis"],
    ["reconstruct"],
    ["inject", "--steps", "30000"],
    ["reset-run", "--reset", "relative"],
    ["reset-scan", "--eta0-list", "0.1,-0.02,-1,-2", "--ics", "5"],
    ["rossler-ref", "--steps", "20000"],
    ["sweep", "--tau-list", "50,100,250", "--ics", "6"],
]


def _outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_11_determinism(verdict, tmp_path, capsys):
    mismatched = []
    for argv in DETERMINISM_RUNS:
        name = argv[0]
        runs = []
        extra = [["--parallel", "1"], ["--parallel", "1"]]
        if name == "sweep":
            extra.append(["--parallel", "2"])
        for j, flags in enumerate(extra):
            d = tmp_path / f"{name}-{j}"
            d.mkdir()
            code = main(argv + flags + ["--seed", str(MASTER), "--out", str(d / f"{name}.csv")])
            runs.append((code, _outputs(d)))
        if any(code != 0 for code, _ in runs) or any(o != runs[0][1] for _, o in runs[1:]):
            mismatched.append(name)
    capsys.readouterr()
    ok = not mismatched
    verdict(11, "determinism", ok, f"{len(DETERMINISM_RUNS)} subcommands rerun; mismatches: {mismatched or 'none'}")
