import dataclasses
import math

import numpy as np
import pytest

from ndsneuron import experiments as ex
from ndsneuron.analysis import DifferenceSeries, StabilizationVerdict
from ndsneuron.control import ResetPolicy, run_controlled


def test_run_seed_is_stable_and_keyed():
    assert ex.run_seed(0, 100, 3) == ex.run_seed(0, 100, 3)
    assert len({ex.run_seed(0, 100, i) for i in range(50)}) == 50
    assert ex.run_seed(0, 100, 3) != ex.run_seed(1, 100, 3)
    assert 0 <= ex.run_seed(7, 1) < 2**64


def test_sweep_config_validated():
    with pytest.raises(ValueError):
        ex.SweepConfig(tau_values=())
    with pytest.raises(ValueError):
        ex.SweepConfig(ics_per_tau=0)
    with pytest.raises(ValueError):
        ex.SweepConfig(tau_values=(0,))


def test_sweep_horizon_covers_late_windows():
    assert ex.sweep_horizon(50) == 5000
    assert ex.sweep_horizon(1000) >= 1001 + 10 * 1000


SMALL = ex.SweepConfig(tau_values=(50, 100), ics_per_tau=4, seed=3)


def test_sweep_counts_and_overall():
    r = ex.run_reliability_sweep(SMALL)
    assert set(r.per_tau) == {50, 100}
    for c in r.per_tau.values():
        assert c.total == 4
    stab = sum(c.stabilized for c in r.per_tau.values())
    assert r.overall_reliability == stab / 8
    assert r.seed == 3


def test_sweep_independent_of_parallelism():
    serial = ex.run_reliability_sweep(SMALL)
    parallel = ex.run_reliability_sweep(dataclasses.replace(SMALL, parallelism=2))
    assert serial == parallel


def test_adding_tau_leaves_other_rows_unchanged():
    a = ex.run_reliability_sweep(ex.SweepConfig(tau_values=(100,), ics_per_tau=3, seed=5))
    b = ex.run_reliability_sweep(ex.SweepConfig(tau_values=(50, 100), ics_per_tau=3, seed=5))
    assert a.per_tau[100] == b.per_tau[100]


def test_sweep_with_forcing_reports_both():
    r = ex.run_reliability_sweep(ex.SweepConfig(tau_values=(100,), ics_per_tau=3, with_forcing=True))
    assert r.forcing_reliability is not None
    assert r.per_tau[100].reconstructed <= r.per_tau[100].stabilized


def test_difference_analysis_series_settle():
    d = ex.run_difference_analysis(100, seed=0)
    assert d.verdict.stabilized and d.verdict.full_stabilization_time is not None
    t = d.verdict.full_stabilization_time
    for name in ("x", "y", "u", "xyz-euclidean"):
        s = d.series[name]
        assert (s.magnitudes()[t - s.lag :] < 1e-6).all()


def test_difference_analysis_without_control_never_settles():
    d = ex.run_difference_analysis(100, seed=0, total_steps=5000, control=False)
    for s in d.series.values():
        assert not ex.settles_below(s)


def test_difference_analysis_rejects_short_runs():
    with pytest.raises(ValueError):
        ex.run_difference_analysis(100, total_steps=1100)


def _decay_curvatures(seed):
    d = ex.run_difference_analysis(100, seed)
    v = d.verdict
    a, b = v.spike_stabilization_time, v.full_stabilization_time
    return d, a, b


@pytest.mark.parametrize("seed", range(5))
def test_y_difference_decays_more_smoothly_than_u(seed):
    d, a, b = _decay_curvatures(seed)
    y = ex.log_curvature(d.series["y"], a, b)
    x = ex.log_curvature(d.series["x"], a, b)
    u = ex.log_curvature(d.series["u"], a, b)
    assert y < x < u


@pytest.mark.xfail(strict=True, reason="per-period log-envelope of y is rougher than u's (see decisions ledger)")
def test_y_log_envelope_smoother_than_u():
    wins = 0
    for seed in range(10):
        d, a, b = _decay_curvatures(seed)
        y = ex.log_envelope_roughness(d.series["y"], 100, a, b)
        u = ex.log_envelope_roughness(d.series["u"], 100, a, b)
        wins += y < u
    assert wins >= 8


def test_settles_below_ignores_isolated_zeros():
    values = np.ones(500)
    values[::37] = 0.0
    assert not ex.settles_below(DifferenceSeries("u", 50, values))
    values[200:260] = 0.0
    assert ex.settles_below(DifferenceSeries("u", 50, values))


def test_forcing_schedule_replays_pattern():
    # spikes at 1003 + 100k and 1038 + 100k, delivered one delay later
    s = ex.forcing_schedule([0, 35], period=100, anchor=1003, delay=100, start=1000, stop=1400)
    assert s.spike_times == (1003, 1038, 1103, 1138, 1203, 1238, 1303, 1338)
    late = ex.forcing_schedule([0, 35], period=100, anchor=1003, delay=30, start=1000, stop=1200)
    assert late.spike_times == (1033, 1068, 1133, 1168)
    assert s.amplitude == 0.3


def test_reconstruction_matches_orbit():
    r = ex.run_reconstruction(100, seed=0)
    assert r.feedback_verdict.stabilized and r.forcing_verdict.stabilized
    assert r.matched and r.distance < 1e-6
    assert not r.forcing.config.feedback
    assert r.forcing.config.inputs
    assert len(r.pattern) > 0


def test_reconstruct_requires_stabilized_run():
    rec = run_controlled(ex.feedback_run_config(100, total_steps=3000))
    with pytest.raises(ValueError):
        ex.reconstruct(rec, StabilizationVerdict("unresolved"))


def test_aligned_distance_zero_for_identical_records():
    rec = run_controlled(ex.seeded(ex.feedback_run_config(100), 1))
    assert ex.aligned_orbit_distance(rec, rec, 100) == 0.0


def test_aligned_distance_infinite_for_too_short_record():
    rec = run_controlled(ex.seeded(ex.feedback_run_config(100), 1))
    short = run_controlled(ex.seeded(ex.feedback_run_config(100, total_steps=1200), 1))
    assert ex.aligned_orbit_distance(rec, short, 1000) == math.inf


def test_fixed_injection_stabilizes_at_multiple_of_period():
    record, verdict = ex.run_fixed_injection(seed=ex.run_seed(0, 16))
    assert verdict.stabilized
    assert verdict.period % 100 == 0 and verdict.period >= 200
    assert not record.config.feedback


def test_injection_train_does_not_stabilize_free_neuron():
    seed = ex.run_seed(0, 16)
    record, verdict = ex.run_fixed_injection(seed=seed)
    _, forced = ex.injection_train_forcing(record, verdict, seed)
    assert not forced.stabilized


def test_reset_experiment_uses_policy():
    rec, v = ex.run_reset_experiment(ResetPolicy("relative", -1.0), seed=2)
    assert rec.config.reset == ResetPolicy("relative", -1.0)
    assert v.kind in ("stabilized", "diverged", "unresolved")


def test_ensemble_stats():
    stats = ex.reset_ensemble(ResetPolicy("fixed", -1.0), n=5, seed=1)
    assert stats.n == 5
    assert sum(stats.count(k) for k in ("stabilized", "diverged", "unresolved")) == 5
    assert len(stats.full_times()) == stats.count("stabilized")
    assert stats.full_times(censor=False).size <= stats.full_times().size


def test_ensemble_censors_unsettled_runs():
    vs = (StabilizationVerdict("stabilized", 1200, None, 100), StabilizationVerdict("stabilized", 1300, 3000, 100))
    stats = ex.EnsembleStats(vs, 10000)
    assert stats.full_times().tolist() == [10000, 3000]
    assert stats.full_times(censor=False).tolist() == [3000]
    assert stats.mean_spike_time == 1250


@pytest.mark.parametrize(
    "eta0, regime",
    [
        (0.1, "above-threshold-2D"),
        (-0.01, "near-threshold-alternating"),
        (-0.02, "near-threshold-alternating"),
        (-0.045, "near-threshold-alternating"),
        (-0.05, "chaotic-stabilizing"),
        (-2.0, "chaotic-stabilizing"),
    ],
)
def test_expected_regime_bands(eta0, regime):
    assert ex.expected_regime(eta0) == regime


@pytest.mark.parametrize("eta0", [0.1, -0.02, -0.5])
def test_regime_diagnostics_agree_with_band(eta0):
    scan = ex.run_reset_scan([eta0], ics_per_value=2, seed=0)
    entry = scan.per_value[eta0]
    assert entry.consistent


def test_regime_labels_exclusive_and_exhaustive():
    grid = np.round(np.arange(-2.0, 0.1001, 0.005), 6)
    labels = {ex.expected_regime(float(e)) for e in grid}
    assert labels == {"above-threshold-2D", "near-threshold-alternating", "chaotic-stabilizing"}
    for e in grid:
        assert [ex.expected_regime(float(e)) == r for r in labels].count(True) == 1


def test_reset_scan_rejects_out_of_range():
    with pytest.raises(ValueError):
        ex.run_reset_scan([0.5], ics_per_value=1)


def test_reset_scan_same_ics_across_values():
    scan = ex.run_reset_scan([-0.5, -1.0], ics_per_value=3, seed=4)
    assert all(e.stats.n == 3 for e in scan.per_value.values())
    assert scan.seed == 4


@pytest.mark.slow
def test_stabilization_time_grows_below_minus_1_2():
    scan = ex.run_reset_scan([-1.0, -1.4, -1.59, -1.8], ics_per_value=100, seed=0)
    means = [e.mean_stab_time for e in scan.per_value.values()]
    assert all(not math.isnan(m) for m in means)
    inversions = sum(b < a for a, b in zip(means, means[1:]))
    assert inversions <= 1
