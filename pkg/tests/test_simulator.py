"""Event-driven simulator: agreement with an independent reference
implementation, conservation laws, determinism and scenario plumbing."""

from __future__ import annotations

import math

import numpy as np
import pytest

from gatedlim import (
    ConfigError,
    ServiceTimeDist,
    SimScenario,
    SystemConfig,
    capture_effect_scenario,
    capture_scenario,
    empirical_busy_variance,
    run_simulation,
)

from reference_sim import run_reference

REL = 1e-9


def _config(n, rates, service, guard=1.512, window_limit=None):
    return SystemConfig(
        n_onus=n,
        guard_us=guard,
        service=service,
        subscribed_rate_per_us=max(rates),
        rates_per_us=tuple(rates),
        window_limit=window_limit,
    )


MIXED_CONFIG = _config(
    4, (0.05, 0.1, 0.15, 0.2), ServiceTimeDist.exponential(0.8)
)
MIXED_LIMITS = (None, 3, 1, 5)

BINDING_CONFIG = _config(
    3, (0.08, 0.08, 0.08), ServiceTimeDist.deterministic(1.0), window_limit=1
)


def _compare_with_reference(config, horizon, limits, seed):
    scenario = SimScenario(
        config=config,
        horizon_cycles=horizon,
        seed=seed,
        window_limits=limits,
    )
    report = run_simulation(scenario)
    ref = run_reference(config, horizon, scenario.effective_warmup, seed, limits)

    n = config.n_onus
    assert list(report.served) == ref.served
    assert list(report.arrived) == ref.arrived
    assert list(report.remaining) == ref.remaining
    for i in range(n):
        assert list(report.report_hist[i]) == ref.hist[i]
        assert report.report_count[i] == ref.report_count[i]
        if ref.report_count[i]:
            assert report.tail_prob[i] == pytest.approx(
                ref.tail_count[i] / ref.report_count[i], rel=1e-12
            )
        if ref.wait_count[i]:
            assert report.wait_mean_us[i] == pytest.approx(
                ref.wait_sum[i] / ref.wait_count[i], rel=REL
            )
        assert report.busy_mean_us[i] == pytest.approx(
            ref.bp_sum[i] / ref.bp_count[i], rel=REL, abs=1e-12
        )
        var = (ref.bp_sumsq[i] - ref.bp_count[i] * (ref.bp_sum[i] / ref.bp_count[i]) ** 2) / (
            ref.bp_count[i] - 1
        )
        assert report.sigma_b2_us2[i] == pytest.approx(max(var, 0.0), rel=1e-6, abs=1e-12)
        assert report.m_inside[i] == pytest.approx(
            ref.inside_sum[i] / ref.cycle_sum, rel=REL, abs=1e-15
        )
        assert report.n_outside[i] == pytest.approx(
            ref.outside_sum[i] / ref.cycle_sum, rel=REL, abs=1e-15
        )
    assert report.cycle_mean_us == pytest.approx(ref.cycle_sum / ref.cycle_count, rel=REL)
    ref_var = (ref.cycle_sumsq - ref.cycle_count * (ref.cycle_sum / ref.cycle_count) ** 2) / (
        ref.cycle_count - 1
    )
    assert report.cycle_var_us2 == pytest.approx(ref_var, rel=1e-6, abs=1e-12)
    assert report.measured_time_us == pytest.approx(ref.cycle_sum, rel=REL)
    return report, ref


def test_reference_agreement_mixed_disciplines():
    # Heterogeneous rates, one gated node, three different caps.
    _compare_with_reference(MIXED_CONFIG, 4000, MIXED_LIMITS, seed=11)


def test_reference_agreement_binding_cap():
    report, ref = _compare_with_reference(BINDING_CONFIG, 6000, (1, 1, 1), seed=7)
    # The single-packet cap must actually bind somewhere.
    assert report.tail_prob.max() > 0.0


def test_reference_departures_fifo_and_capped():
    ref = run_reference(BINDING_CONFIG, 3000, 150, 21, (1, 1, 1))
    guard = BINDING_CONFIG.guard_us
    per_onu = {0: [], 1: [], 2: []}
    for onu, arrival, start in ref.departures:
        assert start >= arrival - 1e-12
        per_onu[onu].append((start, arrival))
    for rows in per_onu.values():
        assert rows
        starts = [s for s, _ in rows]
        assert starts == sorted(starts)
        arrivals = [a for _, a in rows]
        assert arrivals == sorted(arrivals)
        # Cap 1 plus unit service: consecutive starts of the same node
        # are separated by at least the guard, never back to back.
        for prev, nxt in zip(starts, starts[1:]):
            assert nxt - prev >= 1.0 + guard - 1e-9


def test_zero_load_is_exact():
    config = _config(5, (0.0,) * 5, ServiceTimeDist.deterministic(1.0), window_limit=4)
    report = run_simulation(SimScenario(config=config, horizon_cycles=200, seed=3))
    assert report.cycle_mean_us == pytest.approx(5 * 1.512, rel=1e-15)
    # All cycles are the same length; the two-pass variance leaves only
    # cancellation noise.
    assert report.cycle_var_us2 == pytest.approx(0.0, abs=1e-9)
    assert report.served.sum() == 0
    assert report.arrived.sum() == 0
    assert np.isnan(report.wait_mean_us).all()
    assert np.isnan(report.pooled_wait_mean_us)
    assert (report.busy_mean_us == 0.0).all()
    assert (report.tail_prob == 0.0).all()
    measured = report.horizon_cycles - report.warmup_cycles
    assert (report.report_hist[:, 0] == measured).all()
    assert (report.report_hist[:, 1:] == 0).all()


def test_packet_conservation_random_scenarios():
    rng = np.random.default_rng(5150)
    for _ in range(5):
        n = int(rng.integers(2, 7))
        xbar = float(rng.uniform(0.5, 1.5))
        rates = rng.uniform(0.0, 0.8 / (n * xbar), size=n)
        kind = rng.integers(0, 2)
        service = (
            ServiceTimeDist.deterministic(xbar)
            if kind == 0
            else ServiceTimeDist.exponential(xbar)
        )
        limit = int(rng.integers(1, 6))
        config = _config(n, rates, service, window_limit=limit)
        report = run_simulation(
            SimScenario(
                config=config,
                horizon_cycles=int(rng.integers(300, 1200)),
                seed=int(rng.integers(0, 2**31)),
                replications=int(rng.integers(1, 3)),
            )
        )
        assert (report.arrived == report.served + report.remaining).all()


def test_runs_are_deterministic():
    scenario = SimScenario(
        config=MIXED_CONFIG, horizon_cycles=2000, seed=99, window_limits=MIXED_LIMITS,
        replications=2,
    )
    a = run_simulation(scenario)
    b = run_simulation(scenario)
    assert np.array_equal(a.wait_mean_us, b.wait_mean_us)
    assert np.array_equal(a.wait_ci_us, b.wait_ci_us)
    assert a.pooled_wait_mean_us == b.pooled_wait_mean_us
    assert np.array_equal(a.report_hist, b.report_hist)
    assert np.array_equal(a.served, b.served)
    assert a.cycle_mean_us == b.cycle_mean_us
    assert a.cycle_var_us2 == b.cycle_var_us2
    assert a.rng_name == "philox4x64"


def test_every_node_reports_every_measured_cycle():
    scenario = SimScenario(
        config=MIXED_CONFIG, horizon_cycles=1500, seed=42, window_limits=MIXED_LIMITS,
        replications=2,
    )
    report = run_simulation(scenario)
    measured = (scenario.horizon_cycles - scenario.effective_warmup) * 2
    assert (report.report_count == measured).all()
    assert (report.report_hist.sum(axis=1) == measured).all()


def test_cycle_splits_into_guards_and_windows():
    report = run_simulation(
        SimScenario(config=MIXED_CONFIG, horizon_cycles=3000, seed=8,
                    window_limits=MIXED_LIMITS)
    )
    rebuilt = 4 * 1.512 + report.busy_mean_us.sum()
    assert report.cycle_mean_us == pytest.approx(rebuilt, rel=REL)


def test_unit_cap_bounds_window_duration():
    report = run_simulation(
        SimScenario(config=BINDING_CONFIG, horizon_cycles=4000, seed=6)
    )
    assert (report.busy_mean_us <= 1.0 + 1e-12).all()
    # Window durations are Bernoulli here, so their variance tops out
    # at a quarter.
    assert (empirical_busy_variance(report) <= 0.25 + 1e-9).all()


def test_low_confidence_flag():
    short = run_simulation(
        SimScenario(config=BINDING_CONFIG, horizon_cycles=300, seed=1)
    )
    assert short.low_confidence
    long = run_simulation(
        SimScenario(config=BINDING_CONFIG, horizon_cycles=11_000, seed=1)
    )
    assert not long.low_confidence


def test_report_pmf_normalised():
    report = run_simulation(
        SimScenario(config=MIXED_CONFIG, horizon_cycles=1000, seed=12,
                    window_limits=MIXED_LIMITS)
    )
    for i in range(4):
        pmf = report.report_pmf(i)
        assert pmf.sum() == pytest.approx(1.0, rel=1e-12)
        assert (pmf >= 0.0).all()


def test_scenario_validation():
    config = BINDING_CONFIG
    with pytest.raises(ConfigError):
        SimScenario(config=config, horizon_cycles=1)
    with pytest.raises(ConfigError):
        SimScenario(config=config, horizon_cycles=100, replications=0)
    with pytest.raises(ConfigError):
        SimScenario(config=config, horizon_cycles=100, n_batches=1)
    with pytest.raises(ConfigError):
        SimScenario(config=config, horizon_cycles=100, n_batches=99)
    with pytest.raises(ConfigError):
        SimScenario(config=config, horizon_cycles=100, warmup_cycles=100)
    with pytest.raises(ConfigError):
        SimScenario(config=config, horizon_cycles=100, window_limits=(1, 1))
    with pytest.raises(ConfigError):
        SimScenario(config=config, horizon_cycles=100, window_limits=(1, 0, 2))


def test_window_limit_overrides():
    config = _config(2, (0.01, 0.01), ServiceTimeDist.deterministic(1.0), window_limit=3)
    plain = SimScenario(config=config, horizon_cycles=200)
    assert plain.effective_window_limits == (3, 3)
    mixed = SimScenario(config=config, horizon_cycles=200, window_limits=(None, 2))
    report = run_simulation(mixed)
    assert report.window_limits == (None, 2)


def test_capture_scenario_shape():
    scenario = capture_scenario(0.45, horizon_cycles=5000)
    assert scenario.config.n_onus == 2
    assert scenario.config.rates_per_us == (0.3, 0.45)
    assert scenario.effective_window_limits == (4, 4)
    assert scenario.config.service.mean_us == pytest.approx(1.0)


def test_capture_symmetric_nodes_agree():
    # Equal rates make the two nodes statistically identical; their
    # mean-wait estimates must agree within joint confidence slack.
    scenario = capture_scenario(0.3, horizon_cycles=60_000)
    report = run_simulation(scenario)
    w1, w2 = capture_effect_scenario(0.3, horizon_cycles=60_000)
    assert w1 == pytest.approx(float(report.wait_mean_us[0]), rel=1e-12)
    assert w2 == pytest.approx(float(report.wait_mean_us[1]), rel=1e-12)
    slack = float(report.wait_ci_us[0] + report.wait_ci_us[1])
    assert abs(w1 - w2) <= 1.5 * slack
