"""Embedded-chain solver: roots, boundary probabilities, fixed point,
and the assembled analytic report."""

from __future__ import annotations

import cmath
import math

import numpy as np
import pytest

from gatedlim import (
    GeneratingFunctionParams,
    ModelError,
    SaturationError,
    ServiceTimeDist,
    SystemConfig,
    analytic_report,
    arrival_pgf,
    find_unit_disk_roots,
    optimize_window,
    queue_moments,
    regular_window_second_moment,
    solve_boundary_probs,
    solve_chain,
)

DET_1US = ServiceTimeDist.deterministic(1.0)

RATE_HIGH = 0.021875
RATE_LOW = 0.009375

# Regression constants, frozen after the Monte-Carlo Lindley check
# below (and its long form in the acceptance suite) validated them.
Q_HIGH_M9 = (
    0.030049091653958918,
    0.1044726469893545,
    0.1824478217835454,
    0.2133866584921419,
    0.18803336454741446,
    0.1331591554139196,
    0.07894301167611456,
    0.040301218366915574,
    0.01808737960694029,
)
Q_LOW_M3 = (0.5210989691078551, 0.3388848445943047, 0.11093340348782524)


def _config(rate, m, n=32, guard=1.512, service=DET_1US):
    return SystemConfig(
        n_onus=n,
        guard_us=guard,
        service=service,
        subscribed_rate_per_us=rate,
        rates_per_us=(rate,) * n,
        window_limit=m,
    )


def _params_grid(rng, count):
    """Random stable parameter sets for property loops."""
    out = []
    while len(out) < count:
        m = int(rng.integers(2, 14))
        lam = float(rng.uniform(0.001, 0.04))
        mu_c = float(rng.uniform(20.0, 300.0))
        if lam * mu_c >= 0.9 * m:
            continue
        sigma_c2 = float(rng.uniform(0.0, (0.3 * mu_c) ** 2))
        out.append(GeneratingFunctionParams(
            lam_per_us=lam, mu_c_us=mu_c, sigma_c2_us2=sigma_c2, window_limit=m,
        ))
    return out


def test_arrival_pgf_basics():
    params = GeneratingFunctionParams(
        lam_per_us=0.02, mu_c_us=100.0, sigma_c2_us2=50.0, window_limit=4
    )
    assert arrival_pgf(params, 1.0) == pytest.approx(1.0, rel=1e-12)
    # At z=0 the pgf is the no-arrival probability, positive and < 1.
    p0 = arrival_pgf(params, 0.0)
    assert 0.0 < p0 < 1.0


def test_roots_properties_random():
    rng = np.random.default_rng(86420)
    for params in _params_grid(rng, 40):
        roots = find_unit_disk_roots(params)
        m = params.window_limit
        assert len(roots) == m - 1
        for z in roots:
            assert abs(z) < 1.0
            assert abs(z**m - arrival_pgf(params, z)) < 1e-9
        for i, a in enumerate(roots):
            for b in roots[i + 1 :]:
                assert abs(a - b) > 1e-11


def test_roots_come_in_conjugate_pairs():
    params = GeneratingFunctionParams(
        lam_per_us=RATE_HIGH, mu_c_us=161.28, sigma_c2_us2=112.654872, window_limit=9
    )
    roots = find_unit_disk_roots(params)
    conj = sorted(roots, key=lambda z: (round(z.real, 9), round(z.imag, 9)))
    mirrored = sorted(
        (z.conjugate() for z in roots),
        key=lambda z: (round(z.real, 9), round(z.imag, 9)),
    )
    for a, b in zip(conj, mirrored):
        assert cmath.isclose(a, b, abs_tol=1e-9)


def test_boundary_probs_enforce_mean_drift():
    # The normalisation row encodes E[served] = E[arrivals]; the
    # recovered q must reproduce lam*mu_C through sum(n q_n) + M*(tail).
    rng = np.random.default_rng(13579)
    for params in _params_grid(rng, 25):
        roots = find_unit_disk_roots(params)
        q = solve_boundary_probs(params, roots)
        m = params.window_limit
        assert q.min() >= 0.0
        assert q.sum() <= 1.0 + 1e-9
        served = sum(n * q[n] for n in range(m)) + m * (1.0 - q.sum())
        assert served == pytest.approx(params.lam_per_us * params.mu_c_us, rel=1e-9)


def test_solve_chain_frozen_high():
    sol = solve_chain(32, 1.512, DET_1US, RATE_HIGH, 9)
    assert sol.q == pytest.approx(Q_HIGH_M9, rel=1e-6)
    assert sol.kbar == pytest.approx(3.528, rel=1e-9)
    assert sol.k2bar == pytest.approx(15.967248762867873, rel=1e-6)
    assert sol.sigma_b2_us2 == pytest.approx(3.5204647628678796, rel=1e-6)
    assert sol.mu_c_us == pytest.approx(161.28, rel=1e-9)
    assert sol.residual <= 1e-8


def test_solve_chain_frozen_low():
    sol = solve_chain(32, 1.512, DET_1US, RATE_LOW, 3)
    assert sol.q == pytest.approx(Q_LOW_M3, rel=1e-6)
    assert sol.kbar == pytest.approx(0.648, rel=1e-9)


def test_chain_mean_is_exact_at_any_load():
    # kbar = lam * mu_C holds exactly by construction, even deep into
    # the heavy-traffic corner where the fixed point works hardest.
    for lam, m in ((0.001, 2), (0.02, 7), (0.027, 12), (0.028, 16)):
        sol = solve_chain(32, 1.512, DET_1US, lam, m)
        assert sol.kbar == pytest.approx(lam * sol.mu_c_us, rel=1e-9)


def test_light_load_matches_regular_closed_form():
    # With the optimizer's window the cap rarely binds, so the chain
    # second moment must land near the unlimited-regime value.
    for rho in (0.1, 0.2, 0.3):
        lam = rho / 32
        model = queue_moments(32, 1.512, DET_1US, lam)
        m_star = optimize_window(model, 0.05)
        sol = solve_chain(32, 1.512, DET_1US, lam, m_star)
        reg = regular_window_second_moment(32 * lam, 1.512, rho, 32, DET_1US)
        assert sol.k2bar == pytest.approx(reg, rel=0.02)
        assert sol.tail_mass <= 0.05


def test_lindley_monte_carlo_short():
    """1e6-step Lindley recursion against the chain distribution.

    The long 1e7-step run for both provisioning points lives in the
    acceptance suite; this is the fast smoke version.
    """
    sol = solve_chain(32, 1.512, DET_1US, RATE_HIGH, 9)
    rng = np.random.default_rng(777)
    steps = 1_000_000
    warm = 10_000
    m = 9
    lam = RATE_HIGH
    cycles = np.maximum(
        rng.normal(sol.mu_c_us, math.sqrt(sol.sigma_c2_us2), size=steps), 0.0
    )
    arriv = rng.poisson(lam * cycles)
    counts = np.zeros(m + 1, dtype=np.int64)
    l = 0
    for j in range(steps):
        l = max(l - m, 0) + arriv[j]
        if j >= warm:
            counts[min(l, m)] += 1
    emp = counts / counts.sum()
    chain = np.array([*sol.q, sol.tail_mass])
    tv = 0.5 * np.abs(emp - chain).sum()
    assert tv < 0.03


def test_solve_chain_refuses_saturation():
    with pytest.raises(SaturationError):
        solve_chain(32, 1.512, DET_1US, 0.03, 9)  # lam*mu_C > 9


def test_solve_chain_zero_rate():
    sol = solve_chain(32, 1.512, DET_1US, 0.0, 5)
    assert sol.q[0] == 1.0
    assert sol.kbar == 0.0
    assert sol.sigma_b2_us2 == 0.0


def test_window_cap_limit():
    with pytest.raises(ModelError):
        solve_chain(32, 1.512, DET_1US, 0.001, 1000)


class TestAnalyticReport:
    def test_invariants_over_grid(self):
        rng = np.random.default_rng(24601)
        checked = 0
        while checked < 25:
            n = int(rng.integers(2, 40))
            guard = float(rng.uniform(0.5, 3.0))
            xbar = float(rng.uniform(0.4, 1.6))
            service = ServiceTimeDist.exponential(xbar)
            lam = float(rng.uniform(0.0005, 0.9 / (n * xbar)))
            m = int(rng.integers(1, 12))
            config = SystemConfig(
                n_onus=n, guard_us=guard, service=service,
                subscribed_rate_per_us=lam, rates_per_us=(lam,) * n,
                window_limit=m,
            )
            try:
                rep = analytic_report(config)
            except SaturationError:
                continue
            checked += 1
            parts = rep.wait.residual_us + rep.wait.queueing_us + rep.wait.vacations_us
            assert rep.w_us == pytest.approx(parts, rel=1e-9)
            assert rep.wait.n_q == pytest.approx(lam * rep.w_us, rel=1e-9)
            assert rep.wait.n_q == pytest.approx(
                rep.wait.m_inside + rep.wait.n_outside, rel=1e-9
            )
            assert rep.mu_c_us * (1.0 - rep.rho) == pytest.approx(rep.vbar_us, rel=1e-9)
            assert all(0.0 <= p <= 1.0 for p in rep.q)
            assert rep.sigma_b2_us2 >= 0.0
            assert rep.v2bar_us2 >= rep.vbar_us**2 - 1e-9

    def test_window_limit_hurts_when_moments_follow(self):
        # Solved self-consistently, a tighter cap can only add delay.
        waits = []
        for m in (9, 12, 16, 24, None):
            rep = analytic_report(_config(RATE_HIGH, m))
            waits.append(rep.w_us)
        assert all(a >= b - 1e-9 for a, b in zip(waits, waits[1:]))
        assert waits[0] == pytest.approx(240.775478, rel=1e-6)
        assert waits[-1] == pytest.approx(240.51921802602345, rel=1e-9)

    def test_gated_report_has_no_boundary_probs(self):
        rep = analytic_report(_config(RATE_HIGH, None))
        assert rep.q == ()
        assert rep.window_limit is None
        classical = (
            RATE_HIGH / 2
            + (1 - RATE_HIGH) * rep.v2bar_us2 / (2 * rep.vbar_us)
            + rep.vbar_us
        ) / (1 - RATE_HIGH)
        assert rep.w_us == pytest.approx(classical, rel=1e-12)

    def test_heterogeneous_rates_refused(self):
        config = SystemConfig(
            n_onus=2, guard_us=1.512, service=DET_1US,
            subscribed_rate_per_us=0.1,
            rates_per_us=(0.1, 0.2), window_limit=4,
        )
        with pytest.raises(ModelError):
            analytic_report(config)

    def test_saturated_config_refused(self):
        with pytest.warns(UserWarning):
            config = SystemConfig(
                n_onus=2, guard_us=1.512, service=DET_1US,
                subscribed_rate_per_us=0.5,
                rates_per_us=(0.5, 0.5), window_limit=4,
            )
        with pytest.raises(SaturationError):
            analytic_report(config)
