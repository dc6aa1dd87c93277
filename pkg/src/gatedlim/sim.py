"""Cycle-driven simulator for the polling upstream.

The simulator makes none of the analytic assumptions: rates may differ
per node, each node may have its own window limit (or none), and
saturation is a perfectly fine operating point that simply shows up as
growing queues in the report.

Randomness comes from a counter-based generator (Philox 4x64) with one
substream per node and purpose, spawned from the master seed, so every
report is bit-reproducible for a given scenario and seed, replication
by replication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernel
from .config import ServiceTimeDist, SystemConfig
from .errors import ConfigError, GatedLimError

RNG_NAME = "philox4x64"

_CHUNK = 1 << 16
_RING_INIT = 1 << 12
_RING_MAX = 1 << 23
_REFILL_FRACTION = 4  # top a buffer up when below 1/4 remaining

DEFAULT_BATCHES = 50
DEFAULT_WARMUP_FRACTION = 0.05

# Below this many measured cycles the batch means are too short to
# trust; the report carries a flag instead of refusing to run.
LOW_CONFIDENCE_CYCLES = 10_000


@dataclass(frozen=True)
class SimScenario:
    """One simulation request.

    horizon_cycles counts every cycle including warmup; warmup_cycles of
    None picks the default fraction. window_limits overrides the
    config-wide limit per node (None entries mean gated).
    """

    config: SystemConfig
    horizon_cycles: int
    warmup_cycles: int | None = None
    seed: int = 0
    replications: int = 1
    window_limits: tuple[int | None, ...] | None = None
    n_batches: int = DEFAULT_BATCHES
    hist_size: int = 256

    def __post_init__(self):
        if self.horizon_cycles < 2:
            raise ConfigError("horizon_cycles must be at least 2")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.n_batches < 2:
            raise ConfigError("n_batches must be at least 2")
        if self.hist_size < 2:
            raise ConfigError("hist_size must be at least 2")
        warmup = self.effective_warmup
        if not 0 <= warmup < self.horizon_cycles:
            raise ConfigError("warmup_cycles must leave at least one measured cycle")
        if self.n_batches > self.horizon_cycles - warmup:
            raise ConfigError("more batches than measured cycles")
        if self.window_limits is not None:
            if len(self.window_limits) != self.config.n_onus:
                raise ConfigError("window_limits must give one entry per node")
            if any(m is not None and m < 1 for m in self.window_limits):
                raise ConfigError("per-node window limits must be at least 1")

    @property
    def effective_warmup(self) -> int:
        if self.warmup_cycles is not None:
            return self.warmup_cycles
        return math.ceil(self.horizon_cycles * DEFAULT_WARMUP_FRACTION)

    @property
    def effective_window_limits(self) -> tuple[int | None, ...]:
        if self.window_limits is not None:
            return self.window_limits
        return (self.config.window_limit,) * self.config.n_onus


@dataclass(frozen=True)
class SimReport:
    """Merged measurements of all replications.

    Waiting times exclude the packet's own transmission. The report
    histogram row i counts post-warmup reports of node i by backlog,
    with the last bin absorbing everything at or above hist_size - 1.
    """

    n_onus: int
    horizon_cycles: int
    warmup_cycles: int
    replications: int
    seed: int
    rng_name: str
    window_limits: tuple[int | None, ...]
    wait_mean_us: np.ndarray
    wait_ci_us: np.ndarray
    pooled_wait_mean_us: float
    pooled_wait_ci_us: float
    busy_mean_us: np.ndarray
    sigma_b2_us2: np.ndarray
    report_hist: np.ndarray
    report_count: np.ndarray
    tail_prob: np.ndarray
    m_inside: np.ndarray
    n_outside: np.ndarray
    cycle_mean_us: float
    cycle_var_us2: float
    measured_time_us: float
    served: np.ndarray
    arrived: np.ndarray
    remaining: np.ndarray
    low_confidence: bool

    def report_pmf(self, onu: int) -> np.ndarray:
        """Empirical distribution of node onu's report sizes."""
        total = self.report_hist[onu].sum()
        if total == 0:
            raise GatedLimError("no reports were recorded after warmup")
        return self.report_hist[onu] / total


class _Streams:
    """Per-node random substreams and the chunked buffers they feed."""

    def __init__(self, config: SystemConfig, seed_seq: np.random.SeedSequence):
        n = config.n_onus
        self.rates = np.asarray(config.rates_per_us)
        self.service = config.service
        per_onu = seed_seq.spawn(n)
        self.arr_gens = []
        self.svc_gens = []
        for child in per_onu:
            arr_ss, svc_ss = child.spawn(2)
            self.arr_gens.append(np.random.Generator(np.random.Philox(arr_ss)))
            self.svc_gens.append(np.random.Generator(np.random.Philox(svc_ss)))
        self.arr_buf = np.zeros((n, _CHUNK))
        self.arr_ptr = np.zeros(n, dtype=np.int64)
        self.arr_len = np.zeros(n, dtype=np.int64)
        self.arr_horizon = np.zeros(n)
        self.last_arrival = np.zeros(n)
        self.svc_buf = np.zeros((n, _CHUNK))
        self.svc_ptr = np.zeros(n, dtype=np.int64)
        self.svc_len = np.zeros(n, dtype=np.int64)
        for i in range(n):
            if self.rates[i] == 0.0:
                self.arr_horizon[i] = np.inf
            else:
                self.refill_arrivals(i)
            self.refill_service(i)

    def refill_arrivals(self, i: int) -> None:
        rem = int(self.arr_len[i] - self.arr_ptr[i])
        if rem:
            self.arr_buf[i, :rem] = self.arr_buf[i, self.arr_ptr[i] : self.arr_len[i]]
        n_new = _CHUNK - rem
        gaps = self.arr_gens[i].exponential(1.0 / self.rates[i], size=n_new)
        self.arr_buf[i, rem:] = self.last_arrival[i] + np.cumsum(gaps)
        self.last_arrival[i] = self.arr_buf[i, -1]
        self.arr_horizon[i] = self.last_arrival[i]
        self.arr_ptr[i] = 0
        self.arr_len[i] = _CHUNK

    def refill_service(self, i: int) -> None:
        rem = int(self.svc_len[i] - self.svc_ptr[i])
        if rem:
            self.svc_buf[i, :rem] = self.svc_buf[i, self.svc_ptr[i] : self.svc_len[i]]
        self.svc_buf[i, rem:] = self.service.sample(self.svc_gens[i], _CHUNK - rem)
        self.svc_ptr[i] = 0
        self.svc_len[i] = _CHUNK

    def top_up_low(self) -> None:
        for i in range(len(self.arr_gens)):
            if self.rates[i] > 0.0 and self.arr_len[i] - self.arr_ptr[i] < _CHUNK // _REFILL_FRACTION:
                self.refill_arrivals(i)
            if self.svc_len[i] - self.svc_ptr[i] < _CHUNK // _REFILL_FRACTION:
                self.refill_service(i)


@dataclass
class _RepTotals:
    wait_sum: np.ndarray
    wait_count: np.ndarray
    inside_sum: np.ndarray
    outside_sum: np.ndarray
    bp_count: np.ndarray
    bp_sum: np.ndarray
    bp_sumsq: np.ndarray
    hist: np.ndarray
    tail_count: np.ndarray
    report_count: np.ndarray
    served: np.ndarray
    arrived: np.ndarray
    remaining: np.ndarray
    cyc_stats: np.ndarray


def _limits_array(scenario: SimScenario) -> np.ndarray:
    limits = np.empty(scenario.config.n_onus, dtype=np.int64)
    for i, m in enumerate(scenario.effective_window_limits):
        limits[i] = _kernel.GATED_SENTINEL if m is None else m
    return limits


def _run_replication(scenario: SimScenario, rep_seq: np.random.SeedSequence) -> _RepTotals:
    config = scenario.config
    n = config.n_onus
    nb = scenario.n_batches
    streams = _Streams(config, rep_seq)
    m_limit = _limits_array(scenario)

    ring = np.zeros((n, _RING_INIT))
    head = np.zeros(n, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    gate_k = np.zeros(n, dtype=np.int64)
    last_report = np.zeros(n)
    state_i = np.zeros(2, dtype=np.int64)
    state_f = np.zeros(2)

    totals = _RepTotals(
        wait_sum=np.zeros((n, nb)),
        wait_count=np.zeros((n, nb), dtype=np.int64),
        inside_sum=np.zeros(n),
        outside_sum=np.zeros(n),
        bp_count=np.zeros(n, dtype=np.int64),
        bp_sum=np.zeros(n),
        bp_sumsq=np.zeros(n),
        hist=np.zeros((n, scenario.hist_size), dtype=np.int64),
        tail_count=np.zeros(n, dtype=np.int64),
        report_count=np.zeros(n, dtype=np.int64),
        served=np.zeros(n, dtype=np.int64),
        arrived=np.zeros(n, dtype=np.int64),
        remaining=np.zeros(n, dtype=np.int64),
        cyc_stats=np.zeros(3),
    )

    while True:
        code, onu = _kernel.run_cycles(
            scenario.horizon_cycles,
            scenario.effective_warmup,
            n,
            config.guard_us,
            m_limit,
            state_i,
            state_f,
            ring,
            head,
            count,
            gate_k,
            last_report,
            streams.arr_buf,
            streams.arr_ptr,
            streams.arr_len,
            streams.arr_horizon,
            streams.svc_buf,
            streams.svc_ptr,
            streams.svc_len,
            nb,
            totals.wait_sum,
            totals.wait_count,
            totals.inside_sum,
            totals.outside_sum,
            totals.bp_count,
            totals.bp_sum,
            totals.bp_sumsq,
            totals.hist,
            totals.tail_count,
            totals.report_count,
            totals.served,
            totals.arrived,
            totals.cyc_stats,
        )
        if code == _kernel.DONE:
            break
        if code == _kernel.NEED_SERVICE:
            streams.refill_service(onu)
            streams.top_up_low()
        elif code == _kernel.NEED_ARRIVALS:
            streams.refill_arrivals(onu)
            streams.top_up_low()
        elif code == _kernel.NEED_RING:
            cap = ring.shape[1]
            if cap * 2 > _RING_MAX:
                raise GatedLimError(
                    f"node {onu} backlog exceeded {_RING_MAX} packets; "
                    "shorten the horizon for this saturated scenario"
                )
            new_ring = np.zeros((n, cap * 2))
            for i in range(n):
                if count[i]:
                    idx = (head[i] + np.arange(count[i])) % cap
                    new_ring[i, : count[i]] = ring[i, idx]
                head[i] = 0
            ring = new_ring
        else:
            raise GatedLimError(f"kernel returned unknown code {code}")

    totals.remaining[:] = count
    return totals


def _batch_ci(sums: np.ndarray, counts: np.ndarray) -> tuple[float, float]:
    """Mean and 95% half-width from batch accumulators of any shape."""
    total_count = counts.sum()
    if total_count == 0:
        return math.nan, math.nan
    mean = sums.sum() / total_count
    mask = counts > 0
    means = sums[mask] / counts[mask]
    if means.size < 2:
        return mean, math.nan
    half = stats.t.ppf(0.975, means.size - 1) * means.std(ddof=1) / math.sqrt(means.size)
    return mean, float(half)


def run_simulation(scenario: SimScenario) -> SimReport:
    """Run every replication sequentially and merge by index.

    Merging is pure accumulation, so the result is identical no matter
    how the replications would be scheduled.
    """
    n = scenario.config.n_onus
    master = np.random.SeedSequence(scenario.seed)
    rep_seqs = master.spawn(scenario.replications)
    reps = [_run_replication(scenario, rs) for rs in rep_seqs]

    wait_sum = np.stack([r.wait_sum for r in reps])  # (R, N, B)
    wait_count = np.stack([r.wait_count for r in reps])
    wait_mean = np.empty(n)
    wait_ci = np.empty(n)
    for i in range(n):
        wait_mean[i], wait_ci[i] = _batch_ci(wait_sum[:, i, :], wait_count[:, i, :])
    pooled_mean, pooled_ci = _batch_ci(
        wait_sum.sum(axis=1), wait_count.sum(axis=1)
    )

    bp_count = sum(r.bp_count for r in reps)
    bp_sum = sum(r.bp_sum for r in reps)
    bp_sumsq = sum(r.bp_sumsq for r in reps)
    busy_mean = np.divide(bp_sum, bp_count, out=np.full(n, math.nan), where=bp_count > 0)
    sigma_b2 = np.full(n, math.nan)
    for i in range(n):
        if bp_count[i] >= 2:
            sigma_b2[i] = (bp_sumsq[i] - bp_count[i] * busy_mean[i] ** 2) / (bp_count[i] - 1)
            sigma_b2[i] = max(sigma_b2[i], 0.0)

    hist = sum(r.hist for r in reps)
    tail_count = sum(r.tail_count for r in reps)
    report_count = sum(r.report_count for r in reps)
    tail_prob = np.divide(
        tail_count, report_count, out=np.full(n, math.nan), where=report_count > 0
    )

    cyc = sum(r.cyc_stats for r in reps)
    if cyc[0] >= 1:
        cycle_mean = cyc[1] / cyc[0]
    else:
        cycle_mean = math.nan
    if cyc[0] >= 2:
        cycle_var = max((cyc[2] - cyc[0] * cycle_mean**2) / (cyc[0] - 1), 0.0)
    else:
        cycle_var = math.nan
    measured_time = float(cyc[1])

    inside_sum = sum(r.inside_sum for r in reps)
    outside_sum = sum(r.outside_sum for r in reps)
    if measured_time > 0.0:
        m_inside = inside_sum / measured_time
        n_outside = outside_sum / measured_time
    else:
        m_inside = np.full(n, math.nan)
        n_outside = np.full(n, math.nan)

    measured = scenario.horizon_cycles - scenario.effective_warmup
    return SimReport(
        n_onus=n,
        horizon_cycles=scenario.horizon_cycles,
        warmup_cycles=scenario.effective_warmup,
        replications=scenario.replications,
        seed=scenario.seed,
        rng_name=RNG_NAME,
        window_limits=scenario.effective_window_limits,
        wait_mean_us=wait_mean,
        wait_ci_us=wait_ci,
        pooled_wait_mean_us=pooled_mean,
        pooled_wait_ci_us=pooled_ci,
        busy_mean_us=busy_mean,
        sigma_b2_us2=sigma_b2,
        report_hist=hist,
        report_count=report_count,
        tail_prob=tail_prob,
        m_inside=m_inside,
        n_outside=n_outside,
        cycle_mean_us=float(cycle_mean),
        cycle_var_us2=float(cycle_var),
        measured_time_us=measured_time,
        served=sum(r.served for r in reps),
        arrived=sum(r.arrived for r in reps),
        remaining=sum(r.remaining for r in reps),
        low_confidence=measured < LOW_CONFIDENCE_CYCLES,
    )


def empirical_busy_variance(report: SimReport) -> np.ndarray:
    """Per-node sample variance of window durations, guard excluded."""
    return report.sigma_b2_us2


def capture_scenario(
    rate2_per_us: float,
    *,
    window_limit: int | None = 4,
    rate1_per_us: float = 0.3,
    capacity_per_us: float = 1.0,
    guard_us: float = 1.512,
    horizon_cycles: int = 300_000,
    seed: int = 0,
    replications: int = 1,
) -> SimScenario:
    """Two-node scenario probing how one node's greed hurts the other.

    Node 1 keeps to the subscribed rate; node 2's rate is the argument.
    window_limit of None runs the scenario under gated service, where
    nothing shields node 1 from node 2's backlog.
    """
    config = SystemConfig(
        n_onus=2,
        guard_us=guard_us,
        service=ServiceTimeDist.deterministic(1.0 / capacity_per_us),
        subscribed_rate_per_us=rate1_per_us,
        rates_per_us=(rate1_per_us, rate2_per_us),
        window_limit=window_limit,
    )
    return SimScenario(
        config=config,
        horizon_cycles=horizon_cycles,
        seed=seed,
        replications=replications,
    )


def capture_effect_scenario(
    rate2_per_us: float,
    window_limit: int | None = 4,
    **kwargs,
) -> tuple[float, float]:
    """Mean waits (node 1, node 2) for one point of the two-node demo.

    Keyword arguments are passed through to capture_scenario.
    """
    report = run_simulation(
        capture_scenario(rate2_per_us, window_limit=window_limit, **kwargs)
    )
    return float(report.wait_mean_us[0]), float(report.wait_mean_us[1])
