"""Closed-form moments for a symmetric polling loop with guard gaps.

The model: N identical nodes share one upstream line. The collector
visits them in fixed order; a visit clears the packets the node had
queued at its previous report (up to the window limit M), then a guard
gap of G microseconds passes before the next node's turn. From one
node's point of view the time between the end of its window and the
start of the next one is a vacation made of N guard gaps plus the other
N-1 nodes' windows.

Everything here is a function of a handful of moments: the per-node
arrival rate lambda, the first two service-time moments, the vacation
moments, and the first two moments of the number of packets cleared per
window. The window-count moments come either from the self-consistent
chain solver (finite M) or from the wide-window closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import PROB_SUM_TOL, ServiceTimeDist
from .errors import ConfigError, SaturationError


def vacation_mean(n_onus: int, guard_us: float, rho_total: float) -> float:
    """Mean inter-window gap seen by one node.

    Both this and mean_cycle diverge as the total load approaches 1,
    which is the gated stability wall.
    """
    if not 0.0 <= rho_total < 1.0:
        raise SaturationError(f"total load rho_E={rho_total:.6g} must lie in [0, 1)")
    return (n_onus - rho_total) * guard_us / (1.0 - rho_total)


def mean_cycle(n_onus: int, guard_us: float, rho_total: float) -> float:
    """Mean time for the collector to complete one full round."""
    if not 0.0 <= rho_total < 1.0:
        raise SaturationError(f"total load rho_E={rho_total:.6g} must lie in [0, 1)")
    return n_onus * guard_us / (1.0 - rho_total)


def mean_window_packets(total_rate_per_us: float, guard_us: float, rho_total: float) -> float:
    """Mean number of packets one node clears per window.

    In steady state each node clears exactly what arrives to it over one
    round, so this equals lambda times the mean cycle.
    """
    if not 0.0 <= rho_total < 1.0:
        raise SaturationError(f"total load rho_E={rho_total:.6g} must lie in [0, 1)")
    return total_rate_per_us * guard_us / (1.0 - rho_total)


def mean_busy_period(rho: float, vbar_us: float) -> float:
    """Mean window (busy period) duration for one node at per-node load rho."""
    if not 0.0 <= rho < 1.0:
        raise SaturationError(f"per-node load rho={rho:.6g} must lie in [0, 1)")
    return rho * vbar_us / (1.0 - rho)


def busy_period_variance(service: ServiceTimeDist, kbar: float, k2bar: float) -> float:
    """Variance of one window's duration.

    The window clears a random number K of packets with iid service
    times, so the variance splits into the count part and the
    per-packet part:

        sigma_B^2 = Xbar^2 * Var(K) + Kbar * Var(X)
    """
    if k2bar < kbar * kbar - 1e-9 * max(1.0, kbar * kbar):
        raise ConfigError("window count second moment below squared mean")
    var_k = max(k2bar - kbar * kbar, 0.0)
    return service.mean_us**2 * var_k + kbar * service.variance_us2


def vacation_second_moment(vbar_us: float, n_onus: int, sigma_b2_us2: float) -> float:
    """Second moment of the vacation, treating the N-1 foreign windows
    as independent contributions on top of the deterministic guards."""
    if sigma_b2_us2 < 0.0:
        raise ConfigError("busy period variance must be non-negative")
    return vbar_us * vbar_us + (n_onus - 1) * sigma_b2_us2


@dataclass(frozen=True)
class BusyPeriodDist:
    """Distribution of the number of packets cleared in one window.

    probabilities[k] is the chance a window clears exactly k packets,
    for k = 0..M. Zero-packet windows are real events (the node had
    nothing queued at its report) and still cost a guard gap.
    """

    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.probabilities) == 0:
            raise ConfigError("busy period distribution must not be empty")
        if any(p < 0.0 for p in self.probabilities):
            raise ConfigError("busy period probabilities must be non-negative")
        if abs(math.fsum(self.probabilities) - 1.0) > PROB_SUM_TOL:
            raise ConfigError("busy period probabilities must sum to 1")

    @property
    def kbar(self) -> float:
        return math.fsum(k * p for k, p in enumerate(self.probabilities))

    @property
    def k2bar(self) -> float:
        return math.fsum(k * k * p for k, p in enumerate(self.probabilities))


def served_in_window_prob(dist: BusyPeriodDist, k: int) -> float:
    """Probability that a randomly chosen served packet left in a window
    of exactly k packets.

    Size-biasing: a k-packet window carries k packets, so P_k is
    proportional to k * b_k. Defined for k >= 1; empty windows carry no
    packets.
    """
    if k < 1:
        raise ConfigError("served packets only exist in windows with k >= 1")
    if k >= len(dist.probabilities):
        return 0.0
    kbar = dist.kbar
    if kbar == 0.0:
        raise ConfigError("no packets are ever served when the mean window is empty")
    return k * dist.probabilities[k] / kbar


def mean_served_ahead(dist: BusyPeriodDist) -> float:
    """Mean number of same-window packets cleared before a random packet.

    Within a k-packet window each position 0..k-1 is equally likely.
    Averaging the position over the size-biased window distribution
    collapses to (k2bar - kbar) / (2 kbar). For the degenerate all-empty
    distribution there are no served packets; the value is defined as 0.
    """
    kbar = dist.kbar
    if kbar == 0.0:
        return 0.0
    return (dist.k2bar - kbar) / (2.0 * kbar)


def mean_inside_gate(
    lam_per_us: float, vbar_us: float, dist: BusyPeriodDist, xbar_us: float
) -> float:
    """Mean number of packets already granted (inside the gate) at an
    arrival instant.

    Two contributions: packets that arrived during the current vacation
    so far and were granted at its head, plus the not-yet-served part of
    the window in progress when the arrival lands inside a window.
    """
    rho = lam_per_us * xbar_us
    return lam_per_us * vbar_us + rho * mean_served_ahead(dist)


@dataclass(frozen=True)
class WaitingTime:
    """Mean waiting time and its decomposition.

    w_us = residual_us + queueing_us + vacations_us, where queueing_us
    is the backlog clearing time (mean queue length times mean service)
    and vacations_us counts the whole vacations a packet sits through,
    including extra rounds forced by the window limit.
    """

    w_us: float
    residual_us: float
    queueing_us: float
    vacations_us: float
    n_q: float
    m_inside: float
    n_outside: float


def mean_waiting_time(
    lam_per_us: float,
    service: ServiceTimeDist,
    vbar_us: float,
    v2bar_us2: float,
    kbar: float,
    k2bar: float,
    window_limit: float,
) -> WaitingTime:
    """Mean wait from arrival to start of transmission.

    The closed form balances three delays: the residual of whatever the
    arrival lands in (service or vacation), the time to clear the queue
    ahead, and one vacation per round the packet is held over by the
    window limit. Waiting excludes the packet's own service time.

    `window_limit` may be math.inf, which gives the gated (uncapped)
    service value exactly.
    """
    if lam_per_us < 0.0:
        raise ConfigError("arrival rate must be non-negative")
    if vbar_us <= 0.0:
        raise ConfigError("vacation mean must be strictly positive")
    if v2bar_us2 < vbar_us * vbar_us:
        raise ConfigError("vacation second moment below squared mean")
    if window_limit < 1:
        raise ConfigError("window limit must be at least 1")

    if lam_per_us == 0.0:
        # Limit: the only delay is the residual of the current vacation
        # plus the wait for the next window to open.
        w = v2bar_us2 / (2.0 * vbar_us) + vbar_us
        return WaitingTime(
            w_us=w,
            residual_us=v2bar_us2 / (2.0 * vbar_us),
            queueing_us=0.0,
            vacations_us=vbar_us,
            n_q=0.0,
            m_inside=0.0,
            n_outside=0.0,
        )

    rho = lam_per_us * service.mean_us
    denom = 1.0 - rho - lam_per_us * vbar_us / window_limit
    if denom <= 0.0:
        raise SaturationError(
            f"no stationary regime: 1 - rho - lambda*Vbar/M = {denom:.6g} <= 0 "
            f"(lambda={lam_per_us:.6g}/us, M={window_limit})"
        )

    residual = lam_per_us * service.second_moment_us2 / 2.0 + (1.0 - rho) * v2bar_us2 / (
        2.0 * vbar_us
    )
    if kbar > 0.0:
        delta = (k2bar - kbar) / (2.0 * kbar)
    else:
        delta = 0.0
    held_over = (1.0 + rho) * delta / window_limit
    w = (residual + (1.0 - held_over - lam_per_us * vbar_us / window_limit) * vbar_us) / denom

    n_q = lam_per_us * w
    m_inside = lam_per_us * vbar_us + rho * delta
    n_outside = n_q - m_inside
    vacations = (1.0 + (n_outside - delta) / window_limit) * vbar_us
    return WaitingTime(
        w_us=w,
        residual_us=residual,
        queueing_us=n_q * service.mean_us,
        vacations_us=vacations,
        n_q=n_q,
        m_inside=m_inside,
        n_outside=n_outside,
    )
