"""Window-limit provisioning.

The operator picks the per-visit window limit M once, from the
subscribed per-node rate, so that the chance a node's report exceeds M
stays below a target epsilon. The report count l at a report instant is
modelled as Poisson arrivals over one Gaussian cycle, which gives a
closed Chernoff bound

    Pr{l >= mu_l + t} <= f(t, z) = exp[-(mu_l+t) ln z
                                       + lam*mu_C (z-1)
                                       + lam^2 sigma_C^2 (z-1)^2 / 2]

for any z > 1. Minimising over z and inverting in t yields hard lower
and upper integer bounds M1 and M2, a cheap approximation M_hat, and
the exact smallest window M_star satisfying the bound, found by
bisection between M1 and M2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import ServiceTimeDist
from .errors import ConfigError, ConvergenceError, SaturationError

# The bisection bracket shrinks monotonically, so this only guards
# against a root sitting exactly on an integer in floating point.
_MAX_BISECT_STEPS = 200

REGION_SUBSCRIBED = "subscribed"
REGION_OVERLOADED = "overloaded"
REGION_SATURATED = "saturated"


@dataclass(frozen=True)
class QueueLengthModel:
    """Gaussian-cycle model of one node's report count.

    mu_l is the mean report count, sigma_l2 its variance. The two split
    as sigma_l2 = lam^2 sigma_C^2 + mu_l, the cycle-jitter part plus the
    Poisson part, and lam * mu_C equals mu_l.
    """

    mu_l: float
    sigma_l2: float

    def __post_init__(self):
        if self.mu_l < 0.0:
            raise ConfigError("mean report count must be non-negative")
        if self.sigma_l2 < self.mu_l - 1e-12:
            raise ConfigError("report count variance below its Poisson floor")

    @property
    def lam_mu_c(self) -> float:
        return self.mu_l

    @property
    def lam2_sigma_c2(self) -> float:
        return max(self.sigma_l2 - self.mu_l, 0.0)


def regular_window_second_moment(
    total_rate_per_us: float,
    guard_us: float,
    rho_total: float,
    n_onus: int,
    service: ServiceTimeDist,
) -> float:
    """Second moment of the per-window packet count when the limit is
    wide enough to never bind (the regular operating regime)."""
    if not 0.0 <= rho_total < 1.0:
        raise SaturationError(f"total load rho_E={rho_total:.6g} must lie in [0, 1)")
    kbar = total_rate_per_us * guard_us / (1.0 - rho_total)
    jitter = (
        total_rate_per_us**3 * guard_us * service.variance_us2 / (n_onus * (1.0 - rho_total))
        + kbar
    )
    return kbar * kbar + jitter / (1.0 - rho_total**2 / n_onus)


def queue_moments(
    n_onus: int,
    guard_us: float,
    service: ServiceTimeDist,
    lam_per_us: float,
) -> QueueLengthModel:
    """Report-count mean and variance for one node at rate lam_per_us.

    Uses the regular-regime cycle statistics; the caller decides which
    rate (actual or subscribed) the model should describe.
    """
    if lam_per_us < 0.0:
        raise ConfigError("arrival rate must be non-negative")
    total = n_onus * lam_per_us
    rho_total = total * service.mean_us
    if rho_total >= 1.0:
        raise SaturationError(f"total load rho_E={rho_total:.6g} must stay below 1")
    mu_l = total * guard_us / (1.0 - rho_total)
    sigma_l2 = (
        total**3 * guard_us * service.second_moment_us2
        / ((1.0 - rho_total) * (n_onus - rho_total**2))
        + mu_l
    )
    return QueueLengthModel(mu_l=mu_l, sigma_l2=sigma_l2)


def chernoff_bound(model: QueueLengthModel, m: float, z: float) -> float:
    """Value of the tail bound f at threshold m and twist z (> 1)."""
    if z <= 1.0:
        raise ConfigError("the Chernoff twist must satisfy z > 1")
    expo = (
        -m * math.log(z)
        + model.lam_mu_c * (z - 1.0)
        + 0.5 * model.lam2_sigma_c2 * (z - 1.0) ** 2
    )
    return math.exp(expo)


def optimal_z(model: QueueLengthModel, m: float) -> float:
    """Minimiser of the bound over z for threshold m (> mu_l).

    Stationarity gives the quadratic
        lam^2 sigma_C^2 z^2 + (lam mu_C - lam^2 sigma_C^2) z - m = 0
    whose positive root is returned. When the cycle jitter vanishes the
    quadratic degenerates to the pure Poisson twist m / (lam mu_C).
    """
    if m <= model.mu_l:
        raise ConfigError("the bound only decays for thresholds above the mean")
    a = model.lam2_sigma_c2
    b = model.lam_mu_c
    if b == 0.0:
        raise ConfigError("the twist is unbounded when no packets ever arrive")
    if a == 0.0:
        return m / b
    shift = b - a
    return (math.sqrt(shift * shift + 4.0 * m * a) - shift) / (2.0 * a)


def _tail_bound(model: QueueLengthModel, m: float) -> float:
    """Optimised bound at integer threshold m; 1.0 when m <= mu_l."""
    if m <= model.mu_l:
        return 1.0
    return chernoff_bound(model, m, optimal_z(model, m))


def window_bounds(model: QueueLengthModel, epsilon: float) -> tuple[int, int]:
    """Integer bracket [M1, M2] that must contain the optimal window."""
    alpha = _alpha(epsilon)
    lam_sigma_c = math.sqrt(model.lam2_sigma_c2)
    m1 = math.ceil(model.mu_l + lam_sigma_c * math.sqrt(2.0 * alpha))
    m2 = math.ceil(model.mu_l + alpha + math.sqrt(alpha * alpha + 2.0 * alpha * model.sigma_l2))
    return max(m1, 1), max(m2, 1)


def window_approx(model: QueueLengthModel, epsilon: float) -> int:
    """One-line window estimate from the Gaussian tail of l itself."""
    alpha = _alpha(epsilon)
    return max(math.ceil(model.mu_l + math.sqrt(model.sigma_l2) * math.sqrt(2.0 * alpha)), 1)


def optimize_window(model: QueueLengthModel, epsilon: float) -> int:
    """Smallest integer window whose optimised tail bound is <= epsilon.

    Bisection on the real threshold between the bracket ends, starting
    from the approximation, exactly as the provisioning procedure
    prescribes. The result is verified minimal before returning.
    """
    _alpha(epsilon)
    if model.mu_l == 0.0:
        # Nothing ever arrives; the smallest legal window already meets
        # any epsilon.
        return 1
    m1, m2 = window_bounds(model, epsilon)
    if m2 <= 1:
        return 1
    low, up = float(m1), float(m2)
    m = float(window_approx(model, epsilon))
    for _ in range(_MAX_BISECT_STEPS):
        if _tail_bound(model, m) > epsilon:
            low = m
        else:
            up = m
        if math.ceil(low) >= math.ceil(up):
            break
        mid = 0.5 * (low + up)
        if not (low < mid < up):
            break
        m = mid
    m_star = math.ceil(up) if math.ceil(low) < math.ceil(up) else math.ceil(low)

    if _tail_bound(model, m_star) > epsilon:
        raise ConvergenceError(
            f"window search ended on an infeasible size M={m_star}",
            residual=_tail_bound(model, m_star) - epsilon,
        )
    if m_star > m1 and _tail_bound(model, m_star - 1) <= epsilon:
        raise ConvergenceError(
            f"window search missed a smaller feasible size below M={m_star}"
        )
    return m_star


def stable_rate(window_limit: float, n_onus: int, xbar_us: float, guard_us: float) -> float:
    """Largest per-node arrival rate the window limit can clear.

    Beyond this rate every window is full and the queue grows without
    bound. The wide-window limit is the raw line share 1/(N Xbar).
    """
    if window_limit < 1:
        raise ConfigError("window limit must be at least 1")
    if math.isinf(window_limit):
        return 1.0 / (n_onus * xbar_us)
    return window_limit / (n_onus * (window_limit * xbar_us + guard_us))


def classify_region(lam_per_us: float, subscribed_per_us: float, lam_hat_per_us: float) -> str:
    """Operating region of an actual rate against subscription and the
    saturation rate of the deployed window."""
    if lam_per_us < 0.0:
        raise ConfigError("arrival rate must be non-negative")
    if lam_per_us >= lam_hat_per_us:
        return REGION_SATURATED
    if lam_per_us <= subscribed_per_us:
        return REGION_SUBSCRIBED
    return REGION_OVERLOADED


@dataclass(frozen=True)
class TwRecommendation:
    """Provisioning summary for one subscription level."""

    m1: int
    m_hat: int
    m_star: int
    m2: int
    epsilon: float
    subscribed_rate_per_us: float
    lam_hat_per_us: float

    def classify(self, lam_per_us: float) -> str:
        return classify_region(lam_per_us, self.subscribed_rate_per_us, self.lam_hat_per_us)


def recommend_window(
    n_onus: int,
    guard_us: float,
    service: ServiceTimeDist,
    subscribed_per_us: float,
    epsilon: float,
) -> TwRecommendation:
    """Full sizing pass at the subscribed rate.

    The deployment value is m_hat; lam_hat reports the saturation rate
    that choice buys.
    """
    model = queue_moments(n_onus, guard_us, service, subscribed_per_us)
    m1, m2 = window_bounds(model, epsilon)
    m_hat = window_approx(model, epsilon)
    m_star = optimize_window(model, epsilon)
    return TwRecommendation(
        m1=m1,
        m_hat=m_hat,
        m_star=m_star,
        m2=m2,
        epsilon=epsilon,
        subscribed_rate_per_us=subscribed_per_us,
        lam_hat_per_us=stable_rate(m_hat, n_onus, service.mean_us, guard_us),
    )


def _alpha(epsilon: float) -> float:
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must lie strictly between 0 and 1")
    return math.log(1.0 / epsilon)
