"""System configuration types.

All quantities are kept in a single internal unit system: times in
microseconds, rates in packets per microsecond. Conversion from the
packets-per-millisecond rates used on the command line happens at the
parsing boundary, never inside the model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ModelError

# Probability mass functions are accepted when they sum to one within
# this absolute slack.
PROB_SUM_TOL = 1e-12

# Epsilon values outside this band are legal but far from the regime the
# sizing bound was designed for, so they only produce a warning.
EPSILON_SOFT_RANGE = (0.001, 0.1)

DEFAULT_EPSILON = 0.05


@dataclass(frozen=True)
class ServiceTimeDist:
    """Per-packet service (transmission) time distribution.

    `kind` is one of "deterministic", "exponential" or "empirical".
    The first two moments are precomputed because every closed form in
    the package consumes the distribution only through them.
    """

    kind: str
    mean_us: float
    second_moment_us2: float
    values_us: tuple[float, ...] = field(default=())
    probabilities: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("deterministic", "exponential", "empirical"):
            raise ConfigError(f"unknown service time kind: {self.kind!r}")
        if self.mean_us <= 0.0:
            raise ConfigError("service time mean must be strictly positive")
        if self.second_moment_us2 < self.mean_us**2:
            raise ConfigError("service time second moment below squared mean")

    @classmethod
    def deterministic(cls, value_us: float) -> "ServiceTimeDist":
        if value_us <= 0.0:
            raise ConfigError("deterministic service time must be positive")
        return cls("deterministic", value_us, value_us**2)

    @classmethod
    def exponential(cls, mean_us: float) -> "ServiceTimeDist":
        if mean_us <= 0.0:
            raise ConfigError("exponential service mean must be positive")
        return cls("exponential", mean_us, 2.0 * mean_us**2)

    @classmethod
    def empirical(cls, values_us, probabilities) -> "ServiceTimeDist":
        values = tuple(float(v) for v in values_us)
        probs = tuple(float(p) for p in probabilities)
        if len(values) == 0 or len(values) != len(probs):
            raise ConfigError("empirical service needs matching values and probabilities")
        if any(v <= 0.0 for v in values):
            raise ConfigError("empirical service times must be strictly positive")
        if any(p < 0.0 for p in probs):
            raise ConfigError("empirical probabilities must be non-negative")
        if abs(sum(probs) - 1.0) > PROB_SUM_TOL:
            raise ConfigError("empirical probabilities must sum to 1")
        mean = sum(p * v for p, v in zip(probs, values))
        second = sum(p * v * v for p, v in zip(probs, values))
        return cls("empirical", mean, second, values, probs)

    @property
    def variance_us2(self) -> float:
        return self.second_moment_us2 - self.mean_us**2

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n service times as a float64 array."""
        if self.kind == "deterministic":
            return np.full(n, self.mean_us)
        if self.kind == "exponential":
            return rng.exponential(self.mean_us, size=n)
        return rng.choice(np.asarray(self.values_us), size=n, p=np.asarray(self.probabilities))

    def to_json_dict(self) -> dict:
        if self.kind == "deterministic":
            return {"kind": "deterministic", "value_us": self.mean_us}
        if self.kind == "exponential":
            return {"kind": "exponential", "mean_us": self.mean_us}
        return {
            "kind": "empirical",
            "values_us": list(self.values_us),
            "probabilities": list(self.probabilities),
        }


@dataclass(frozen=True)
class SystemConfig:
    """One EPON upstream: N nodes polled in fixed order with guard gaps.

    `rates_per_us` holds the actual per-node arrival rates; they may
    differ from `subscribed_rate_per_us`, which is the per-node rate the
    window limit is provisioned for. `window_limit` of None means gated
    service (no cap on the packets cleared per visit).
    """

    n_onus: int
    guard_us: float
    service: ServiceTimeDist
    subscribed_rate_per_us: float
    rates_per_us: tuple[float, ...]
    window_limit: int | None = None
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.n_onus < 1:
            raise ConfigError("num_onus must be at least 1")
        if self.guard_us <= 0.0:
            raise ConfigError("guard_us must be strictly positive")
        if self.subscribed_rate_per_us < 0.0:
            raise ConfigError("subscribed_rate_pkts_per_ms must be non-negative")
        if len(self.rates_per_us) != self.n_onus:
            raise ConfigError(
                f"rate_pkts_per_ms must give one rate per node "
                f"({len(self.rates_per_us)} rates for {self.n_onus} nodes)"
            )
        if any(r < 0.0 for r in self.rates_per_us):
            raise ConfigError("rate_pkts_per_ms entries must be non-negative")
        if self.window_limit is not None and self.window_limit < 1:
            raise ConfigError("window_limit_pkts must be at least 1")
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigError("epsilon must lie strictly between 0 and 1")
        if not (EPSILON_SOFT_RANGE[0] <= self.epsilon <= EPSILON_SOFT_RANGE[1]):
            warnings.warn(
                f"epsilon={self.epsilon} is outside the usual range "
                f"[{EPSILON_SOFT_RANGE[0]}, {EPSILON_SOFT_RANGE[1]}]; "
                "the sizing bound may be loose there",
                stacklevel=2,
            )
        if self.rho_total >= 1.0:
            # Not an error at this level: the simulator can run an
            # overloaded system and report its growing queues. Analytic
            # entry points refuse with SaturationError, and the CLI
            # rejects such configs outright.
            warnings.warn(
                f"total offered load rho_E={self.rho_total:.6g} is at or "
                "beyond line capacity; no stationary regime exists",
                stacklevel=2,
            )

    @property
    def total_rate_per_us(self) -> float:
        return math.fsum(self.rates_per_us)

    @property
    def rho_total(self) -> float:
        """Total offered load rho_E = sum(lambda_i) * mean service time."""
        return self.total_rate_per_us * self.service.mean_us

    @property
    def is_homogeneous(self) -> bool:
        return all(r == self.rates_per_us[0] for r in self.rates_per_us)

    @property
    def rate_per_us(self) -> float:
        """Per-node arrival rate; only meaningful for homogeneous configs."""
        if not self.is_homogeneous:
            raise ModelError("per-node rate is undefined for heterogeneous configurations")
        return self.rates_per_us[0]

    def to_json_dict(self) -> dict:
        rates_ms = [r * 1000.0 for r in self.rates_per_us]
        if all(r == rates_ms[0] for r in rates_ms):
            rates_field = rates_ms[0]
        else:
            rates_field = rates_ms
        return {
            "num_onus": self.n_onus,
            "guard_us": self.guard_us,
            "service": self.service.to_json_dict(),
            "subscribed_rate_pkts_per_ms": self.subscribed_rate_per_us * 1000.0,
            "rate_pkts_per_ms": rates_field,
            "window_limit_pkts": self.window_limit,
            "epsilon": self.epsilon,
        }
