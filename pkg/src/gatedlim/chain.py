"""Self-consistent solution of the report-count chain under a window cap.

One node's report count l evolves between consecutive report instants as

    l' = max(l - M, 0) + a,

where a is the number of arrivals over one cycle. Arrivals are Poisson
over a cycle whose length is approximately Gaussian, so the per-cycle
arrival count has the probability generating function

    H(z) = exp[-lam*mu_C (1-z) + lam^2 sigma_C^2 (1-z)^2 / 2].

The stationary distribution of l has generating function
Q(z) = sum_{n<M} q_n (z^M - z^n) H(z) / (z^M - H(z)); the unknown
boundary masses q_0..q_{M-1} are pinned by the M-1 roots of
z^M = H(z) inside the unit disk plus one normalisation equation.

The cycle variance itself depends on the window-count moments, so the
whole thing is iterated to a fixed point: guess the second moment of
the cleared-count K, solve the chain, recompute the moment from the
solution, repeat.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .config import ServiceTimeDist, SystemConfig
from .errors import ConfigError, ConvergenceError, ModelError, SaturationError
from .formulas import (
    WaitingTime,
    busy_period_variance,
    mean_busy_period,
    mean_cycle,
    mean_waiting_time,
    vacation_mean,
    vacation_second_moment,
)
from .sizing import stable_rate

ROOT_TOL = 1e-12
ROOT_RESIDUAL_TOL = 1e-10
ROOT_MAX_ITER = 10_000
FIXED_POINT_TOL = 1e-8
FIXED_POINT_MAX_ITER = 500

# Past this size the cap practically never binds and the gated closed
# form is exact to double precision, so the O(M^2) root hunt is refused.
MAX_CHAIN_WINDOW = 512

_IMAG_TOL = 1e-9
_NEG_PROB_TOL = 1e-9


@dataclass(frozen=True)
class GeneratingFunctionParams:
    """Inputs that fix H(z) and the chain: per-node rate, cycle moments
    and the window cap."""

    lam_per_us: float
    mu_c_us: float
    sigma_c2_us2: float
    window_limit: int

    def __post_init__(self):
        if self.lam_per_us < 0.0:
            raise ConfigError("arrival rate must be non-negative")
        if self.mu_c_us <= 0.0:
            raise ConfigError("mean cycle must be strictly positive")
        if self.sigma_c2_us2 < 0.0:
            raise ConfigError("cycle variance must be non-negative")
        if self.window_limit < 1:
            raise ConfigError("window limit must be at least 1")


def arrival_pgf(params: GeneratingFunctionParams, z):
    """H(z), the PGF of the per-cycle arrival count. Accepts real or
    complex z and returns the matching type."""
    lam = params.lam_per_us
    one_minus = 1.0 - z
    g = -lam * params.mu_c_us * one_minus + 0.5 * (lam**2) * params.sigma_c2_us2 * one_minus**2
    if isinstance(z, complex):
        return cmath.exp(g)
    return math.exp(g)


def _g_over_m(params: GeneratingFunctionParams, z: complex) -> complex:
    lam = params.lam_per_us
    one_minus = 1.0 - z
    g = -lam * params.mu_c_us * one_minus + 0.5 * (lam**2) * params.sigma_c2_us2 * one_minus**2
    return g / params.window_limit


def find_unit_disk_roots(params: GeneratingFunctionParams, tol: float = ROOT_TOL) -> list[complex]:
    """The M-1 solutions of z^M = H(z) strictly inside the unit disk.

    Root m is the fixed point of z <- exp(2*pi*i*m/M) * H(z)^(1/M),
    iterated from the origin. Writing the M-th root as exp(g(z)/M)
    avoids branch cuts entirely: any fixed point of the map satisfies
    z^M = H(z) exactly. A half-step damped sweep is the fallback for
    slow oscillatory cases near the stability boundary.
    """
    m = params.window_limit
    if m == 1:
        return []
    if params.lam_per_us * params.mu_c_us == 0.0:
        raise ConfigError("the chain has no interior roots when nothing arrives")

    roots: list[complex] = []
    for idx in range(1, m):
        omega = cmath.exp(2j * math.pi * idx / m)
        z = 0j
        converged = False
        for _ in range(ROOT_MAX_ITER):
            z_next = omega * cmath.exp(_g_over_m(params, z))
            if abs(z_next - z) <= tol:
                z = z_next
                converged = True
                break
            z = z_next
        if not converged:
            for _ in range(ROOT_MAX_ITER):
                z_next = 0.5 * (z + omega * cmath.exp(_g_over_m(params, z)))
                if abs(z_next - z) <= tol:
                    z = z_next
                    converged = True
                    break
                z = z_next
        residual = abs(z**m - arrival_pgf(params, z))
        if not converged or residual > ROOT_RESIDUAL_TOL:
            raise ConvergenceError(
                f"root {idx}/{m - 1} of z^M = H(z) did not converge "
                f"(last z={z:.12g}, residual={residual:.3g})",
                residual=residual,
            )
        if abs(z) >= 1.0:
            raise ConvergenceError(
                f"root {idx}/{m - 1} landed outside the unit disk: |z|={abs(z):.12g}"
            )
        roots.append(z)

    for i in range(len(roots)):
        for j in range(i + 1, len(roots)):
            if abs(roots[i] - roots[j]) <= max(tol, 1e-11):
                raise ConvergenceError(
                    f"duplicate chain roots: index {i + 1} and {j + 1} coincide "
                    f"at z={roots[i]:.12g}"
                )
    return roots


def solve_boundary_probs(params: GeneratingFunctionParams, roots: list[complex]) -> np.ndarray:
    """Boundary masses q_0..q_{M-1} of the stationary report count.

    Each interior root z makes the numerator of Q vanish alongside the
    denominator, giving sum_n q_n (z^M - z^n) = 0; normalisation fixes
    the scale through the mean drain sum_n q_n (M - n) = M - lam*mu_C.
    """
    m = params.window_limit
    if len(roots) != m - 1:
        raise ConfigError(f"expected {m - 1} roots, got {len(roots)}")
    mean_arrivals = params.lam_per_us * params.mu_c_us
    if mean_arrivals >= m:
        raise SaturationError(
            f"chain is not positive recurrent: lam*mu_C={mean_arrivals:.6g} >= M={m}"
        )

    a = np.zeros((m, m), dtype=complex)
    b = np.zeros(m, dtype=complex)
    for r, z in enumerate(roots):
        zm = z**m
        for n in range(m):
            a[r, n] = zm - z**n
    a[m - 1, :] = [m - n for n in range(m)]
    b[m - 1] = m - mean_arrivals
    q = np.linalg.solve(a, b)

    worst_imag = float(np.max(np.abs(q.imag))) if m > 0 else 0.0
    if worst_imag > _IMAG_TOL:
        raise ConvergenceError(
            f"boundary masses came out complex (worst imaginary part {worst_imag:.3g})"
        )
    q_real = q.real.copy()
    if float(q_real.min()) < -_NEG_PROB_TOL:
        raise ModelError(
            f"boundary mass q_{int(q_real.argmin())} is negative ({q_real.min():.3g})"
        )
    np.clip(q_real, 0.0, 1.0, out=q_real)
    total = float(q_real.sum())
    if total > 1.0 + _NEG_PROB_TOL:
        raise ModelError(f"boundary masses sum to {total:.12g} > 1")
    return q_real


@dataclass(frozen=True)
class ChainSolution:
    """Converged chain: boundary masses, the roots that pinned them and
    the self-consistent window-count moments."""

    q: tuple[float, ...]
    roots: tuple[complex, ...]
    kbar: float
    k2bar: float
    sigma_b2_us2: float
    sigma_c2_us2: float
    mu_c_us: float
    iterations: int
    residual: float

    @property
    def tail_mass(self) -> float:
        """Stationary probability that a report meets or exceeds the cap."""
        return max(1.0 - math.fsum(self.q), 0.0)

    def busy_period_probs(self) -> tuple[float, ...]:
        """b_0..b_M: the cleared-count distribution. Below the cap a
        window clears exactly what was reported; at the cap it clears M."""
        return (*self.q, self.tail_mass)


def solve_chain(
    n_onus: int,
    guard_us: float,
    service: ServiceTimeDist,
    lam_per_us: float,
    window_limit: int,
    *,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = FIXED_POINT_MAX_ITER,
    root_tol: float = ROOT_TOL,
) -> ChainSolution:
    """Fixed point of the window-count second moment.

    Seeded at zero; each pass rebuilds H from the implied cycle
    variance, re-solves the boundary masses and reads the moment back
    from them. Damping kicks in only if the raw iteration oscillates.
    Transient negative variance estimates (possible right after the cold
    seed) are floored at zero when building H; the converged value is
    non-negative on its own.
    """
    if window_limit < 1:
        raise ConfigError("window limit must be at least 1")
    if window_limit > MAX_CHAIN_WINDOW:
        raise ModelError(
            f"window limit {window_limit} exceeds the chain solver cap "
            f"({MAX_CHAIN_WINDOW}); treat the system as gated instead"
        )
    total = n_onus * lam_per_us
    rho_total = total * service.mean_us
    mu_c = mean_cycle(n_onus, guard_us, rho_total)
    kbar = lam_per_us * mu_c
    if kbar >= window_limit:
        raise SaturationError(
            f"saturated: mean arrivals per cycle {kbar:.6g} >= window limit "
            f"{window_limit} (stable below {stable_rate(window_limit, n_onus, service.mean_us, guard_us):.6g} pkts/us per node)"
        )

    if lam_per_us == 0.0:
        q = np.zeros(window_limit)
        q[0] = 1.0
        return ChainSolution(
            q=tuple(q),
            roots=(),
            kbar=0.0,
            k2bar=0.0,
            sigma_b2_us2=0.0,
            sigma_c2_us2=0.0,
            mu_c_us=mu_c,
            iterations=0,
            residual=0.0,
        )

    k2 = 0.0
    trace: list[float] = []
    deltas: list[float] = []
    damped = False
    q = None
    roots: list[complex] = []
    for iteration in range(1, max_iter + 1):
        sigma_b2 = busy_period_variance_unchecked(service, kbar, k2)
        sigma_c2 = max(n_onus * sigma_b2, 0.0)
        params = GeneratingFunctionParams(lam_per_us, mu_c, sigma_c2, window_limit)
        roots = find_unit_disk_roots(params, root_tol)
        q = solve_boundary_probs(params, roots)
        below = float(np.sum(q))
        k2_new = float(np.sum(np.arange(window_limit) ** 2 * q)) + window_limit**2 * (
            1.0 - below
        )
        delta = k2_new - k2
        trace.append(k2_new)
        if abs(delta) <= tol:
            k2 = k2_new
            sigma_b2 = busy_period_variance(service, kbar, k2)
            return ChainSolution(
                q=tuple(float(x) for x in q),
                roots=tuple(roots),
                kbar=kbar,
                k2bar=k2,
                sigma_b2_us2=sigma_b2,
                sigma_c2_us2=n_onus * sigma_b2,
                mu_c_us=mu_c,
                iterations=iteration,
                residual=abs(delta),
            )
        deltas.append(delta)
        if not damped and len(deltas) >= 3:
            if deltas[-1] * deltas[-2] < 0.0 and deltas[-2] * deltas[-3] < 0.0:
                damped = True
        k2 = 0.5 * (k2 + k2_new) if damped else k2_new

    raise ConvergenceError(
        f"window moment iteration did not settle within {max_iter} passes "
        f"(last change {deltas[-1]:.3g})",
        trace=trace,
        residual=abs(deltas[-1]),
    )


def busy_period_variance_unchecked(service: ServiceTimeDist, kbar: float, k2bar: float) -> float:
    """Window-duration variance without the moment-ordering check; the
    fixed-point seed legitimately passes k2bar < kbar^2 through here."""
    var_k = k2bar - kbar * kbar
    return service.mean_us**2 * var_k + kbar * service.variance_us2


@dataclass(frozen=True)
class AnalyticReport:
    """All stationary quantities of one homogeneous operating point."""

    n_onus: int
    lam_per_us: float
    rho: float
    rho_total: float
    window_limit: int | None
    vbar_us: float
    v2bar_us2: float
    bbar_us: float
    sigma_b2_us2: float
    kbar: float
    k2bar: float
    mu_c_us: float
    sigma_c2_us2: float
    q: tuple[float, ...]
    wait: WaitingTime
    iterations: int
    residual: float

    @property
    def w_us(self) -> float:
        return self.wait.w_us


def analytic_report(config: SystemConfig) -> AnalyticReport:
    """Stationary analysis of a homogeneous configuration.

    Finite window limits go through the chain solver; a missing limit
    means gated service, whose window-count moments come from the
    wide-window closed form instead. Heterogeneous rate vectors have no
    analytic solution here and are refused; simulate those.
    """
    if not config.is_homogeneous:
        raise ModelError(
            "the analytic model needs identical per-node rates; "
            "use the simulator for heterogeneous scenarios"
        )
    lam = config.rate_per_us
    n = config.n_onus
    service = config.service
    rho_total = config.rho_total
    rho = lam * service.mean_us
    guard = config.guard_us

    vbar = vacation_mean(n, guard, rho_total)
    mu_c = mean_cycle(n, guard, rho_total)
    kbar = lam * mu_c

    if config.window_limit is None:
        from .sizing import regular_window_second_moment

        k2 = regular_window_second_moment(n * lam, guard, rho_total, n, service)
        q: tuple[float, ...] = ()
        sigma_b2 = busy_period_variance(service, kbar, k2)
        iterations = 0
        residual = 0.0
        effective_limit = math.inf
    else:
        sol = solve_chain(n, guard, service, lam, config.window_limit)
        k2 = sol.k2bar
        q = sol.q
        sigma_b2 = sol.sigma_b2_us2
        iterations = sol.iterations
        residual = sol.residual
        effective_limit = float(config.window_limit)

    v2bar = vacation_second_moment(vbar, n, sigma_b2)
    wait = mean_waiting_time(lam, service, vbar, v2bar, kbar, k2, effective_limit)
    return AnalyticReport(
        n_onus=n,
        lam_per_us=lam,
        rho=rho,
        rho_total=rho_total,
        window_limit=config.window_limit,
        vbar_us=vbar,
        v2bar_us2=v2bar,
        bbar_us=mean_busy_period(rho, vbar),
        sigma_b2_us2=sigma_b2,
        kbar=kbar,
        k2bar=k2,
        mu_c_us=mu_c,
        sigma_c2_us2=n * sigma_b2,
        q=q,
        wait=wait,
        iterations=iterations,
        residual=residual,
    )
