"""Command-line front end.

Subcommands: analyze, optimize, simulate, sweep, validate and
capture-demo. Configs are JSON documents with units encoded in the
field names (guard_us, rate_pkts_per_ms); rates are given in packets
per millisecond and converted to the internal packets-per-microsecond
convention on load.

Exit codes: 0 success, 2 configuration error, 3 saturated scenario
where a stationary answer was requested, 4 numerical failure, 5
validation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import dataclass

from .chain import analytic_report
from .config import DEFAULT_EPSILON, ServiceTimeDist, SystemConfig
from .errors import ConfigError, ConvergenceError, GatedLimError, ModelError, SaturationError
from .sim import SimReport, SimScenario, capture_scenario, run_simulation
from .sizing import classify_region, queue_moments, recommend_window, stable_rate, window_approx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SATURATION = 3
EXIT_NUMERICAL = 4
EXIT_VALIDATION = 5

PKTS_PER_MS = 1e-3  # one packet per millisecond, in packets per microsecond

SWEEP_HEADER = (
    "axis_value,rho_E,M,W_analytic_us,W_sim_us,W_sim_ci_us,"
    "sigmaB2_analytic,sigmaB2_sim,tail_prob_sim,region"
)
CAPTURE_HEADER = "rate2_pkts_per_ms,discipline,W1_us,W1_ci_us,W2_us,W2_ci_us"
VALIDATE_HEADER = "quantity,onu,analytic,simulated,rel_err_pct,tol_pct,status"
ANALYZE_HEADER = (
    "rho_E,rho,M,vbar_us,v2bar_us2,bbar_us,sigma_b2_us2,kbar,k2bar,"
    "mu_c_us,sigma_c2_us2,residual_us,queueing_us,vacations_us,"
    "m_pkts,n_pkts,nq_pkts,w_us"
)

SWEEP_AXES = (
    "rate_pkts_per_ms",
    "subscribed_rate_pkts_per_ms",
    "window_limit_pkts",
    "epsilon",
    "guard_us",
    "num_onus",
)

DEFAULT_W_TOL_PCT = 5.0
DEFAULT_SIGMA_TOL_PCT = 10.0
DEFAULT_SIM_CYCLES = 200_000
DEFAULT_CAPTURE_CYCLES = 300_000


def fmt(x) -> str:
    """Format one CSV cell: 9 significant digits, nan spelled out."""
    if x is None:
        return "nan"
    if isinstance(x, str):
        return x
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.9g}"


@dataclass(frozen=True)
class Axis:
    name: str
    start: float
    stop: float
    step: float

    def values(self) -> list[float]:
        out = []
        k = 0
        while True:
            v = self.start + k * self.step
            if v > self.stop + 1e-9 * self.step:
                break
            out.append(v)
            k += 1
        return out


def parse_axis(text: str) -> Axis:
    parts = text.split(":")
    if len(parts) != 4:
        raise ConfigError(f"axis must look like name:start:stop:step, got {text!r}")
    name = parts[0]
    try:
        start, stop, step = (float(p) for p in parts[1:])
    except ValueError as exc:
        raise ConfigError(f"axis bounds must be numbers: {exc}") from None
    if step <= 0.0:
        raise ConfigError("axis step must be strictly positive")
    return Axis(name, start, stop, step)


def _parse_service(doc: dict) -> ServiceTimeDist:
    try:
        kind = doc["kind"]
    except KeyError:
        raise ConfigError("service: missing field 'kind'") from None
    if kind == "deterministic":
        return ServiceTimeDist.deterministic(_field(doc, "service", "value_us"))
    if kind == "exponential":
        return ServiceTimeDist.exponential(_field(doc, "service", "mean_us"))
    if kind == "empirical":
        return ServiceTimeDist.empirical(
            _field(doc, "service", "values_us"),
            _field(doc, "service", "probabilities"),
        )
    raise ConfigError(
        f"service.kind must be deterministic, exponential or empirical, got {kind!r}"
    )


def _field(doc: dict, where: str, name: str):
    try:
        return doc[name]
    except KeyError:
        raise ConfigError(f"{where}: missing field {name!r}") from None


def parse_config(text: str) -> SystemConfig:
    """Parse and validate a JSON config document.

    Rates are read in packets per millisecond. A missing epsilon gets
    the documented default with a warning. Total offered load at or
    beyond capacity is rejected here, naming the offending field; the
    library types themselves leave that to the consumer.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")

    known = {
        "num_onus",
        "guard_us",
        "service",
        "subscribed_rate_pkts_per_ms",
        "rate_pkts_per_ms",
        "window_limit_pkts",
        "epsilon",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")

    n = _field(doc, "config", "num_onus")
    if not isinstance(n, int) or isinstance(n, bool):
        raise ConfigError("num_onus must be an integer")
    service_doc = _field(doc, "config", "service")
    if not isinstance(service_doc, dict):
        raise ConfigError("service must be a JSON object")
    service = _parse_service(service_doc)

    rate_doc = _field(doc, "config", "rate_pkts_per_ms")
    if isinstance(rate_doc, (int, float)) and not isinstance(rate_doc, bool):
        rates = (float(rate_doc) * PKTS_PER_MS,) * n
    elif isinstance(rate_doc, list):
        rates = tuple(float(r) * PKTS_PER_MS for r in rate_doc)
    else:
        raise ConfigError("rate_pkts_per_ms must be a number or a list of numbers")

    rho = math.fsum(rates) * service.mean_us
    if rho >= 1.0:
        raise ConfigError(
            f"rate_pkts_per_ms: total offered load rho_E={rho:.6g} must stay "
            "below 1 (the line cannot carry this traffic)"
        )

    if "epsilon" in doc:
        epsilon = doc["epsilon"]
    else:
        epsilon = DEFAULT_EPSILON
        warnings.warn(f"epsilon missing from config; using default {DEFAULT_EPSILON}")

    window_limit = doc.get("window_limit_pkts")
    if window_limit is not None and (not isinstance(window_limit, int) or isinstance(window_limit, bool)):
        raise ConfigError("window_limit_pkts must be an integer or null")

    return SystemConfig(
        n_onus=n,
        guard_us=float(_field(doc, "config", "guard_us")),
        service=service,
        subscribed_rate_per_us=float(_field(doc, "config", "subscribed_rate_pkts_per_ms")) * PKTS_PER_MS,
        rates_per_us=rates,
        window_limit=window_limit,
        epsilon=float(epsilon),
    )


def load_config(path: str) -> SystemConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _write_lines(path: str | None, lines: list[str]) -> None:
    body = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(body)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(body)


def _apply_axis(config: SystemConfig, name: str, value: float) -> SystemConfig:
    kw = {
        "n_onus": config.n_onus,
        "guard_us": config.guard_us,
        "service": config.service,
        "subscribed_rate_per_us": config.subscribed_rate_per_us,
        "rates_per_us": config.rates_per_us,
        "window_limit": config.window_limit,
        "epsilon": config.epsilon,
    }
    if name == "rate_pkts_per_ms":
        kw["rates_per_us"] = (value * PKTS_PER_MS,) * config.n_onus
    elif name == "subscribed_rate_pkts_per_ms":
        kw["subscribed_rate_per_us"] = value * PKTS_PER_MS
    elif name == "window_limit_pkts":
        kw["window_limit"] = _integral(value, "window_limit_pkts")
    elif name == "epsilon":
        kw["epsilon"] = value
    elif name == "guard_us":
        kw["guard_us"] = value
    elif name == "num_onus":
        n = _integral(value, "num_onus")
        kw["n_onus"] = n
        kw["rates_per_us"] = (config.rates_per_us[0],) * n
    else:
        raise ConfigError(f"unknown sweep axis {name!r}; choose from {', '.join(SWEEP_AXES)}")
    return SystemConfig(**kw)


def _integral(value: float, name: str) -> int:
    if abs(value - round(value)) > 1e-9:
        raise ConfigError(f"axis {name} takes integer values, got {value}")
    return int(round(value))


def _effective_window(config: SystemConfig) -> int | None:
    """The window limit a row runs with: the config's, else sized here."""
    if config.window_limit is not None:
        return config.window_limit
    model = queue_moments(
        config.n_onus, config.guard_us, config.service, config.subscribed_rate_per_us
    )
    return window_approx(model, config.epsilon)


def _region_of(config: SystemConfig, window_limit: int | None) -> str:
    lam_hat = stable_rate(
        math.inf if window_limit is None else window_limit,
        config.n_onus, config.service.mean_us, config.guard_us,
    )
    worst = max(config.rates_per_us)
    return classify_region(worst, config.subscribed_rate_per_us, lam_hat)


def _with_window(config: SystemConfig, window_limit: int | None) -> SystemConfig:
    if window_limit == config.window_limit:
        return config
    return SystemConfig(
        n_onus=config.n_onus,
        guard_us=config.guard_us,
        service=config.service,
        subscribed_rate_per_us=config.subscribed_rate_per_us,
        rates_per_us=config.rates_per_us,
        window_limit=window_limit,
        epsilon=config.epsilon,
    )


def cmd_analyze(args) -> int:
    config = load_config(args.config)
    rep = analytic_report(config)
    lines = [
        f"n_onus={rep.n_onus}",
        f"rate_pkts_per_ms={fmt(rep.lam_per_us / PKTS_PER_MS)}",
        f"rho={fmt(rep.rho)}",
        f"rho_E={fmt(rep.rho_total)}",
        "window_limit_pkts=" + ("gated" if rep.window_limit is None else str(rep.window_limit)),
        f"vbar_us={fmt(rep.vbar_us)}",
        f"v2bar_us2={fmt(rep.v2bar_us2)}",
        f"bbar_us={fmt(rep.bbar_us)}",
        f"sigma_b2_us2={fmt(rep.sigma_b2_us2)}",
        f"kbar_pkts={fmt(rep.kbar)}",
        f"k2bar_pkts2={fmt(rep.k2bar)}",
        f"mu_c_us={fmt(rep.mu_c_us)}",
        f"sigma_c2_us2={fmt(rep.sigma_c2_us2)}",
        f"residual_us={fmt(rep.wait.residual_us)}",
        f"queueing_us={fmt(rep.wait.queueing_us)}",
        f"vacations_us={fmt(rep.wait.vacations_us)}",
        f"m_pkts={fmt(rep.wait.m_inside)}",
        f"n_pkts={fmt(rep.wait.n_outside)}",
        f"nq_pkts={fmt(rep.wait.n_q)}",
        f"w_us={fmt(rep.w_us)}",
    ]
    if rep.q:
        lines.append("q=" + ",".join(fmt(p) for p in rep.q))
        lines.append(f"tail_mass={fmt(1.0 - math.fsum(rep.q))}")
    print("\n".join(lines))
    if args.output:
        row = ",".join(
            fmt(v)
            for v in (
                rep.rho_total, rep.rho,
                -1 if rep.window_limit is None else rep.window_limit,
                rep.vbar_us, rep.v2bar_us2, rep.bbar_us, rep.sigma_b2_us2,
                rep.kbar, rep.k2bar, rep.mu_c_us, rep.sigma_c2_us2,
                rep.wait.residual_us, rep.wait.queueing_us, rep.wait.vacations_us,
                rep.wait.m_inside, rep.wait.n_outside, rep.wait.n_q, rep.w_us,
            )
        )
        _write_lines(args.output, [ANALYZE_HEADER, row])
    return EXIT_OK


def cmd_optimize(args) -> int:
    config = load_config(args.config)
    rec = recommend_window(
        config.n_onus, config.guard_us, config.service,
        config.subscribed_rate_per_us, config.epsilon,
    )
    lines = [
        f"M1={rec.m1}",
        f"M_hat={rec.m_hat}",
        f"M_star={rec.m_star}",
        f"M2={rec.m2}",
        f"epsilon={fmt(rec.epsilon)}",
        f"lam_hat_pkts_per_ms={fmt(rec.lam_hat_per_us / PKTS_PER_MS)}",
        f"subscribed_rate_pkts_per_ms={fmt(rec.subscribed_rate_per_us / PKTS_PER_MS)}",
    ]
    print("\n".join(lines))
    if args.output:
        _write_lines(
            args.output,
            [
                "M1,M_hat,M_star,M2,epsilon,lam_hat_pkts_per_ms",
                ",".join(
                    fmt(v)
                    for v in (
                        rec.m1, rec.m_hat, rec.m_star, rec.m2, rec.epsilon,
                        rec.lam_hat_per_us / PKTS_PER_MS,
                    )
                ),
            ],
        )
    return EXIT_OK


def _report_lines(rep: SimReport) -> list[str]:
    lines = [
        f"n_onus={rep.n_onus}",
        f"horizon_cycles={rep.horizon_cycles}",
        f"warmup_cycles={rep.warmup_cycles}",
        f"replications={rep.replications}",
        f"seed={rep.seed}",
        f"rng={rep.rng_name}",
        f"low_confidence={str(rep.low_confidence).lower()}",
        f"measured_time_us={fmt(rep.measured_time_us)}",
        f"cycle_mean_us={fmt(rep.cycle_mean_us)}",
        f"cycle_var_us2={fmt(rep.cycle_var_us2)}",
        f"pooled_w_us={fmt(rep.pooled_wait_mean_us)}",
        f"pooled_w_ci_us={fmt(rep.pooled_wait_ci_us)}",
        f"served_total={int(rep.served.sum())}",
        f"arrived_total={int(rep.arrived.sum())}",
        f"remaining_total={int(rep.remaining.sum())}",
    ]
    for i in range(rep.n_onus):
        m = rep.window_limits[i]
        lines.append(
            f"onu{i}: M={'gated' if m is None else m}"
            f" w_us={fmt(float(rep.wait_mean_us[i]))}"
            f" w_ci_us={fmt(float(rep.wait_ci_us[i]))}"
            f" sigma_b2_us2={fmt(float(rep.sigma_b2_us2[i]))}"
            f" tail_prob={fmt(float(rep.tail_prob[i]))}"
            f" m_pkts={fmt(float(rep.m_inside[i]))}"
            f" n_pkts={fmt(float(rep.n_outside[i]))}"
            f" served={int(rep.served[i])}"
            f" arrived={int(rep.arrived[i])}"
            f" remaining={int(rep.remaining[i])}"
        )
    return lines


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    scenario = SimScenario(
        config=config,
        horizon_cycles=args.cycles,
        seed=args.seed,
        replications=args.replications,
    )
    rep = run_simulation(scenario)
    print("\n".join(_report_lines(rep)))
    if args.output:
        header = (
            "onu,M,w_us,w_ci_us,sigma_b2_us2,tail_prob,m_pkts,n_pkts,"
            "served,arrived,remaining"
        )
        rows = [header]
        for i in range(rep.n_onus):
            m = rep.window_limits[i]
            rows.append(
                ",".join(
                    fmt(v)
                    for v in (
                        i, -1 if m is None else m,
                        float(rep.wait_mean_us[i]), float(rep.wait_ci_us[i]),
                        float(rep.sigma_b2_us2[i]), float(rep.tail_prob[i]),
                        float(rep.m_inside[i]), float(rep.n_outside[i]),
                        int(rep.served[i]), int(rep.arrived[i]), int(rep.remaining[i]),
                    )
                )
            )
        _write_lines(args.output, rows)
    return EXIT_OK


def _sweep_row(config: SystemConfig, axis_value: float, cycles: int,
               seed: int, replications: int) -> str:
    window = _effective_window(config)
    run_cfg = _with_window(config, window)

    w_an = sb_an = math.nan
    try:
        rep = analytic_report(run_cfg)
        w_an = rep.w_us
        sb_an = rep.sigma_b2_us2
    except (SaturationError, ModelError):
        pass

    w_sim = w_ci = sb_sim = tail_sim = math.nan
    if cycles > 0:
        sim = run_simulation(
            SimScenario(config=run_cfg, horizon_cycles=cycles, seed=seed,
                        replications=replications)
        )
        w_sim = sim.pooled_wait_mean_us
        w_ci = sim.pooled_wait_ci_us
        sb_sim = float(sim.sigma_b2_us2.mean())
        tail_sim = float(sim.tail_prob.mean())

    return ",".join(
        fmt(v)
        for v in (
            axis_value, run_cfg.rho_total,
            -1 if window is None else window,
            w_an, w_sim, w_ci, sb_an, sb_sim, tail_sim,
            _region_of(run_cfg, window),
        )
    )


def cmd_sweep(args) -> int:
    if args.axis is None:
        raise ConfigError("sweep requires --axis name:start:stop:step")
    axis = parse_axis(args.axis)
    if axis.name not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis.name!r}; choose from {', '.join(SWEEP_AXES)}")
    base = load_config(args.config)
    rows = [SWEEP_HEADER]
    for value in axis.values():
        config = _apply_axis(base, axis.name, value)
        rows.append(_sweep_row(config, value, args.cycles, args.seed, args.replications))
    _write_lines(args.output, rows)
    return EXIT_OK


def cmd_validate(args) -> int:
    config = load_config(args.config)
    an = analytic_report(config)
    sim = run_simulation(
        SimScenario(config=config, horizon_cycles=args.cycles, seed=args.seed,
                    replications=args.replications)
    )
    w_tol = args.tolerance if args.tolerance is not None else DEFAULT_W_TOL_PCT
    s_tol = args.tolerance if args.tolerance is not None else DEFAULT_SIGMA_TOL_PCT

    rows = [VALIDATE_HEADER]
    failures = 0

    def add(quantity: str, onu, analytic: float, simulated: float, tol: float):
        nonlocal failures
        if analytic != 0.0:
            rel = abs(simulated - analytic) / abs(analytic) * 100.0
        else:
            rel = 0.0 if simulated == 0.0 else math.inf
        ok = rel <= tol
        if not ok:
            failures += 1
        rows.append(
            ",".join(
                fmt(v)
                for v in (quantity, onu, analytic, simulated, rel, tol,
                          "pass" if ok else "FAIL")
            )
        )

    add("w_us", "pooled", an.w_us, sim.pooled_wait_mean_us, w_tol)
    add("cycle_mean_us", "global", an.mu_c_us, sim.cycle_mean_us, w_tol)
    for i in range(config.n_onus):
        add("w_us", i, an.w_us, float(sim.wait_mean_us[i]), w_tol)
    for i in range(config.n_onus):
        add("sigma_b2_us2", i, an.sigma_b2_us2, float(sim.sigma_b2_us2[i]), s_tol)

    _write_lines(args.output, rows)
    if args.output:
        print(f"validate: {len(rows) - 1} rows, {failures} failures")
    return EXIT_OK if failures == 0 else EXIT_VALIDATION


def cmd_capture_demo(args) -> int:
    if args.axis is not None:
        axis = parse_axis(args.axis)
        if axis.name != "rate2_pkts_per_ms":
            raise ConfigError("capture-demo sweeps only rate2_pkts_per_ms")
    else:
        axis = Axis("rate2_pkts_per_ms", 300.0, 600.0, 50.0)

    rows = [CAPTURE_HEADER]
    for value in axis.values():
        for label, window in (("gated_limited_4", 4), ("gated", None)):
            scenario = capture_scenario(
                value * PKTS_PER_MS,
                window_limit=window,
                horizon_cycles=args.cycles,
                seed=args.seed,
                replications=args.replications,
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = run_simulation(scenario)
            rows.append(
                ",".join(
                    fmt(v)
                    for v in (
                        value, label,
                        float(rep.wait_mean_us[0]), float(rep.wait_ci_us[0]),
                        float(rep.wait_mean_us[1]), float(rep.wait_ci_us[1]),
                    )
                )
            )
    _write_lines(args.output, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatedlim",
        description="Waiting-time analysis, window sizing and simulation "
        "for gated-limited EPON polling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cycles_default):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--output", help="write CSV here instead of stdout")
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--replications", type=int, default=1)
        p.add_argument("--cycles", type=int, default=cycles_default,
                       help="simulated cycles including warmup")

    p = sub.add_parser("analyze", help="closed-form moments and mean wait")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("optimize", help="window sizing recommendation")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="run the polling simulator")
    common(p, DEFAULT_SIM_CYCLES)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="CSV of analytic and simulated columns over an axis")
    common(p, 0)
    p.add_argument("--axis", help="name:start:stop:step; cycles=0 skips simulation")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="analytic vs simulated table with tolerances")
    common(p, DEFAULT_SIM_CYCLES)
    p.add_argument("--tolerance", type=float,
                   help="override tolerance in percent for every row")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("capture-demo", help="two-node greed demo sweep")
    p.add_argument("--output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--cycles", type=int, default=DEFAULT_CAPTURE_CYCLES)
    p.add_argument("--axis", help="rate2_pkts_per_ms:start:stop:step")
    p.set_defaults(func=cmd_capture_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SaturationError as exc:
        print(f"saturated: {exc}", file=sys.stderr)
        return EXIT_SATURATION
    except (ConvergenceError, ModelError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GatedLimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main(argv=sys.argv[1:]))
