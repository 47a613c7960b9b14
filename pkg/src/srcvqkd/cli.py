"""Command-line front end.

Subcommands: ``keyrate``, ``sweep``, ``simulate``, ``phase-demo``, ``calibrate``.
Exit codes: 0 success, 2 configuration/usage error, 3 numerical-domain error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import calibrate, read_sweep_csv, synthesize_sweep, write_sweep_csv
from .config import RunConfig
from .errors import (
    ConfigError,
    EstimationError,
    FitError,
    NumericalDomainError,
    ParameterDomainError,
    StatisticsError,
)
from .keyrate import KeyRateInputs, distance_sweep, key_rate_collective, sweep_transmittance
from .phase import PhaseProcess
from .simulation import (
    COLUMNS_CONSTELLATION,
    SessionConfig,
    bob_compensated,
    constant_signal_demo,
    constellation_demo,
    covariance_zscores,
    grid_centers,
    run_session,
    theoretical_covariance,
    write_session,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
UNITS_LINE = "units: shot-noise units (vacuum quadrature variance = 1); amplitudes in sqrt(N0)"


# config sections echoed by each command
RELEVANT = {
    "keyrate": ("title", "channel.", "protocol.", "keyrate."),
    "sweep": ("title", "channel.", "protocol.", "sweep."),
    "simulate": ("title", "seed", "channel.", "protocol.", "session."),
    "phase-demo": ("title", "seed", "channel.", "protocol.", "demo."),
    "calibrate": ("title", "seed", "calibration."),
}


def _relevant(cmd: str, cfg: RunConfig) -> dict:
    return {k: v for k, v in cfg.to_dict().items() if k.startswith(RELEVANT[cmd])}


def _header(cmd: str, cfg: RunConfig) -> list[str]:
    keys = _relevant(cmd, cfg)
    return [f"srcvqkd {__version__} {cmd}", UNITS_LINE, f"config source: {cfg.source}"] + [
        "config " + line for line in cfg.header_lines() if line.split(" = ", 1)[0] in keys
    ]


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.10g}"


def _csv(cmd: str, cfg: RunConfig, columns, rows, extra_header=()) -> str:
    lines = ["# " + h for h in _header(cmd, cfg)] + ["# " + h for h in extra_header]
    lines.append(",".join(columns))
    lines += [",".join(_fmt(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def _json_doc(cmd: str, cfg: RunConfig, body: dict) -> str:
    doc = {"tool": "srcvqkd", "version": __version__, "command": cmd, "units": UNITS_LINE,
           "config": _relevant(cmd, cfg), **body}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# --- subcommands ---------------------------------------------------------------


def cmd_keyrate(cfg: RunConfig, args) -> str:
    xi = cfg["keyrate.xi"] if cfg["keyrate.xi_mode"] == "exact" else None
    kin = KeyRateInputs.from_params(cfg.protocol(), cfg.channel(), cfg["keyrate.xi_mode"], xi)
    rep = key_rate_collective(kin)
    body = {"report": rep.to_dict(),
            "rate_units": {"per_round": "bit/round", "per_pulse": "bit/pulse", "per_second": "bit/s"}}
    return _json_doc("keyrate", cfg, body)


def cmd_sweep(cfg: RunConfig, args) -> str:
    if cfg["sweep.kind"] == "transmittance":
        if not cfg["sweep.t_eff"]:
            raise ConfigError("sweep.t_eff is empty")
        table = sweep_transmittance(cfg.transmittance_sweep())
    else:
        if not cfg["sweep.km"]:
            raise ConfigError("sweep.km is empty")
        table = distance_sweep(cfg.distance_sweep())
    extra = [f"rate units: {table.meta['units']}", "rates clamped at 0 below termination"]
    return _csv("sweep", cfg, table.columns, table.rows, extra)


def _session_config(cfg: RunConfig) -> SessionConfig:
    return SessionConfig(
        protocol=cfg.protocol(), channel=cfg.channel(), n_rounds=cfg["session.n_rounds"],
        n_param_est=cfg["session.n_param_est"], tomography=cfg["session.tomography"],
        seed=cfg["seed"], signal_mean=(cfg["session.signal_q"], cfg["session.signal_p"]),
        adc_clip=cfg["session.adc_clip"],
    )


def _matrix_lines(name: str, m) -> list[str]:
    return [f"{name}:"] + ["  " + " ".join(f"{x:10.4f}" for x in row) for row in np.asarray(m)]


def cmd_simulate(cfg: RunConfig, args) -> str:
    rec = run_session(_session_config(cfg))
    if args.out:
        write_session(rec, args.out)
    s = rec.summary
    lines = _header("simulate", cfg)
    lines.append(f"rounds: {len(rec)}  discarded: {s.discarded}  covariance rounds: {s.n_covariance_rounds}")
    if s.phase_stats is not None:
        ps = s.phase_stats
        lines.append(f"phase error: cos_bar={ps.cos_bar:.6f} sin_bar={ps.sin_bar:.2e} "
                     f"xi={ps.xi:.6e} var={ps.V_thetahat:.6e} rad^2")
    if s.covariance is not None:
        theory = theoretical_covariance(rec)
        z = covariance_zscores(s.covariance, theory, s.n_covariance_rounds)
        lines += _matrix_lines("empirical covariance (A_Q, A_P, B_Q, B_P)", s.covariance.m)
        lines += _matrix_lines("theoretical pm covariance (session cos_bar)", theory.m)
        lines += _matrix_lines("z-scores", z)
        if cfg["session.signal_q"] or cfg["session.signal_p"]:
            lines.append("note: nonzero signal mean rotates with theta; the pm matrix assumes zero mean")
        lines.append(f"max |z| = {np.nanmax(np.abs(z)):.3f} (nan: entry has zero theoretical spread)")
    if cfg["protocol.V_A"] == 0.0 and s.n_covariance_rounds > 1:
        # constant signal: Bob de-rotates his outcomes with theta_hat
        zc = bob_compensated(rec)
        ch = cfg.channel()
        mean, var = zc.mean(axis=0), zc.var(axis=0, ddof=1)
        lines.append(f"constant signal, Bob-compensated mean: {mean[0]:.6f} {mean[1]:.6f} "
                     f"(expected {math.sqrt(ch.T_eff) * cfg['session.signal_q']:.6f} "
                     f"{math.sqrt(ch.T_eff) * cfg['session.signal_p']:.6f})")
        lines.append(f"constant signal, Bob-compensated variance: {var[0]:.6f} {var[1]:.6f} "
                     f"(noise T_eff*(1+chi) = {ch.T_eff * (1 + ch.chi):.6f})")
    if args.out:
        lines.append(f"session record written to {args.out}")
    return "\n".join(lines) + "\n"


def cmd_phase_demo(cfg: RunConfig, args) -> str:
    p, ch = cfg.protocol(), cfg.channel()
    if cfg["demo.mode"] == "constant":
        res = constant_signal_demo(p, ch, cfg["demo.n_rounds"],
                                   (cfg["demo.signal_q"], cfg["demo.signal_p"]), cfg["seed"])
        cols = ("round", "theta", "theta_hat", "y_Q", "y_P", "z_Q", "z_P")
        rows = [(i, res.theta[i], res.theta_hat[i], *res.y[i], *res.z[i]) for i in range(len(res.z))]
        m, v = res.compensated_mean, res.compensated_variance
        extra = [
            f"compensated mean: {m[0]:.6f} {m[1]:.6f}",
            f"compensated variance: {v[0]:.6f} {v[1]:.6f}",
            f"raw variance: {res.raw_variance[0]:.6f} {res.raw_variance[1]:.6f}",
            f"noise variance T_eff*(1+chi): {res.noise_variance:.6f}",
            f"expected variance incl. phase error: {res.expected_variance:.6f}",
        ]
        return _csv("phase-demo", cfg, cols, rows, extra)
    centres = grid_centers(cfg["demo.grid_lo"], cfg["demo.grid_hi"], cfg["demo.grid_step"])
    res = constellation_demo(centres, centres, cfg["demo.pulses_per_tile"], p, ch, cfg["seed"])
    extra = [f"average reconstructed variance: {res.average_variance:.6f}",
             f"average expected variance: {res.average_expected_variance:.6f}",
             f"noise variance T_eff*(1+chi): {res.noise_variance:.6f}"]
    return _csv("phase-demo", cfg, COLUMNS_CONSTELLATION, res.rows, extra)


def _synthetic_sweep(cfg: RunConfig):
    n = cfg["calibration.n"]
    amp = cfg["calibration.amp"]
    if cfg["calibration.drift"] == "sine":
        k = np.arange(n)
        drift = cfg["calibration.drift_amplitude"] * np.sin(2 * math.pi * cfg["calibration.drift_cycles"] * k / n)
    else:
        drift = PhaseProcess(cfg["calibration.drift_f_dt"], 1.0)
    return synthesize_sweep(cfg["calibration.true_coefficients"], drift, amp,
                            cfg["calibration.noise_fraction"] * amp, n, cfg["seed"],
                            (cfg["calibration.v_min"], cfg["calibration.v_max"]))


def cmd_calibrate(cfg: RunConfig, args) -> str:
    if args.input and args.synthesize:
        raise ConfigError("use either --input or --synthesize")
    body = {"fit_degree_is_default": cfg["calibration.degree"] == 3}
    if args.input:
        samples = read_sweep_csv(args.input)
        body["input"] = str(args.input)
    elif args.synthesize:
        samples = _synthetic_sweep(cfg)
        true = cfg["calibration.true_coefficients"]
        body["ground_truth"] = {"coefficients": list(true)}
        if args.write_sweep:
            write_sweep_csv(samples, args.write_sweep)
    else:
        raise ConfigError("calibrate needs --input CSV or --synthesize")
    curve = calibrate(samples, cfg["calibration.degree"])
    body["curve"] = curve.to_dict()
    if "ground_truth" in body and len(true) == curve.degree + 1:
        body["ground_truth"]["relative_error"] = [
            abs(c - t) / abs(t) if t else abs(c) for c, t in zip(curve.coefficients, true)
        ]
    return _json_doc("calibrate", cfg, body)


COMMANDS = {
    "keyrate": cmd_keyrate,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "phase-demo": cmd_phase_demo,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file or bundled name (e.g. paper_sec4c)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")

    parser = argparse.ArgumentParser(prog="srcvqkd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"srcvqkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    kr = sub.add_parser("keyrate", parents=[common], help="key rates at one parameter point")
    kr.add_argument("--beta", type=float)
    kr.add_argument("--xi-mode", choices=("bound", "exact"))
    kr.add_argument("--xi", type=float)

    sub.add_parser("sweep", parents=[common], help="transmittance or distance sweep as CSV")

    sim = sub.add_parser("simulate", parents=[common], help="Monte-Carlo session")
    sim.add_argument("--va", type=float, help="modulation variance V_A")
    sim.add_argument("--n-rounds", type=int)

    sub.add_parser("phase-demo", parents=[common], help="drift compensation demos")

    cal = sub.add_parser("calibrate", parents=[common], help="phase-EOM calibration fit")
    cal.add_argument("--input", help="sweep CSV: voltage,ref_I,ref_Q,mod_I,mod_Q")
    cal.add_argument("--synthesize", action="store_true", help="generate a synthetic sweep")
    cal.add_argument("--write-sweep", help="also store the synthetic sweep CSV here")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip(), "--set")
    if args.seed is not None:
        cfg.set("seed", args.seed)
    overrides = {"beta": "protocol.beta", "xi_mode": "keyrate.xi_mode", "xi": "keyrate.xi",
                 "va": "protocol.V_A", "n_rounds": "session.n_rounds"}
    for attr, key in overrides.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg.set(key, val)
    if getattr(args, "xi", None) is not None and getattr(args, "xi_mode", None) is None:
        cfg.set("keyrate.xi_mode", "exact")
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        text = COMMANDS[args.command](cfg, args)
    except (ConfigError, ParameterDomainError) as exc:
        print(f"srcvqkd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalDomainError, FitError, EstimationError, StatisticsError) as exc:
        print(f"srcvqkd: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = None if args.command == "simulate" else args.out
    _emit(text, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
