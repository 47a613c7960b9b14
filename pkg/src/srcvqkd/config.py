"""Flat ``key = value`` run configuration with dotted section prefixes.

Example::

    # comments start with '#'
    seed = 7
    channel.eta = 0.8
    protocol.V_R = 900
    sweep.ratios = 10, 20, 50

Lists are comma separated, ``inf`` is accepted for ``protocol.V_R``.
Unknown keys are rejected and every physical invariant is re-checked when
the typed parameter objects are built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError, ParameterDomainError
from .gaussian import ChannelParams, ProtocolParams
from .keyrate import DistanceSweep, TransmittanceSweep


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int(s: str) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError(f"not an integer: {s!r}")
    return int(f)


def _float(s: str) -> float:
    return float(s)


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _floats(s: str) -> tuple[float, ...]:
    items = [x.strip() for x in s.split(",") if x.strip()]
    return tuple(float(x) for x in items)


def _choice(*allowed):
    def conv(s: str) -> str:
        s = s.strip()
        if s not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}, got {s!r}")
        return s
    return conv


def _str(s: str) -> str:
    return s.strip()


# key -> (converter, default)
SCHEMA = {
    "title": (_str, ""),
    "seed": (_int, 0),
    "channel.T": (_float, 1.0),
    "channel.eta": (_float, 0.8),
    "channel.epsilon": (_float, 0.01),
    "channel.V_el": (_float, 0.01),
    "protocol.V_A": (_float, 34.0),
    "protocol.V_R": (_float, 900.0),
    "protocol.delta_R": (_int, 0),
    "protocol.beta": (_float, 0.95),
    "protocol.pulse_rate": (_float, 250e3),
    "protocol.f_theta": (_float, 0.0),
    "keyrate.xi_mode": (_choice("bound", "exact"), "bound"),
    "keyrate.xi": (_opt_float, None),
    "session.n_rounds": (_int, 24_500),
    "session.n_param_est": (_int, 2_000),
    "session.tomography": (_bool, True),
    "session.signal_q": (_float, 0.0),
    "session.signal_p": (_float, 0.0),
    "session.adc_clip": (_opt_float, None),
    "sweep.kind": (_choice("transmittance", "distance"), "transmittance"),
    "sweep.t_eff": (_floats, ()),
    "sweep.ratios": (_floats, (10, 20, 50, 100, 200, 500)),
    "sweep.include_conventional": (_bool, True),
    "sweep.km": (_floats, ()),
    "sweep.betas": (_floats, (0.85, 0.9, 0.95, 1.0)),
    "sweep.loss_db_per_km": (_float, 0.2),
    "demo.mode": (_choice("constant", "constellation"), "constant"),
    "demo.n_rounds": (_int, 24_500),
    "demo.signal_q": (_float, 5.0),
    "demo.signal_p": (_float, 0.0),
    "demo.grid_lo": (_float, -15.0),
    "demo.grid_hi": (_float, 15.0),
    "demo.grid_step": (_float, 5.0),
    "demo.pulses_per_tile": (_int, 1000),
    "calibration.degree": (_int, 3),
    "calibration.n": (_int, 10_000),
    "calibration.amp": (_float, 30.0),
    "calibration.noise_fraction": (_float, 0.02),
    "calibration.v_min": (_float, -3.5),
    "calibration.v_max": (_float, 3.5),
    "calibration.drift": (_choice("sine", "walk"), "sine"),
    "calibration.drift_amplitude": (_float, math.pi),
    "calibration.drift_cycles": (_float, 1.5),
    "calibration.drift_f_dt": (_float, 0.002),
    "calibration.true_coefficients": (_floats, (0.3, 0.6, 0.05, 0.02)),
}

BUNDLED = ("paper_sec4c", "paper_sec4c_sim", "fig3", "fig8", "const_demo", "constellation",
           "calib_synthetic")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into raw ``{key: string}``; syntax errors carry the line number."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = (value, f"{source}:{lineno}")
    return raw


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    source: str = "<defaults>"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls(source=source)
        for key, (value, where) in parse_text(text, source).items():
            cfg.set(key, value, where)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, name_or_path: str | None) -> "RunConfig":
        """Load a file path, or a bundled config by name; ``None`` gives defaults."""
        if name_or_path is None:
            return cls()
        p = Path(name_or_path)
        if p.is_file():
            return cls.from_text(p.read_text(), str(p))
        if name_or_path in BUNDLED:
            text = resources.files("srcvqkd").joinpath("configs", f"{name_or_path}.cfg").read_text()
            return cls.from_text(text, name_or_path)
        raise ConfigError(f"no config file or bundled config named {name_or_path!r}")

    def set(self, key: str, value, where: str = "<override>") -> None:
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        conv = SCHEMA[key][0]
        if isinstance(value, str):
            try:
                value = conv(value)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    def validate(self) -> None:
        """Build every typed object once so physical invariants fail early."""
        try:
            self.channel()
            self.protocol()
            if self["keyrate.xi_mode"] == "exact" and self["keyrate.xi"] is None:
                raise ConfigError(f"{self.source}: keyrate.xi_mode = exact needs keyrate.xi")
        except ParameterDomainError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None

    def channel(self) -> ChannelParams:
        v = self.values
        return ChannelParams(T=v["channel.T"], eta=v["channel.eta"],
                             epsilon=v["channel.epsilon"], V_el=v["channel.V_el"])

    def protocol(self) -> ProtocolParams:
        v = self.values
        return ProtocolParams(V_A=v["protocol.V_A"], V_R=v["protocol.V_R"],
                              delta_R=v["protocol.delta_R"], beta=v["protocol.beta"],
                              pulse_rate=v["protocol.pulse_rate"], f_theta=v["protocol.f_theta"])

    def transmittance_sweep(self) -> TransmittanceSweep:
        v = self.values
        return TransmittanceSweep(
            t_eff=v["sweep.t_eff"], V_A=v["protocol.V_A"], epsilon=v["channel.epsilon"],
            V_el=v["channel.V_el"], beta=v["protocol.beta"], delta_R=v["protocol.delta_R"],
            ratios=v["sweep.ratios"], include_conventional=v["sweep.include_conventional"],
        )

    def distance_sweep(self) -> DistanceSweep:
        v = self.values
        return DistanceSweep(
            km=v["sweep.km"], betas=v["sweep.betas"], V_A=v["protocol.V_A"], V_R=v["protocol.V_R"],
            delta_R=v["protocol.delta_R"], epsilon=v["channel.epsilon"], V_el=v["channel.V_el"],
            eta=v["channel.eta"], loss_db_per_km=v["sweep.loss_db_per_km"],
            pulse_rate=v["protocol.pulse_rate"],
        )

    def header_lines(self) -> list[str]:
        return [f"{k} = {_format_value(self.values[k])}" for k in sorted(self.values)]

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.values.items())}

