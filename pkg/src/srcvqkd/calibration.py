"""In-situ phase-EOM calibration with unmodulated reference pulses.

Each phase-modulated pulse is paired with a reference pulse that sees the
same drift phase.  The reference phase is subtracted from the modulated
pulse's phase, the result is unwrapped along the (monotone) voltage sweep,
and a polynomial voltage-to-phase map is fitted by least squares.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FitError, ParameterDomainError
from .phase import PhaseProcess, rng_from, sample_phase_path, wrap_phase

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("voltage", "ref_I", "ref_Q", "mod_I", "mod_Q")
DEFAULT_DEGREE = 3


@dataclass(frozen=True)
class SweepSamples:
    voltage: np.ndarray
    ref_iq: np.ndarray  # (n, 2)
    mod_iq: np.ndarray  # (n, 2)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.voltage, dtype=float)
        r = np.asarray(self.ref_iq, dtype=float).reshape(-1, 2)
        m = np.asarray(self.mod_iq, dtype=float).reshape(-1, 2)
        if not (v.shape[0] == r.shape[0] == m.shape[0]):
            raise ParameterDomainError("voltage, ref_iq and mod_iq lengths differ")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(r)) and np.all(np.isfinite(m))):
            raise ParameterDomainError("sweep samples must be finite")
        object.__setattr__(self, "voltage", v)
        object.__setattr__(self, "ref_iq", r)
        object.__setattr__(self, "mod_iq", m)

    def __len__(self):
        return self.voltage.shape[0]


@dataclass(frozen=True)
class CalibrationCurve:
    """Polynomial ``phase(v) = sum_k coefficients[k] * v**k`` (rad, volts)."""

    coefficients: tuple[float, ...]
    residual_rms: float
    domain: tuple[float, float]
    n_samples: int

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, v):
        return np.polynomial.polynomial.polyval(v, self.coefficients)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "coefficients": list(self.coefficients),
            "coefficient_units": [f"rad/V^{k}" for k in range(self.degree + 1)],
            "residual_rms_rad": self.residual_rms,
            "domain_V": list(self.domain),
            "n_samples": self.n_samples,
        }


def _as_poly(true_curve):
    if callable(true_curve):
        return true_curve
    coef = tuple(float(c) for c in true_curve)
    return lambda v: np.polynomial.polynomial.polyval(v, coef)


def synthesize_sweep(true_curve, drift, amp: float, noise_sd: float, n: int, seed=None,
                     v_range=(-3.5, 3.5)) -> SweepSamples:
    """Ground-truth voltage sweep corrupted by drift and detector noise.

    ``true_curve`` is a callable or increasing-order polynomial coefficients.
    ``drift`` is a :class:`PhaseProcess` or an explicit array of ``n`` phases.
    Draw order: drift path, then ref noise, then modulated-pulse noise.
    """
    if n < 2:
        raise ParameterDomainError("need n >= 2")
    if not v_range[1] > v_range[0]:
        raise ParameterDomainError("voltage grid must increase")
    rng = rng_from(seed)
    v = np.linspace(v_range[0], v_range[1], n)
    if isinstance(drift, PhaseProcess):
        theta = sample_phase_path(drift, n, rng)
    else:
        theta = np.asarray(drift, dtype=float)
        if theta.shape != (n,):
            raise ParameterDomainError("explicit drift must have one phase per sample")
    f = np.asarray(_as_poly(true_curve)(v), dtype=float)
    ref_noise = rng.normal(0.0, noise_sd, (n, 2))
    mod_noise = rng.normal(0.0, noise_sd, (n, 2))
    ref = amp * np.column_stack([np.cos(theta), np.sin(theta)]) + ref_noise
    mod = amp * np.column_stack([np.cos(theta + f), np.sin(theta + f)]) + mod_noise
    return SweepSamples(v, ref, mod, meta={"true_phase": f, "drift": theta})


def recover_phase(samples: SweepSamples):
    """Drift-compensated modulation phase per sample, unwrapped along the sweep.

    Returns ``(voltages, phases)`` for the usable samples; samples with a
    zero reference vector are dropped and logged.  The unwrapped branch is
    anchored on the first usable sample's principal value.
    """
    ref, mod = samples.ref_iq, samples.mod_iq
    zero = (ref[:, 0] == 0.0) & (ref[:, 1] == 0.0)
    if np.any(zero):
        log.warning("dropping %d sample(s) with zero reference", int(zero.sum()))
    keep = ~zero
    phi = wrap_phase(np.arctan2(mod[keep, 1], mod[keep, 0]) - np.arctan2(ref[keep, 1], ref[keep, 0]))
    order = np.argsort(samples.voltage[keep], kind="stable")
    v = samples.voltage[keep][order]
    return v, np.unwrap(np.atleast_1d(phi)[order])


def fit_curve(voltages, phases, degree: int = DEFAULT_DEGREE) -> CalibrationCurve:
    """Least-squares polynomial of the given degree through ``(voltage, phase)``."""
    v = np.asarray(voltages, dtype=float)
    y = np.asarray(phases, dtype=float)
    if degree < 0:
        raise ParameterDomainError("degree must be >= 0")
    if v.size < degree + 2:
        raise FitError(f"need >= {degree + 2} samples for a degree-{degree} fit, got {v.size}")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi and degree > 0:
        raise FitError("rank-deficient fit: all voltages identical")
    domain = [lo, hi] if hi > lo else [lo - 1.0, lo + 1.0]
    with np.errstate(all="ignore"):
        poly, (_, rank, _, _) = np.polynomial.Polynomial.fit(v, y, degree, domain=domain, full=True)
    if rank < degree + 1:
        raise FitError(f"rank-deficient fit (rank {rank} < {degree + 1})")
    resid = y - poly(v)
    raw = poly.convert().coef
    raw = np.concatenate([raw, np.zeros(degree + 1 - raw.size)])
    return CalibrationCurve(
        coefficients=tuple(float(c) for c in raw),
        residual_rms=float(math.sqrt(np.mean(resid**2))),
        domain=(lo, hi),
        n_samples=int(v.size),
    )


def calibrate(samples: SweepSamples, degree: int = DEFAULT_DEGREE) -> CalibrationCurve:
    v, phi = recover_phase(samples)
    return fit_curve(v, phi, degree)


def write_sweep_csv(samples: SweepSamples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for v, r, m in zip(samples.voltage, samples.ref_iq, samples.mod_iq):
            w.writerow([repr(float(x)) for x in (v, r[0], r[1], m[0], m[1])])


def read_sweep_csv(path) -> SweepSamples:
    """Load a sweep; malformed content raises :class:`ConfigError` naming the line."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SWEEP_COLUMNS:
            raise ConfigError(f"{path}:1: expected header {','.join(SWEEP_COLUMNS)}")
        for row in reader:
            lineno = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(SWEEP_COLUMNS):
                raise ConfigError(f"{path}:{lineno}: expected {len(SWEEP_COLUMNS)} fields, got {len(row)}")
            try:
                vals = [float(x) for x in row]
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric field in {row}") from None
            if not all(math.isfinite(x) for x in vals):
                raise ConfigError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if len(rows) < 2:
        raise ConfigError(f"{path}: need at least 2 samples")
    a = np.array(rows)
    return SweepSamples(a[:, 0], a[:, 1:3], a[:, 3:5])
