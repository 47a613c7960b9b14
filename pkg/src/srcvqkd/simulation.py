"""Monte-Carlo prepare-and-measure sessions.

Per round Alice draws ``(q_A, p_A) ~ N(mean, V_A)``; the frame offset
``theta`` follows a wrapped random walk; Bob homodynes the signal in one
random quadrature (both quadratures, via twin signal pulses, in
parameter-estimation rounds) and measures the reference to obtain
``theta_hat``.  All channel and detector noise is one Gaussian of variance
``T_eff*(chi+1)`` added at Bob's detector, so that
``Var(y) = T_eff*(V_A + 1 + chi)``.

Units: quadratures in sqrt(N0), variances in N0, phases in rad.
"""

from __future__ import annotations

import io
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InsufficientRoundsError, ParameterDomainError, StatisticsError
from .gaussian import ChannelParams, CovMat4, PhaseStats, ProtocolParams, pm_covariance
from .phase import (
    MIN_PHASE_SAMPLES,
    PhaseProcess,
    ReferenceMeasurement,
    compensate,
    empirical_phase_stats,
    estimate_phase,
    measure_reference,
    sample_phase_path,
    wrap_phase,
)

log = logging.getLogger(__name__)

MIN_COVARIANCE_ROUNDS = 500

# one independent stream per role; changing how one role consumes randomness
# leaves the others untouched
RNG_ROLES = {"phase": 0, "alice": 1, "basis": 2, "channel": 3, "reference": 4, "selection": 5}

BASIS_Q, BASIS_P, BASIS_QP = "Q", "P", "QP"


def role_rng(seed: int, role: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(RNG_ROLES[role],)))


@dataclass(frozen=True)
class SessionConfig:
    protocol: ProtocolParams
    channel: ChannelParams
    n_rounds: int = 24_500
    n_param_est: int = 2_000
    tomography: bool = True
    seed: int = 0
    signal_mean: tuple[float, float] = (0.0, 0.0)
    adc_clip: float | None = None

    def __post_init__(self):
        if self.n_rounds < 1 or self.n_param_est < 0:
            raise ParameterDomainError("need n_rounds >= 1 and n_param_est >= 0")
        if self.n_param_est > self.n_rounds:
            raise ParameterDomainError("n_param_est cannot exceed n_rounds")
        if self.seed < 0:
            raise ParameterDomainError("seed must be a non-negative integer")
        if self.adc_clip is not None and not self.adc_clip > 0:
            raise ParameterDomainError("adc_clip must be positive")
        object.__setattr__(self, "signal_mean", tuple(float(x) for x in self.signal_mean))

    @property
    def phase_process(self) -> PhaseProcess:
        return PhaseProcess(self.protocol.f_theta, self.protocol.dt_round)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["signal_mean"] = list(self.signal_mean)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        d = dict(d)
        d["protocol"] = ProtocolParams(**d["protocol"])
        d["channel"] = ChannelParams(**d["channel"])
        d["signal_mean"] = tuple(d.get("signal_mean", (0.0, 0.0)))
        return cls(**d)


@dataclass(frozen=True)
class Round:
    """One protocol round.

    ``y_Q``/``y_P`` are Bob's outcomes.  In a single-basis round only the
    one named by ``basis`` is observable; the other is a simulator-only
    oracle value.  ``a_Q``/``a_P`` are Alice's compensated estimates.
    """

    q_A: float
    p_A: float
    theta: float
    theta_hat: float
    q_BR: float
    p_BR: float
    basis: str
    param_est: bool
    discarded: bool
    y_Q: float
    y_P: float
    a_Q: float
    a_P: float

    @property
    def y_B(self):
        return {BASIS_Q: (self.y_Q,), BASIS_P: (self.y_P,), BASIS_QP: (self.y_Q, self.y_P)}[self.basis]

    @property
    def a_comp(self):
        return {BASIS_Q: (self.a_Q,), BASIS_P: (self.a_P,), BASIS_QP: (self.a_Q, self.a_P)}[self.basis]


ROUND_COLUMNS = tuple(Round.__dataclass_fields__)
FLOAT_COLUMNS = ("q_A", "p_A", "theta", "theta_hat", "q_BR", "p_BR", "y_Q", "y_P", "a_Q", "a_P")


@dataclass(frozen=True)
class SessionSummary:
    phase_stats: PhaseStats | None
    covariance: CovMat4 | None
    n_covariance_rounds: int
    discarded: int

    def to_dict(self) -> dict:
        return {
            "phase_stats": None if self.phase_stats is None else asdict(self.phase_stats),
            "covariance": None if self.covariance is None else self.covariance.m.tolist(),
            "n_covariance_rounds": self.n_covariance_rounds,
            "discarded": self.discarded,
        }


@dataclass(frozen=True, eq=False)
class SessionRecord:
    """Immutable columnar log of a session; ``summary`` is derived from the columns."""

    config: SessionConfig
    data: dict = field(repr=False)
    summary: SessionSummary = field(init=False)

    def __post_init__(self):
        data = {}
        n = self.config.n_rounds
        for name in ROUND_COLUMNS:
            arr = np.asarray(self.data[name])
            if arr.shape != (n,):
                raise ParameterDomainError(f"column {name} has shape {arr.shape}, expected ({n},)")
            arr = arr.copy()
            arr.flags.writeable = False
            data[name] = arr
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "summary", summarize(self))

    def __len__(self):
        return self.config.n_rounds

    def __getattr__(self, name):
        data = self.__dict__.get("data")
        if data is not None and name in data:
            return data[name]
        raise AttributeError(name)

    def __eq__(self, other):
        if not isinstance(other, SessionRecord) or self.config != other.config:
            return False
        return all(np.array_equal(self.data[c], other.data[c], equal_nan=c in FLOAT_COLUMNS)
                   for c in ROUND_COLUMNS)

    def round(self, i: int) -> Round:
        vals = {}
        for c in ROUND_COLUMNS:
            v = self.data[c][i]
            vals[c] = str(v) if c == "basis" else (bool(v) if c in ("param_est", "discarded") else float(v))
        return Round(**vals)

    @property
    def rounds(self):
        return (self.round(i) for i in range(len(self)))

    @property
    def valid(self) -> np.ndarray:
        return ~self.data["discarded"]

    @property
    def phi(self) -> np.ndarray:
        """Estimation error ``wrap(theta_hat - theta)`` over kept rounds."""
        v = self.valid
        return wrap_phase(self.data["theta_hat"][v] - self.data["theta"][v])

    def observable(self, quadrature: str) -> np.ndarray:
        """Mask of kept rounds in which Bob actually measured ``quadrature``."""
        b = self.data["basis"]
        return self.valid & ((b == quadrature) | (b == BASIS_QP))

    def tomography_mask(self) -> np.ndarray:
        return self.valid & (self.data["basis"] == BASIS_QP)


def simulate_rounds(q_A, p_A, theta, both, protocol: ProtocolParams, channel: ChannelParams,
                    seed: int, adc_clip: float | None = None) -> dict:
    """Bob's outcomes, reference estimates and Alice's compensation for given draws.

    ``both`` marks rounds in which both signal quadratures are measured.
    With ``V_R = inf`` the phase is known exactly and the reference columns are ``nan``.
    """
    n = len(q_A)
    t_eff, chi = channel.T_eff, channel.chi
    basis_bits = role_rng(seed, "basis").integers(0, 2, n)
    basis = np.where(both, BASIS_QP, np.where(basis_bits == 0, BASIS_Q, BASIS_P)).astype("<U2")

    noise = role_rng(seed, "channel").normal(0.0, math.sqrt(t_eff * (chi + 1.0)), (2, n))
    g = math.sqrt(t_eff)
    c, s = np.cos(theta), np.sin(theta)
    y_Q = g * (c * q_A - s * p_A) + noise[0]
    y_P = g * (s * q_A + c * p_A) + noise[1]
    if adc_clip is not None:
        y_Q = np.clip(y_Q, -adc_clip, adc_clip)
        y_P = np.clip(y_P, -adc_clip, adc_clip)

    if math.isinf(protocol.V_R):
        # classical reference: exact phase, nothing measured
        nan = np.full(n, np.nan)
        return dict(theta_hat=np.asarray(theta, dtype=float).copy(), q_BR=nan, p_BR=nan.copy(),
                    basis=basis, discarded=np.zeros(n, dtype=bool), y_Q=y_Q, y_P=y_P,
                    **dict(zip(("a_Q", "a_P"), map(np.asarray, compensate(q_A, p_A, theta, t_eff)))))
    ref = measure_reference(theta, channel, protocol.V_R, protocol.delta_R,
                            role_rng(seed, "reference"))
    q_BR, p_BR = np.asarray(ref.q_BR), np.asarray(ref.p_BR)
    discarded = (q_BR == 0.0) & (p_BR == 0.0)
    if np.any(discarded):
        log.warning("discarding %d round(s) with a zero reference vector", int(discarded.sum()))
    if np.all(discarded):
        raise StatisticsError("every round was discarded")
    theta_hat = np.full(n, np.nan)
    keep = ~discarded
    theta_hat[keep] = estimate_phase(ReferenceMeasurement(q_BR[keep], p_BR[keep], protocol.delta_R)).theta_hat
    a_Q, a_P = compensate(q_A, p_A, theta_hat, t_eff)
    return dict(theta_hat=theta_hat, q_BR=q_BR, p_BR=p_BR, basis=basis, discarded=discarded,
                y_Q=y_Q, y_P=y_P, a_Q=np.asarray(a_Q), a_P=np.asarray(a_P))


def run_session(cfg: SessionConfig) -> SessionRecord:
    """Run one block of the protocol; deterministic for a fixed ``cfg.seed``."""
    p, n = cfg.protocol, cfg.n_rounds
    theta = sample_phase_path(cfg.phase_process, n, role_rng(cfg.seed, "phase"))
    alice = role_rng(cfg.seed, "alice").normal(0.0, math.sqrt(p.V_A), (2, n))
    q_A = cfg.signal_mean[0] + alice[0]
    p_A = cfg.signal_mean[1] + alice[1]

    param_est = np.zeros(n, dtype=bool)
    if cfg.n_param_est:
        idx = role_rng(cfg.seed, "selection").choice(n, cfg.n_param_est, replace=False)
        param_est[idx] = True
    both = param_est if cfg.tomography else np.zeros(n, dtype=bool)

    out = simulate_rounds(q_A, p_A, theta, both, p, cfg.channel, cfg.seed, cfg.adc_clip)
    data = dict(q_A=q_A, p_A=p_A, theta=theta, param_est=param_est, **out)
    return SessionRecord(cfg, data)


def _comp_frame_data(rec: SessionRecord, mask: np.ndarray) -> np.ndarray:
    g = math.sqrt(rec.config.channel.T_eff)
    d = rec.data
    # Alice's values rotated into Bob's frame, without the transmittance factor
    return np.column_stack([d["a_Q"][mask] / g, d["a_P"][mask] / g, d["y_Q"][mask], d["y_P"][mask]])


def estimate_covariance(rec: SessionRecord, subset=None) -> CovMat4:
    """Unbiased empirical covariance in the layout of the prepare-and-measure matrix.

    ``subset`` is a boolean mask or index array; it defaults to all kept
    tomography rounds.  Every selected round must carry both quadratures.
    """
    tomo = rec.tomography_mask()
    if subset is None:
        mask = tomo
    else:
        mask = np.zeros(len(rec), dtype=bool)
        mask[np.asarray(subset)] = True
        if np.any(mask & ~tomo):
            raise InsufficientRoundsError("subset contains rounds without both quadratures")
    n = int(mask.sum())
    if n < MIN_COVARIANCE_ROUNDS:
        raise InsufficientRoundsError(f"need >= {MIN_COVARIANCE_ROUNDS} tomography rounds, got {n}")
    cov = CovMat4(np.cov(_comp_frame_data(rec, mask), rowvar=False, ddof=1))
    if cov.rank_deficient:
        warnings.warn("empirical covariance is rank deficient", RuntimeWarning, stacklevel=2)
    return cov


def covariance_standard_errors(theory: CovMat4, n: int) -> np.ndarray:
    """Gaussian-theory standard error of each sample-covariance entry."""
    s = theory.m
    d = np.diag(s)
    return np.sqrt((np.outer(d, d) + s**2) / (n - 1))


def covariance_zscores(emp: CovMat4, theory: CovMat4, n: int) -> np.ndarray:
    """Per-entry z-scores; entries with zero theoretical spread (``V_A = 0``) are ``nan``."""
    se = covariance_standard_errors(theory, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(se > 0, (emp.m - theory.m) / np.where(se > 0, se, 1.0), np.nan)


def theoretical_covariance(rec: SessionRecord, cos_bar: float | None = None) -> CovMat4:
    """pm matrix for the session's parameters; ``cos_bar`` defaults to the session's own."""
    if cos_bar is None:
        cos_bar = rec.summary.phase_stats.cos_bar
    return pm_covariance(rec.config.protocol, rec.config.channel, cos_bar)


def summarize(rec: SessionRecord) -> SessionSummary:
    phi = rec.phi
    stats = empirical_phase_stats(phi) if phi.size >= MIN_PHASE_SAMPLES else None
    n_cov = int(rec.tomography_mask().sum())
    cov = None
    if n_cov >= MIN_COVARIANCE_ROUNDS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cov = estimate_covariance(rec)
    return SessionSummary(stats, cov, n_cov, int(np.sum(rec.data["discarded"])))


def conditional_residual_variance(rec: SessionRecord) -> float:
    """Residual variance of Bob's outcome after regressing on Alice's compensated value.

    Pooled over both quadratures, observable outcomes only; the theoretical
    counterpart is ``T_eff*(chi + 1 + V_A*xi)``.
    """
    ys, xs = [], []
    for quad, ycol, acol in ((BASIS_Q, "y_Q", "a_Q"), (BASIS_P, "y_P", "a_P")):
        m = rec.observable(quad)
        ys.append(rec.data[ycol][m])
        xs.append(rec.data[acol][m])
    y, a = np.concatenate(ys), np.concatenate(xs)
    k = np.dot(y, a) / np.dot(a, a)
    r = y - k * a
    return float(np.var(r, ddof=1))


# --- record files ------------------------------------------------------------

RECORD_MAGIC = "# srcvqkd session record v1"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (str, np.str_)):
        return str(v)
    return repr(float(v))


def write_session(rec: SessionRecord, dest) -> None:
    """Write ``rec`` as a header block followed by one CSV line per round.

    Floats use ``repr`` so a round trip through :func:`read_session` is
    bit-exact.  For single-basis rounds the unmeasured ``y_*`` column is a
    simulator-only oracle value.
    """
    lines = [
        RECORD_MAGIC,
        f"# tool_version: {__version__}",
        "# units: quadratures in sqrt(N0) (vacuum variance = 1); phases in rad on (-pi, pi]",
        "# note: in rounds with basis Q (P) the y_P (y_Q) column is not observable by Bob",
        "# config: " + json.dumps(rec.config.to_dict(), sort_keys=True),
        "# summary: " + json.dumps(rec.summary.to_dict(), sort_keys=True),
        ",".join(("index",) + ROUND_COLUMNS),
    ]
    cols = [rec.data[c] for c in ROUND_COLUMNS]
    for i in range(len(rec)):
        lines.append(",".join([str(i)] + [_fmt(col[i]) for col in cols]))
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text)
    else:
        dest.write(text)


def session_to_text(rec: SessionRecord) -> str:
    buf = io.StringIO()
    write_session(rec, buf)
    return buf.getvalue()


def read_session(src) -> SessionRecord:
    text = Path(src).read_text() if isinstance(src, (str, Path)) else src.read()
    lines = text.splitlines()
    if not lines or lines[0] != RECORD_MAGIC:
        raise ParameterDomainError("not a session record file")
    config = None
    body_start = None
    for j, line in enumerate(lines):
        if line.startswith("# config: "):
            config = SessionConfig.from_dict(json.loads(line[len("# config: "):]))
        elif not line.startswith("#"):
            body_start = j
            break
    if config is None or body_start is None:
        raise ParameterDomainError("session record header incomplete")
    header = lines[body_start].split(",")
    if tuple(header) != ("index",) + ROUND_COLUMNS:
        raise ParameterDomainError(f"unexpected column order {header}")
    rows = [ln.split(",") for ln in lines[body_start + 1:]]
    if len(rows) != config.n_rounds:
        raise ParameterDomainError(f"expected {config.n_rounds} rounds, found {len(rows)}")
    data = {}
    for k, name in enumerate(ROUND_COLUMNS, start=1):
        raw = [r[k] for r in rows]
        if name == "basis":
            data[name] = np.array(raw, dtype="<U2")
        elif name in ("param_est", "discarded"):
            data[name] = np.array([x == "1" for x in raw])
        else:
            data[name] = np.array([float(x) for x in raw])
    return SessionRecord(config, data)


# --- demonstrations ----------------------------------------------------------


@dataclass
class ConstantSignalResult:
    """Bob-side compensation of a constant signal, ``z = R(-theta_hat) y``."""

    signal: tuple[float, float]
    theta: np.ndarray
    theta_hat: np.ndarray
    y: np.ndarray
    z: np.ndarray
    noise_variance: float
    expected_variance: float

    @property
    def raw_variance(self) -> np.ndarray:
        return np.var(self.y, axis=0, ddof=1)

    @property
    def compensated_mean(self) -> np.ndarray:
        return self.z.mean(axis=0)

    @property
    def compensated_variance(self) -> np.ndarray:
        return np.var(self.z, axis=0, ddof=1)


def constant_signal_demo(protocol: ProtocolParams, channel: ChannelParams, n_rounds: int,
                         signal=(5.0, 0.0), seed: int = 0) -> ConstantSignalResult:
    """Drift tracking with a fixed coherent signal measured in both quadratures.

    ``noise_variance`` is ``T_eff*(1+chi)``; ``expected_variance`` adds the
    spread that the residual phase error gives a displaced signal,
    ``T_eff*|signal|^2*xi/2`` per quadrature with the analytic ``xi``.
    """
    p = ProtocolParams(V_A=0.0, V_R=protocol.V_R, delta_R=protocol.delta_R, beta=protocol.beta,
                       pulse_rate=protocol.pulse_rate, f_theta=protocol.f_theta)
    cfg = SessionConfig(p, channel, n_rounds=n_rounds, n_param_est=n_rounds, tomography=True,
                        seed=seed, signal_mean=tuple(signal))
    rec = run_session(cfg)
    v = rec.valid
    th = rec.data["theta_hat"][v]
    y = np.column_stack([rec.data["y_Q"][v], rec.data["y_P"][v]])
    z = bob_compensated(rec)
    t_eff = channel.T_eff
    noise = t_eff * (1.0 + channel.chi)
    xi = _analytic_xi(channel, protocol)
    amp2 = float(signal[0] ** 2 + signal[1] ** 2)
    return ConstantSignalResult(
        signal=tuple(signal), theta=rec.data["theta"][v], theta_hat=th, y=y, z=z,
        noise_variance=noise, expected_variance=noise + t_eff * amp2 * xi / 2.0,
    )


def bob_compensated(rec: SessionRecord) -> np.ndarray:
    """Bob's outcomes rotated back by the estimated phase, ``R(-theta_hat) y``, for kept
    tomography rounds; shape ``(n, 2)``."""
    m = rec.tomography_mask()
    th = rec.data["theta_hat"][m]
    yq, yp = rec.data["y_Q"][m], rec.data["y_P"][m]
    c, s = np.cos(th), np.sin(th)
    return np.column_stack([c * yq + s * yp, -s * yq + c * yp])


def _analytic_xi(channel, protocol) -> float:
    if math.isinf(protocol.V_R):
        return 0.0
    return min(1.0, (channel.chi + 1.0) / protocol.V_R
               + protocol.delta_R / (channel.T_eff * protocol.V_R))


def grid_centers(lo: float = -15.0, hi: float = 15.0, step: float = 5.0) -> np.ndarray:
    k = int(round((hi - lo) / step))
    return lo + step * np.arange(k + 1)


COLUMNS_CONSTELLATION = (
    "tile_q", "tile_p", "n", "mean_q", "mean_p", "var_q", "var_p",
    "expected_mean_q", "expected_mean_p", "expected_var",
)


@dataclass
class ConstellationResult:
    rows: list[tuple]
    noise_variance: float

    columns = COLUMNS_CONSTELLATION

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    @property
    def average_variance(self) -> float:
        return float(np.mean((self.column("var_q") + self.column("var_p")) / 2.0))

    @property
    def average_expected_variance(self) -> float:
        return float(np.mean(self.column("expected_var")))


def constellation_demo(centers_q, centers_p, pulses_per_tile: int, protocol: ProtocolParams,
                       channel: ChannelParams, seed: int = 0) -> ConstellationResult:
    """Reconstruct a square grid of constant signals sent tile by tile.

    Each tile gets ``pulses_per_tile`` identical signal pulses sent as twin
    pairs, giving ``pulses_per_tile // 2`` points measured in both
    quadratures.  Reconstruction is Bob-side, ``z = R(-theta_hat) y``, so
    tile means estimate ``sqrt(T_eff) * centre``.
    """
    per = pulses_per_tile // 2
    if per < 2:
        raise ParameterDomainError("need at least 4 pulses per tile")
    tiles = [(float(cq), float(cp)) for cp in centers_p for cq in centers_q]
    n = per * len(tiles)
    q_A = np.repeat([t[0] for t in tiles], per)
    p_A = np.repeat([t[1] for t in tiles], per)
    proc = PhaseProcess(protocol.f_theta, protocol.dt_round)
    theta = sample_phase_path(proc, n, role_rng(seed, "phase"))
    out = simulate_rounds(q_A, p_A, theta, np.ones(n, dtype=bool), protocol, channel, seed)
    th = out["theta_hat"]
    c, s = np.cos(th), np.sin(th)
    zq = c * out["y_Q"] + s * out["y_P"]
    zp = -s * out["y_Q"] + c * out["y_P"]
    t_eff = channel.T_eff
    noise = t_eff * (1.0 + channel.chi)
    xi = _analytic_xi(channel, protocol)
    rows = []
    for k, (cq, cp) in enumerate(tiles):
        sl = slice(k * per, (k + 1) * per)
        keep = ~out["discarded"][sl]
        a, b = zq[sl][keep], zp[sl][keep]
        rows.append((
            cq, cp, int(keep.sum()), float(a.mean()), float(b.mean()),
            float(np.var(a, ddof=1)), float(np.var(b, ddof=1)),
            math.sqrt(t_eff) * cq, math.sqrt(t_eff) * cp,
            noise + t_eff * (cq * cq + cp * cp) * xi / 2.0,
        ))
    return ConstellationResult(rows, noise)
