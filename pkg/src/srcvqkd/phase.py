"""Reference-frame drift, reference-pulse measurement and phase compensation.

Phases live on ``(-pi, pi]``; every arithmetic phase operation is followed by
:func:`wrap_phase`.  Functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, ParameterDomainError, StatisticsError
from .gaussian import ChannelParams, PhaseStats

REGIME_LIMIT = 0.05
MIN_PHASE_SAMPLES = 1000


class RegimeWarning(UserWarning):
    """The phase drifts too fast for the per-round constant-phase assumption."""


def wrap_phase(x):
    """Map angles onto ``(-pi, pi]``."""
    w = np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


def rotation(theta):
    """2x2 rotation matrix (or a stack of them for array ``theta``)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]]) if np.ndim(theta) == 0 else np.stack(
        [np.stack([c, -s], -1), np.stack([s, c], -1)], -2
    )


def rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class PhaseProcess:
    """Wrapped Gaussian random walk of the Alice/Bob frame offset.

    The step standard deviation is ``2*pi*f_theta*dt_round``.  The walk is
    only faithful to the protocol when ``f_theta*dt_round << 1``; products
    at or above :data:`REGIME_LIMIT` emit a :class:`RegimeWarning`.
    """

    f_theta: float
    dt_round: float
    model: str = "wrapped-random-walk"

    def __post_init__(self):
        if self.f_theta < 0 or self.dt_round <= 0:
            raise ParameterDomainError("need f_theta >= 0 and dt_round > 0")
        if self.model != "wrapped-random-walk":
            raise ParameterDomainError(f"unknown phase process model {self.model!r}")
        if not self.regime_ok:
            warnings.warn(
                f"f_theta*dt_round = {self.f_theta * self.dt_round:.3g} >= {REGIME_LIMIT}; "
                "phase is not constant within a round",
                RegimeWarning,
                stacklevel=3,
            )

    @property
    def step_sd(self) -> float:
        return 2.0 * math.pi * self.f_theta * self.dt_round

    @property
    def regime_ok(self) -> bool:
        return self.f_theta * self.dt_round < REGIME_LIMIT


def sample_phase_path(proc: PhaseProcess, n: int, seed=None, n_paths: int | None = None):
    """Sample ``n`` successive phases (one per round).

    The start is uniform on ``(-pi, pi]`` so the walk is stationary from the
    first round.  With ``n_paths`` an ``(n_paths, n)`` array of independent
    paths is returned instead.
    """
    if n < 1:
        raise ParameterDomainError("n must be >= 1")
    rng = rng_from(seed)
    shape = (n,) if n_paths is None else (n_paths, n)
    start = np.pi - 2.0 * np.pi * rng.random(shape[:-1] + (1,))
    steps = rng.normal(0.0, proc.step_sd, shape[:-1] + (n - 1,))
    path = np.concatenate([start, start + np.cumsum(steps, axis=-1)], axis=-1)
    return wrap_phase(path)


@dataclass(frozen=True)
class ReferenceMeasurement:
    """Bob's measured reference quadratures (units of sqrt(N0))."""

    q_BR: np.ndarray | float
    p_BR: np.ndarray | float
    mode: int

    def __post_init__(self):
        if not (np.all(np.isfinite(self.q_BR)) and np.all(np.isfinite(self.p_BR))):
            raise ParameterDomainError("reference quadratures must be finite")


@dataclass(frozen=True)
class PhaseEstimate:
    theta_hat: np.ndarray | float


def reference_noise_variance(ch: ChannelParams, delta_R: int) -> float:
    """Per-quadrature variance of the measured reference mean."""
    return ch.T_eff * (ch.chi + 1.0) + delta_R


def measure_reference(theta, ch: ChannelParams, V_R: float, delta_R: int, seed=None):
    """Simulate Bob's measurement of Alice's reference pulse at frame offset ``theta``.

    Alice's reference sits at ``(sqrt(V_R), 0)``.  The mean in Bob's frame is
    ``sqrt(T_eff*V_R)*(cos theta, sin theta)``; each quadrature carries
    Gaussian noise of variance ``T_eff*(chi+1) + delta_R``.
    """
    if not (V_R > 0 and math.isfinite(V_R)):
        raise ParameterDomainError("V_R must be finite and > 0")
    if delta_R not in (0, 1):
        raise ParameterDomainError("delta_R must be 0 or 1")
    rng = rng_from(seed)
    theta = np.asarray(theta, dtype=float)
    amp = math.sqrt(ch.T_eff * V_R)
    sd = math.sqrt(reference_noise_variance(ch, delta_R))
    q = amp * np.cos(theta) + rng.normal(0.0, sd, theta.shape)
    p = amp * np.sin(theta) + rng.normal(0.0, sd, theta.shape)
    if theta.ndim == 0:
        q, p = float(q), float(p)
    return ReferenceMeasurement(q, p, delta_R)


def estimate_phase(rm: ReferenceMeasurement) -> PhaseEstimate:
    """Full-quadrant estimate ``atan2(p_BR, q_BR)`` of the frame offset."""
    q = np.asarray(rm.q_BR, dtype=float)
    p = np.asarray(rm.p_BR, dtype=float)
    zero = (q == 0.0) & (p == 0.0)
    if np.any(zero):
        raise EstimationError(f"{int(np.sum(zero))} zero reference vector(s); phase undefined")
    return PhaseEstimate(wrap_phase(np.arctan2(p, q)))


def compensate(q_A, p_A, theta_hat, T_eff: float):
    """Alice's estimate of Bob's outcome: ``sqrt(T_eff) * R(theta_hat) @ (q_A, p_A)``."""
    if not 0.0 < T_eff <= 1.0:
        raise ParameterDomainError("T_eff must be in (0, 1]")
    c, s = np.cos(theta_hat), np.sin(theta_hat)
    g = math.sqrt(T_eff)
    qb = g * (c * np.asarray(q_A) - s * np.asarray(p_A))
    pb = g * (s * np.asarray(q_A) + c * np.asarray(p_A))
    if np.ndim(qb) == 0:
        return float(qb), float(pb)
    return qb, pb


def empirical_phase_stats(phi) -> PhaseStats:
    """Sample moments of the estimation error.

    ``V_thetahat`` is the unbiased variance of ``phi`` taken about its
    circular mean, so a distribution straddling ``+-pi`` is not inflated.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.size < MIN_PHASE_SAMPLES:
        raise StatisticsError(f"need >= {MIN_PHASE_SAMPLES} phase samples, got {phi.size}")
    cos_bar = float(np.mean(np.cos(phi)))
    sin_bar = float(np.mean(np.sin(phi)))
    centre = math.atan2(sin_bar, cos_bar)
    dev = wrap_phase(phi - centre)
    var = float(np.sum(dev**2) / (phi.size - 1))
    cos_bar = min(1.0, max(-1.0, cos_bar))
    return PhaseStats(cos_bar=cos_bar, sin_bar=sin_bar, xi=1.0 - cos_bar**2, V_thetahat=var)
