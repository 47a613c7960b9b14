"""Two-mode Gaussian phase-space machinery.

All variances and correlations are in shot-noise units (vacuum quadrature
variance = 1); quadrature amplitudes are in units of sqrt(N0).  Matrices use
the basis order ``(Q_A, P_A, Q_B, P_B)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterDomainError

SYMMETRY_TOL = 1e-12
POSITIVITY_TOL = 1e-9

SIGMA_Z = np.diag([1.0, -1.0])
IDENTITY2 = np.eye(2)
OMEGA2 = np.array(
    [[0.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -1.0, 0.0]]
)


@dataclass(frozen=True)
class ChannelParams:
    """Lossy, noisy channel followed by Bob's detector.

    Attributes
    ----------
    T : float
        Channel transmittance, ``0 < T <= 1``.
    eta : float
        Detector (homodyne) efficiency, ``0 < eta <= 1``.
    epsilon : float
        Channel excess noise referred to the input (SNU).
    V_el : float
        Electronic noise variance of the detector (SNU).
    """

    T: float = 1.0
    eta: float = 1.0
    epsilon: float = 0.0
    V_el: float = 0.0

    def __post_init__(self):
        for name in ("T", "eta", "epsilon", "V_el"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterDomainError(f"{name} must be finite")
        if not 0.0 < self.T <= 1.0:
            raise ParameterDomainError(f"transmittance T={self.T} not in (0, 1]")
        if not 0.0 < self.eta <= 1.0:
            raise ParameterDomainError(f"efficiency eta={self.eta} not in (0, 1]")
        if self.epsilon < 0.0:
            raise ParameterDomainError(f"excess noise epsilon={self.epsilon} < 0")
        if self.V_el < 0.0:
            raise ParameterDomainError(f"electronic noise V_el={self.V_el} < 0")

    @property
    def T_eff(self) -> float:
        return self.T * self.eta

    @property
    def chi(self) -> float:
        return excess_noise_chi(self)

    @classmethod
    def from_t_eff(cls, t_eff: float, epsilon: float = 0.0, V_el: float = 0.0) -> "ChannelParams":
        """Channel whose whole effective transmittance sits in ``T`` (``eta = 1``)."""
        return cls(T=t_eff, eta=1.0, epsilon=epsilon, V_el=V_el)


@dataclass(frozen=True)
class ProtocolParams:
    """Alice's modulation and reference-pulse settings.

    ``V_R`` may be ``math.inf`` to represent a classical (noise-free) phase
    reference.  ``V_A = 0`` is accepted for constant-signal demonstrations.
    """

    V_A: float
    V_R: float
    delta_R: int = 0
    beta: float = 0.95
    pulse_rate: float = 250e3
    f_theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.V_A) and self.V_A >= 0.0):
            raise ParameterDomainError(f"modulation variance V_A={self.V_A} must be >= 0")
        if not self.V_R > 0.0:
            raise ParameterDomainError(f"reference intensity V_R={self.V_R} must be > 0")
        if self.delta_R not in (0, 1):
            raise ParameterDomainError(f"delta_R={self.delta_R} must be 0 (twin) or 1 (single)")
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterDomainError(f"reconciliation efficiency beta={self.beta} not in [0, 1]")
        if not self.pulse_rate > 0.0:
            raise ParameterDomainError("pulse_rate must be > 0")
        if not self.f_theta >= 0.0:
            raise ParameterDomainError("f_theta must be >= 0")

    @property
    def V(self) -> float:
        """Variance of Alice's mode in the entanglement-based picture."""
        return self.V_A + 1.0

    @property
    def q_AR(self) -> float:
        return math.sqrt(self.V_R)

    @property
    def p_AR(self) -> float:
        return 0.0

    @property
    def pulses_per_round(self) -> int:
        # one signal pulse plus one heterodyned or two homodyned reference pulses
        return 2 if self.delta_R == 1 else 3

    @property
    def rounds_per_second(self) -> float:
        return self.pulse_rate / self.pulses_per_round

    @property
    def dt_round(self) -> float:
        return self.pulses_per_round / self.pulse_rate


@dataclass(frozen=True, eq=False)
class CovMat4:
    """Real symmetric 4x4 covariance matrix in the order (Q_A, P_A, Q_B, P_B).

    Only symmetry is enforced on construction.  Entanglement-based matrices
    from :func:`epr_covariance` and :func:`averaged_covariance` are also
    checked for the bona-fide condition; prepare-and-measure and empirical
    matrices are classical covariances and may be singular (``V_A = 0``).
    """

    m: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.m, dtype=float)
        if arr.shape != (4, 4):
            raise ParameterDomainError(f"covariance matrix must be 4x4, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterDomainError("covariance matrix has non-finite entries")
        if not self.is_symmetric_array(arr):
            raise ParameterDomainError("covariance matrix is not symmetric")
        arr.flags.writeable = False
        object.__setattr__(self, "m", arr)

    @staticmethod
    def is_symmetric_array(arr, tol=SYMMETRY_TOL) -> bool:
        scale = max(1.0, float(np.max(np.abs(arr))))
        return bool(np.max(np.abs(arr - arr.T)) <= tol * scale)

    def __getitem__(self, idx):
        return self.m[idx]

    def __eq__(self, other):
        return isinstance(other, CovMat4) and bool(np.array_equal(self.m, other.m))

    def __repr__(self):
        rows = "; ".join(" ".join(f"{x:.4f}" for x in row) for row in self.m)
        return f"CovMat4([{rows}])"

    @property
    def alice(self) -> np.ndarray:
        return self.m[:2, :2]

    @property
    def bob(self) -> np.ndarray:
        return self.m[2:, 2:]

    @property
    def cross(self) -> np.ndarray:
        return self.m[:2, 2:]

    def is_positive_definite(self, tol=POSITIVITY_TOL) -> bool:
        return bool(np.linalg.eigvalsh(self.m).min() > tol)

    def is_bona_fide(self, tol=POSITIVITY_TOL) -> bool:
        """Two-mode uncertainty principle ``m + i*Omega >= 0``."""
        eig = np.linalg.eigvalsh(self.m + 1j * OMEGA2)
        return bool(eig.min() >= -tol * max(1.0, float(np.max(np.abs(self.m)))))

    def rank(self, rtol=1e-10) -> int:
        s = np.linalg.svd(self.m, compute_uv=False)
        return int(np.sum(s > rtol * max(s.max(), 1e-300)))

    @property
    def rank_deficient(self) -> bool:
        return self.rank() < 4


@dataclass(frozen=True)
class PhaseStats:
    """Moments of the phase-estimation error ``phi = theta_hat - theta``.

    ``xi = 1 - cos_bar**2`` measures the loss of correlation; ``V_thetahat``
    is the estimator variance in rad^2.
    """

    cos_bar: float
    sin_bar: float
    xi: float
    V_thetahat: float

    def __post_init__(self):
        if not -1.0 <= self.cos_bar <= 1.0:
            raise ParameterDomainError(f"cos_bar={self.cos_bar} outside [-1, 1]")
        if not -1.0 <= self.sin_bar <= 1.0:
            raise ParameterDomainError(f"sin_bar={self.sin_bar} outside [-1, 1]")
        if self.cos_bar**2 + self.sin_bar**2 > 1.0 + 1e-12:
            raise ParameterDomainError("cos_bar, sin_bar are not moments of a distribution")
        if not 0.0 <= self.xi <= 1.0:
            raise ParameterDomainError(f"xi={self.xi} outside [0, 1]")
        if abs(self.xi - (1.0 - self.cos_bar**2)) > 1e-12:
            raise ParameterDomainError("xi must equal 1 - cos_bar**2")
        if self.V_thetahat < 0.0:
            raise ParameterDomainError("V_thetahat must be >= 0")

    @classmethod
    def from_estimator_variance(cls, v_thetahat: float) -> "PhaseStats":
        """Analytic stats with the conservative bound ``xi = V_thetahat``."""
        if not 0.0 <= v_thetahat <= 1.0:
            raise ParameterDomainError(f"V_thetahat={v_thetahat} must lie in [0, 1] to bound xi")
        cos_bar = math.sqrt(1.0 - v_thetahat)
        return cls(cos_bar=cos_bar, sin_bar=0.0, xi=1.0 - cos_bar**2, V_thetahat=v_thetahat)

    @classmethod
    def perfect(cls) -> "PhaseStats":
        return cls(cos_bar=1.0, sin_bar=0.0, xi=0.0, V_thetahat=0.0)


def excess_noise_chi(ch: ChannelParams) -> float:
    """Total input-referred noise: loss vacuum + electronic + excess."""
    t_eff = ch.T * ch.eta
    if t_eff <= 0.0:
        raise ParameterDomainError("effective transmittance must be > 0")
    return (1.0 - t_eff) / t_eff + ch.V_el / t_eff + ch.epsilon


def _check_v(V):
    if not (math.isfinite(V) and V >= 1.0):
        raise ParameterDomainError(f"mode variance V={V} must be >= 1")


def epr_covariance(V: float, ch: ChannelParams) -> CovMat4:
    """Covariance of the two-mode squeezed vacuum after the channel."""
    _check_v(V)
    t_eff, chi = ch.T_eff, ch.chi
    c = math.sqrt(t_eff * (V * V - 1.0))
    m = np.block(
        [[V * IDENTITY2, c * SIGMA_Z], [c * SIGMA_Z, t_eff * (V + chi) * IDENTITY2]]
    )
    return CovMat4(m)


def correlation_coefficient(g: CovMat4) -> float:
    """The ``C`` entry (Q_A, Q_B correlation) of an unaveraged EPR matrix."""
    return float(g.m[0, 2])


def averaged_covariance(g: CovMat4, ps: PhaseStats) -> CovMat4:
    """Average ``g`` over the reference-frame rotations.

    The off-diagonal block ``C*sigma_z`` becomes ``C*Phi`` with
    ``Phi = [[cos_bar, sin_bar], [sin_bar, -cos_bar]]``.
    """
    if not isinstance(ps, PhaseStats):
        raise ParameterDomainError("ps must be a PhaseStats")
    m = np.array(g.m)
    c = m[0, 2]
    if not (np.isclose(m[1, 3], -c, rtol=0, atol=1e-12 * max(1.0, abs(c)))
            and m[0, 3] == 0.0 and m[1, 2] == 0.0):
        raise ParameterDomainError("g must be an unaveraged EPR covariance (C*sigma_z block)")
    phi = np.array([[ps.cos_bar, ps.sin_bar], [ps.sin_bar, -ps.cos_bar]])
    m[:2, 2:] = c * phi
    m[2:, :2] = (c * phi).T
    out = CovMat4(m)
    return out


def pm_covariance(p: ProtocolParams, ch: ChannelParams, cos_bar: float) -> CovMat4:
    """Theoretical prepare-and-measure covariance of (compensated Alice, Bob)."""
    if not -1.0 <= cos_bar <= 1.0:
        raise ParameterDomainError(f"cos_bar={cos_bar} outside [-1, 1]")
    t_eff, chi = ch.T_eff, ch.chi
    off = math.sqrt(t_eff) * p.V_A * cos_bar
    m = np.block(
        [
            [p.V_A * IDENTITY2, off * IDENTITY2],
            [off * IDENTITY2, t_eff * (p.V_A + 1.0 + chi) * IDENTITY2],
        ]
    )
    return CovMat4(m)


def heterodyne_split_moments(g: CovMat4) -> tuple[float, float]:
    """``(<Q_A'^2>, <Q_A' Q_B>)`` after mixing mode A with vacuum on a 50:50 splitter."""
    return (g.m[0, 0] + 1.0) / 2.0, g.m[0, 2] / math.sqrt(2.0)


def conditional_variance_b_given_a(g: CovMat4) -> float:
    """Bob's Q variance conditioned on Alice's heterodyne output ``Q_A'``."""
    qa2, qaqb = heterodyne_split_moments(g)
    return float(g.m[2, 2] - qaqb**2 / qa2)


def phase_estimator_variance(ch: ChannelParams, V_R: float, delta_R: int) -> float:
    """Variance (rad^2) of the reference-pulse phase estimate.

    ``(chi + 1)/V_R + delta_R/(T*eta*V_R)``; the second term is the extra
    vacuum unit of a heterodyne measurement on a single reference pulse.
    """
    if not V_R > 0.0:
        raise ParameterDomainError(f"V_R={V_R} must be > 0")
    if delta_R not in (0, 1):
        raise ParameterDomainError(f"delta_R={delta_R} must be 0 or 1")
    if math.isinf(V_R):
        return 0.0
    return (ch.chi + 1.0) / V_R + delta_R / (ch.T_eff * V_R)


def analytic_phase_stats(ch: ChannelParams, V_R: float, delta_R: int) -> PhaseStats:
    return PhaseStats.from_estimator_variance(phase_estimator_variance(ch, V_R, delta_R))
