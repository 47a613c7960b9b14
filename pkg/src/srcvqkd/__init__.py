"""Self-referenced continuous-variable QKD: key-rate theory, session simulation, calibration.

Shot-noise units throughout: a vacuum quadrature has variance 1.
"""

__version__ = "0.1.0"

from .gaussian import (  # noqa: E402
    ChannelParams,
    CovMat4,
    PhaseStats,
    ProtocolParams,
    averaged_covariance,
    epr_covariance,
    excess_noise_chi,
    heterodyne_split_moments,
    phase_estimator_variance,
    pm_covariance,
)
from .keyrate import KeyRateInputs, KeyRateReport, key_rate_collective, key_rate_individual  # noqa: E402
from .simulation import SessionConfig, SessionRecord, estimate_covariance, run_session  # noqa: E402

__all__ = [
    "ChannelParams",
    "CovMat4",
    "KeyRateInputs",
    "KeyRateReport",
    "PhaseStats",
    "ProtocolParams",
    "SessionConfig",
    "SessionRecord",
    "averaged_covariance",
    "epr_covariance",
    "estimate_covariance",
    "excess_noise_chi",
    "heterodyne_split_moments",
    "key_rate_collective",
    "key_rate_individual",
    "phase_estimator_variance",
    "pm_covariance",
    "run_session",
]
