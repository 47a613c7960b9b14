"""Asymptotic reverse-reconciliation key rates for individual and collective attacks.

Rates are in bits per round unless a name says otherwise.  ``xi_mode``
selects how the phase-error penalty enters:

``"bound"``
    ``xi`` is replaced by the estimator variance computed from ``V_R`` and
    ``delta_R`` (conservative, tight for a sharply peaked error law).
``"exact"``
    ``xi`` is taken as given, e.g. measured in a simulated session.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import bisect

from .errors import NumericalDomainError, ParameterDomainError
from .gaussian import ChannelParams, ProtocolParams

EIGEN_TOL = 1e-9
TERMINATION_XTOL = 1e-5


@dataclass(frozen=True)
class KeyRateInputs:
    V: float
    chi: float
    T_eff: float
    V_R: float = math.inf
    delta_R: int = 0
    beta: float = 0.95
    rounds_per_second: float = 250e3 / 3
    xi: float | None = None
    xi_mode: str = "bound"

    def __post_init__(self):
        if not (math.isfinite(self.V) and self.V >= 1.0):
            raise ParameterDomainError(f"V={self.V} must be >= 1")
        if not (math.isfinite(self.chi) and self.chi >= 0.0):
            raise ParameterDomainError(f"chi={self.chi} must be >= 0")
        if not 0.0 < self.T_eff <= 1.0:
            raise ParameterDomainError(f"T_eff={self.T_eff} not in (0, 1]")
        if not self.V_R > 0:
            raise ParameterDomainError("V_R must be > 0")
        if self.delta_R not in (0, 1):
            raise ParameterDomainError("delta_R must be 0 or 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterDomainError(f"beta={self.beta} not in [0, 1]")
        if self.xi_mode not in ("bound", "exact"):
            raise ParameterDomainError(f"unknown xi_mode {self.xi_mode!r}")
        if self.xi_mode == "exact":
            if self.xi is None or not 0.0 <= self.xi <= 1.0:
                raise ParameterDomainError("exact xi_mode needs 0 <= xi <= 1")
        elif self.xi is not None:
            raise ParameterDomainError("xi is only accepted with xi_mode='exact'")

    @classmethod
    def from_params(cls, protocol: ProtocolParams, channel: ChannelParams,
                    xi_mode: str = "bound", xi: float | None = None) -> "KeyRateInputs":
        return cls(
            V=protocol.V,
            chi=channel.chi,
            T_eff=channel.T_eff,
            V_R=protocol.V_R,
            delta_R=protocol.delta_R,
            beta=protocol.beta,
            rounds_per_second=protocol.rounds_per_second,
            xi=xi,
            xi_mode=xi_mode,
        )

    @property
    def pulses_per_round(self) -> int:
        return 2 if self.delta_R == 1 else 3

    @property
    def v_thetahat(self) -> float:
        if math.isinf(self.V_R):
            return 0.0
        return (self.chi + 1.0) / self.V_R + self.delta_R / (self.T_eff * self.V_R)

    @property
    def effective_xi(self) -> float:
        # xi = 1 - cos_bar**2 never exceeds 1, whatever the estimator variance
        return self.xi if self.xi_mode == "exact" else min(1.0, self.v_thetahat)

    def replace(self, **kw) -> "KeyRateInputs":
        d = asdict(self)
        d.update(kw)
        return KeyRateInputs(**d)


def _half_log2(ratio: float) -> float:
    if not ratio > 0.0:
        return 0.0
    return 0.5 * math.log2(ratio)


def mutual_info_AB(kin: KeyRateInputs) -> float:
    """Alice-Bob mutual information (bits/round), clipped at zero."""
    V, chi = kin.V, kin.chi
    if kin.xi_mode == "exact" or kin.v_thetahat > 1.0:
        denom = chi + 1.0 + (V - 1.0) * kin.effective_xi
    elif math.isinf(kin.V_R):
        denom = chi + 1.0
    else:
        denom = (chi + 1.0) * (1.0 + (V - 1.0) / kin.V_R) + (
            (V - 1.0) * kin.delta_R / (kin.T_eff * kin.V_R)
        )
    return max(0.0, _half_log2((V + chi) / denom))


def mutual_info_AB_exact(V: float, chi: float, xi: float) -> float:
    return max(0.0, _half_log2((V + chi) / (chi + 1.0 + (V - 1.0) * xi)))


def eve_info_individual(kin: KeyRateInputs) -> float:
    """Upper bound on Eve's Shannon information on Bob's data (bits/round)."""
    V, chi, t = kin.V, kin.chi, kin.T_eff
    xi = kin.effective_xi
    arg = t * t * (V + chi) / V * (V * chi + 1.0 + (V * V - 1.0) * xi)
    return max(0.0, _half_log2(arg))


def symplectic_eigenvalues(V: float, T_eff: float, chi: float, xi: float):
    """``(lambda1, lambda2, lambda3)`` for the Holevo bound.

    ``lambda1, lambda2`` belong to the averaged two-mode state and
    ``lambda3`` to Alice's mode conditioned on Bob's homodyne outcome.
    ``lambda2`` is taken from ``lambda1*lambda2 = D`` to avoid cancellation.
    """
    if V < 1.0 or not 0.0 < T_eff <= 1.0 or chi < 0.0 or not 0.0 <= xi <= 1.0:
        raise ParameterDomainError("symplectic_eigenvalues: inputs out of domain")
    k = V * chi + 1.0 + (V * V - 1.0) * xi
    delta = V * V * (1.0 - 2.0 * T_eff) + T_eff**2 * (V + chi) ** 2 + 2.0 * T_eff * (
        1.0 + (V * V - 1.0) * xi
    )
    d = T_eff * k
    # delta**2 - 4*d**2 factors as (u - V)**2 * (delta + 2*d) with u = T_eff*(V + chi);
    # using the factor form keeps the degenerate case lambda1 = lambda2 exact
    plus = delta + 2.0 * d
    if plus < 0.0:
        if plus < -EIGEN_TOL * max(1.0, abs(delta)):
            raise NumericalDomainError(f"negative discriminant factor {plus:.3g} in symplectic spectrum")
        plus = 0.0
    root = abs(T_eff * (V + chi) - V) * math.sqrt(plus)
    big = 0.5 * (delta + root)
    if big <= 0.0:
        raise NumericalDomainError("non-positive symplectic eigenvalue")
    lam1 = math.sqrt(big)
    lam2 = d / lam1
    lam3 = math.sqrt(V * k / (V + chi))
    for lam in (lam1, lam2, lam3):
        if lam < 1.0 - EIGEN_TOL:
            raise NumericalDomainError(f"symplectic eigenvalue {lam:.12g} < 1 (unphysical state)")
    return lam1, lam2, lam3


def g_entropy(x: float) -> float:
    """``(x+1) log2(x+1) - x log2(x)``, the entropy of a thermal mode with mean photon number x."""
    if x <= 0.0:
        # clamp the sub-tolerance negatives allowed for eigenvalues
        return 0.0
    return (x + 1.0) * math.log2(x + 1.0) - x * math.log2(x)


def holevo_bound(kin: KeyRateInputs) -> float:
    """Holevo information between Bob and Eve (bits/round)."""
    lam1, lam2, lam3 = symplectic_eigenvalues(kin.V, kin.T_eff, kin.chi, kin.effective_xi)
    return g_entropy((lam1 - 1) / 2) + g_entropy((lam2 - 1) / 2) - g_entropy((lam3 - 1) / 2)


@dataclass(frozen=True)
class KeyRateReport:
    I_AB: float
    I_EB: float
    chi_BE: float
    K_ind: float
    K_col: float
    K_ind_raw: float
    K_col_raw: float
    lambdas: tuple[float, float, float]
    xi: float
    xi_mode: str
    pulses_per_round: int
    rounds_per_second: float

    @property
    def secure_ind(self) -> bool:
        return self.K_ind_raw > 0.0

    @property
    def secure_col(self) -> bool:
        return self.K_col_raw > 0.0

    @property
    def K_ind_per_pulse(self) -> float:
        return self.K_ind / self.pulses_per_round

    @property
    def K_col_per_pulse(self) -> float:
        return self.K_col / self.pulses_per_round

    @property
    def K_ind_per_second(self) -> float:
        return self.K_ind * self.rounds_per_second

    @property
    def K_col_per_second(self) -> float:
        return self.K_col * self.rounds_per_second

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        d.update(
            secure_ind=self.secure_ind,
            secure_col=self.secure_col,
            K_ind_per_pulse=self.K_ind_per_pulse,
            K_col_per_pulse=self.K_col_per_pulse,
            K_ind_per_second=self.K_ind_per_second,
            K_col_per_second=self.K_col_per_second,
        )
        return d


def key_rate_individual(kin: KeyRateInputs) -> tuple[float, float]:
    """``(clamped, raw)`` individual-attack rate ``beta*I_AB - I_EB``."""
    raw = kin.beta * mutual_info_AB(kin) - eve_info_individual(kin)
    return max(0.0, raw), raw


def key_rate_collective(kin: KeyRateInputs) -> KeyRateReport:
    """Full report; ``K_col = beta*I_AB - chi_BE`` plus the individual-attack bound."""
    i_ab = mutual_info_AB(kin)
    i_eb = eve_info_individual(kin)
    lambdas = symplectic_eigenvalues(kin.V, kin.T_eff, kin.chi, kin.effective_xi)
    chi_be = holevo_bound(kin)
    k_ind = kin.beta * i_ab - i_eb
    k_col = kin.beta * i_ab - chi_be
    return KeyRateReport(
        I_AB=i_ab,
        I_EB=i_eb,
        chi_BE=chi_be,
        K_ind=max(0.0, k_ind),
        K_col=max(0.0, k_col),
        K_ind_raw=k_ind,
        K_col_raw=k_col,
        lambdas=lambdas,
        xi=kin.effective_xi,
        xi_mode=kin.xi_mode,
        pulses_per_round=kin.pulses_per_round,
        rounds_per_second=kin.rounds_per_second,
    )


key_rate_report = key_rate_collective


# --- sweeps -----------------------------------------------------------------

FIG3_RATIOS = (10, 20, 50, 100, 200, 500)


@dataclass(frozen=True)
class TransmittanceSweep:
    """Key rate versus effective transmittance for a family of reference strengths."""

    t_eff: tuple[float, ...]
    V_A: float = 40.0
    epsilon: float = 0.01
    V_el: float = 0.01
    beta: float = 0.95
    delta_R: int = 1
    ratios: tuple[float, ...] = FIG3_RATIOS
    include_conventional: bool = True


@dataclass(frozen=True)
class DistanceSweep:
    km: tuple[float, ...]
    betas: tuple[float, ...] = (0.85, 0.9, 0.95, 1.0)
    V_A: float = 34.0
    V_R: float = 900.0
    delta_R: int = 0
    epsilon: float = 0.01
    V_el: float = 0.01
    eta: float = 0.719
    loss_db_per_km: float = 0.2
    pulse_rate: float = 250e3


@dataclass
class SweepTable:
    """Plain column table; ``columns[0]`` is the abscissa."""

    columns: list[str]
    rows: list[list[float]]
    meta: dict

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])


def _curve_label(attack: str, ratio) -> str:
    return f"K_{attack}_xi0" if ratio is None else f"K_{attack}_VR{ratio:g}VA"


def sweep_inputs(spec: TransmittanceSweep, t_eff: float, ratio) -> KeyRateInputs:
    ch = ChannelParams.from_t_eff(t_eff, spec.epsilon, spec.V_el)
    V_R = math.inf if ratio is None else ratio * spec.V_A
    return KeyRateInputs(
        V=spec.V_A + 1.0, chi=ch.chi, T_eff=t_eff, V_R=V_R,
        delta_R=spec.delta_R, beta=spec.beta,
    )


def sweep_transmittance(spec: TransmittanceSweep) -> SweepTable:
    if len(spec.t_eff) == 0:
        raise ParameterDomainError("empty transmittance grid")
    curves = list(spec.ratios) + ([None] if spec.include_conventional else [])
    columns = ["t_eff"] + [_curve_label(a, r) for a in ("ind", "col") for r in curves]
    rows = []
    for t in spec.t_eff:
        ind, col = [], []
        for r in curves:
            rep = key_rate_collective(sweep_inputs(spec, t, r))
            ind.append(rep.K_ind)
            col.append(rep.K_col)
        rows.append([float(t)] + ind + col)
    meta = {"units": "bits/round", "V_A": spec.V_A, "epsilon": spec.epsilon, "V_el": spec.V_el,
            "beta": spec.beta, "delta_R": spec.delta_R}
    return SweepTable(columns, rows, meta)


def termination_transmittance(rate_of_t, lo: float = 1e-4, hi: float = 1.0,
                              xtol: float = TERMINATION_XTOL) -> float | None:
    """Smallest ``T_eff`` with a positive raw rate, by bisection.

    Returns ``None`` when the rate is non-positive at ``hi`` and ``lo`` when
    it is already positive at ``lo``.
    """
    if rate_of_t(hi) <= 0.0:
        return None
    if rate_of_t(lo) > 0.0:
        return lo
    return bisect(rate_of_t, lo, hi, xtol=xtol)


def curve_termination(spec: TransmittanceSweep, ratio, attack: str = "ind") -> float | None:
    def raw(t):
        rep = key_rate_collective(sweep_inputs(spec, t, ratio))
        return rep.K_ind_raw if attack == "ind" else rep.K_col_raw

    return termination_transmittance(raw)


def distance_transmittance(km: float, loss_db_per_km: float = 0.2) -> float:
    return 10.0 ** (-loss_db_per_km * km / 10.0)


def distance_sweep(spec: DistanceSweep) -> SweepTable:
    if len(spec.km) == 0:
        raise ParameterDomainError("empty distance grid")
    columns = ["km"] + [f"K_{a}_beta{b:g}" for a in ("ind", "col") for b in spec.betas]
    rows = []
    for d in spec.km:
        ch = ChannelParams(
            T=distance_transmittance(d, spec.loss_db_per_km), eta=spec.eta,
            epsilon=spec.epsilon, V_el=spec.V_el,
        )
        ind, col = [], []
        for b in spec.betas:
            p = ProtocolParams(V_A=spec.V_A, V_R=spec.V_R, delta_R=spec.delta_R,
                               beta=b, pulse_rate=spec.pulse_rate)
            rep = key_rate_collective(KeyRateInputs.from_params(p, ch))
            ind.append(rep.K_ind_per_second)
            col.append(rep.K_col_per_second)
        rows.append([float(d)] + ind + col)
    meta = {"units": "bits/s", "V_A": spec.V_A, "V_R": spec.V_R, "delta_R": spec.delta_R,
            "epsilon": spec.epsilon, "V_el": spec.V_el, "eta": spec.eta,
            "loss_db_per_km": spec.loss_db_per_km, "pulse_rate": spec.pulse_rate}
    return SweepTable(columns, rows, meta)
