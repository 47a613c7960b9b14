import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srcvqkd.errors import ParameterDomainError
from srcvqkd.gaussian import (
    OMEGA2,
    ChannelParams,
    CovMat4,
    PhaseStats,
    ProtocolParams,
    analytic_phase_stats,
    averaged_covariance,
    conditional_variance_b_given_a,
    correlation_coefficient,
    epr_covariance,
    excess_noise_chi,
    heterodyne_split_moments,
    phase_estimator_variance,
    pm_covariance,
)
from srcvqkd.phase import measure_reference, estimate_phase, rotation, wrap_phase

channels = st.builds(
    ChannelParams,
    T=st.floats(0.05, 1.0),
    eta=st.floats(0.3, 1.0),
    epsilon=st.floats(0.0, 0.2),
    V_el=st.floats(0.0, 0.2),
)


class TestChannel:
    @pytest.mark.parametrize(
        "kw, chi",
        [
            (dict(T=1, eta=1, epsilon=0, V_el=0), 0.0),
            (dict(T=1, eta=0.5, epsilon=0, V_el=0), 1.0),
            (dict(T=1, eta=0.8, epsilon=0.01, V_el=0.01), 0.2725),
        ],
    )
    def test_chi_examples(self, kw, chi):
        assert excess_noise_chi(ChannelParams(**kw)) == pytest.approx(chi, abs=1e-12)

    @pytest.mark.parametrize(
        "kw",
        [dict(T=0.0), dict(T=1.2), dict(eta=0.0), dict(eta=1.01), dict(epsilon=-0.1), dict(V_el=-1e-3),
         dict(T=float("nan"))],
    )
    def test_domain(self, kw):
        with pytest.raises(ParameterDomainError):
            ChannelParams(**kw)

    @given(channels)
    def test_chi_nonnegative(self, ch):
        assert ch.chi >= 0.0
        assert 0.0 < ch.T_eff <= 1.0


class TestProtocol:
    def test_pulses_per_round(self):
        assert ProtocolParams(V_A=1, V_R=10, delta_R=1).pulses_per_round == 2
        p = ProtocolParams(V_A=1, V_R=10, delta_R=0, pulse_rate=250e3)
        assert p.pulses_per_round == 3
        assert p.rounds_per_second == pytest.approx(250e3 / 3)
        assert p.V == 2.0

    def test_reference_pulse(self):
        p = ProtocolParams(V_A=34, V_R=900)
        assert (p.q_AR, p.p_AR) == (30.0, 0.0)

    @pytest.mark.parametrize(
        "kw",
        [dict(V_A=-1), dict(V_R=0), dict(delta_R=2), dict(beta=1.5), dict(pulse_rate=0), dict(f_theta=-1)],
    )
    def test_domain(self, kw):
        base = dict(V_A=10, V_R=100)
        base.update(kw)
        with pytest.raises(ParameterDomainError):
            ProtocolParams(**base)


class TestCovMat4:
    def test_rejects_asymmetric(self):
        m = np.eye(4)
        m[0, 1] = 1e-6
        with pytest.raises(ParameterDomainError):
            CovMat4(m)

    def test_rejects_shape(self):
        with pytest.raises(ParameterDomainError):
            CovMat4(np.eye(3))

    def test_read_only(self):
        c = CovMat4(np.eye(4))
        with pytest.raises(ValueError):
            c.m[0, 0] = 2.0

    def test_vacuum_is_bona_fide_edge(self):
        assert CovMat4(np.eye(4)).is_bona_fide()
        assert not CovMat4(0.5 * np.eye(4)).is_bona_fide()

    def test_blocks(self):
        g = epr_covariance(3.0, ChannelParams())
        np.testing.assert_array_equal(g.alice, 3 * np.eye(2))
        np.testing.assert_array_equal(g.bob, 3 * np.eye(2))
        assert g.cross[0, 0] == pytest.approx(math.sqrt(8))


class TestEPR:
    def test_vacuum_modulation(self, tabletop_channel):
        ch = tabletop_channel
        g = epr_covariance(1.0, ch)
        assert correlation_coefficient(g) == 0.0
        b = ch.T_eff * (1 + ch.chi)
        np.testing.assert_allclose(np.diag(g.m), [1, 1, b, b])

    def test_identity_channel(self):
        g = epr_covariance(2.0, ChannelParams())
        assert correlation_coefficient(g) == pytest.approx(math.sqrt(3))
        np.testing.assert_allclose(g.bob, 2 * np.eye(2))

    def test_tabletop(self, tabletop_channel):
        g = epr_covariance(35.0, tabletop_channel)
        assert correlation_coefficient(g) == pytest.approx(math.sqrt(0.8 * 1224), abs=1e-12)
        assert correlation_coefficient(g) == pytest.approx(31.2922, abs=5e-5)
        assert g.m[2, 2] == pytest.approx(28.218, abs=1e-9)
        assert g.m[1, 3] == -g.m[0, 2]

    def test_rejects_v_below_one(self):
        with pytest.raises(ParameterDomainError):
            epr_covariance(0.5, ChannelParams())

    @given(V=st.floats(1.0, 200.0), ch=channels)
    def test_bona_fide_and_symmetric(self, V, ch):
        g = epr_covariance(V, ch)
        assert np.array_equal(g.m, g.m.T)
        assert g.is_bona_fide()


class TestAveraging:
    def test_perfect_estimation_identity(self, tabletop_channel):
        g = epr_covariance(35.0, tabletop_channel)
        assert np.array_equal(averaged_covariance(g, PhaseStats.perfect()).m, g.m)

    def test_random_phase_kills_correlation(self, tabletop_channel):
        g = epr_covariance(35.0, tabletop_channel)
        a = averaged_covariance(g, PhaseStats(0.0, 0.0, 1.0, 3.29))
        assert a.m[0, 2] == 0.0 and a.m[1, 3] == 0.0
        np.testing.assert_array_equal(a.alice, g.alice)
        np.testing.assert_array_equal(a.bob, g.bob)

    def test_tabletop_offdiag(self, tabletop_channel):
        g = epr_covariance(35.0, tabletop_channel)
        a = averaged_covariance(g, PhaseStats(0.999293, 0.0, 1 - 0.999293**2, 1.414e-3))
        assert a.m[0, 2] == pytest.approx(31.270, abs=5e-4)
        assert a.m[1, 3] == pytest.approx(-31.270, abs=5e-4)

    def test_rejects_non_epr_input(self, tabletop_protocol, tabletop_channel):
        pm = pm_covariance(tabletop_protocol, tabletop_channel, 1.0)
        with pytest.raises(ParameterDomainError):
            averaged_covariance(pm, PhaseStats.perfect())

    def test_rejects_bad_stats(self):
        with pytest.raises(ParameterDomainError):
            PhaseStats(0.9, 0.0, 0.5, 0.1)
        with pytest.raises(ParameterDomainError):
            PhaseStats(0.9, 0.9, 1 - 0.81, 0.1)

    @given(V=st.floats(1.0, 100.0), ch=channels, v1=st.floats(0.0, 1.0), v2=st.floats(0.0, 1.0))
    def test_offdiag_monotone_in_estimator_variance(self, V, ch, v1, v2):
        g = epr_covariance(V, ch)
        lo, hi = sorted((v1, v2))
        a_lo = averaged_covariance(g, PhaseStats.from_estimator_variance(lo))
        a_hi = averaged_covariance(g, PhaseStats.from_estimator_variance(hi))
        assert abs(a_hi.m[0, 2]) <= abs(a_lo.m[0, 2]) + 1e-12

    @given(V=st.floats(1.0, 100.0), ch=channels, v=st.floats(0.0, 1.0))
    def test_quadrature_symmetry_and_bona_fide(self, V, ch, v):
        a = averaged_covariance(epr_covariance(V, ch), PhaseStats.from_estimator_variance(v))
        assert a.m[0, 0] == a.m[1, 1] and a.m[2, 2] == a.m[3, 3]
        assert a.m[0, 2] == -a.m[1, 3]
        assert a.is_bona_fide()


def heisenberg_average(g: CovMat4, thetas, phis):
    """Second moments of the rotated operators averaged over a theta grid and phi samples.

    Heisenberg picture: Alice's quadratures turn by R(theta_hat) with
    theta_hat = theta + phi, Bob's by R(-theta).
    """
    acc = np.zeros((4, 4))
    for th in thetas:
        for ph in phis:
            s = np.zeros((4, 4))
            s[:2, :2] = rotation(th + ph)
            s[2:, 2:] = rotation(-th)
            acc += s @ g.m @ s.T
    return acc / (len(thetas) * len(phis))


class TestHeisenbergOracle:
    thetas = np.linspace(-math.pi, math.pi, 24, endpoint=False)

    def test_symmetric_phi(self, tabletop_channel, rng):
        g = epr_covariance(35.0, tabletop_channel)
        half = rng.normal(0.0, 0.04, 200)
        phis = np.concatenate([half, -half])
        oracle = heisenberg_average(g, self.thetas, phis)
        cb = float(np.mean(np.cos(phis)))
        a = averaged_covariance(g, PhaseStats(cb, 0.0, 1 - cb**2, float(np.var(phis))))
        np.testing.assert_allclose(oracle, a.m, rtol=1e-6, atol=1e-9)

    def test_asymmetric_phi_sign_convention(self, rng):
        ch = ChannelParams(T=0.7, eta=0.9, epsilon=0.02, V_el=0.01)
        g = epr_covariance(11.0, ch)
        phis = rng.normal(0.2, 0.1, 300)
        oracle = heisenberg_average(g, self.thetas, phis)
        cb, sb = float(np.mean(np.cos(phis))), float(np.mean(np.sin(phis)))
        a = averaged_covariance(g, PhaseStats(cb, sb, 1 - cb**2, float(np.var(phis))))
        np.testing.assert_allclose(oracle, a.m, rtol=1e-6, atol=1e-9)


class TestPrepareAndMeasure:
    def test_tabletop_matrix(self, tabletop_protocol, tabletop_channel):
        pm = pm_covariance(tabletop_protocol, tabletop_channel, 0.999293)
        np.testing.assert_allclose(np.diag(pm.m), [34, 34, 28.218, 28.218], atol=1e-9)
        assert pm.m[0, 2] == pytest.approx(30.389, abs=1e-3)
        assert pm.m[1, 3] == pm.m[0, 2]
        assert pm.m[0, 1] == 0.0 and pm.m[0, 3] == 0.0

    def test_ideal(self):
        pm = pm_covariance(ProtocolParams(V_A=7.0, V_R=1e3), ChannelParams(), 1.0)
        assert pm.m[0, 2] == 7.0

    def test_oracle_moment_integration(self, rng):
        """Average sqrt(T) E[R(theta_hat) x x^T R(theta)^T] over a theta grid and simulated phi."""
        p = ProtocolParams(V_A=40.0, V_R=400.0, delta_R=1)
        ch = ChannelParams.from_t_eff(0.64)
        theta = np.zeros(20_000)
        half = wrap_phase(estimate_phase(measure_reference(theta, ch, p.V_R, 1, rng)).theta_hat)
        phis = np.concatenate([half, -half])
        # x x^T averages to V_A * I for the Gaussian modulation
        acc = np.zeros((2, 2))
        grid = np.linspace(-math.pi, math.pi, 16, endpoint=False)
        for th in grid:
            acc += np.mean(rotation(th + phis) @ rotation(th).T, axis=0)
        cross = math.sqrt(ch.T_eff) * p.V_A * acc / grid.size
        cb = float(np.mean(np.cos(phis)))
        pm = pm_covariance(p, ch, cb)
        np.testing.assert_allclose(cross, pm.cross, rtol=1e-6, atol=1e-9)
        assert pm.m[2, 2] == pytest.approx(0.64 * (41.0 + ch.chi))

    def test_pm_can_be_singular(self):
        pm = pm_covariance(ProtocolParams(V_A=0.0, V_R=900), ChannelParams(), 1.0)
        assert pm.rank_deficient


class TestHeterodyneSplit:
    def test_vacuum(self):
        g = epr_covariance(1.0, ChannelParams())
        assert heterodyne_split_moments(g) == (1.0, 0.0)

    def test_tabletop(self, tabletop_channel):
        g = epr_covariance(35.0, tabletop_channel)
        cb = 31.270 / correlation_coefficient(g)
        a = averaged_covariance(g, PhaseStats(cb, 0.0, 1 - cb**2, 1e-3))
        qa2, qaqb = heterodyne_split_moments(a)
        assert qa2 == 18.0
        assert qaqb == pytest.approx(22.1113, abs=1e-4)

    @given(V=st.floats(1.0, 100.0), ch=channels, v=st.floats(0.0, 1.0))
    def test_quadrature_symmetry(self, V, ch, v):
        a = averaged_covariance(epr_covariance(V, ch), PhaseStats.from_estimator_variance(v))
        qa2, qaqb = heterodyne_split_moments(a)
        # P moments: <P_A'^2> = (V+1)/2 and the P_A'P_B correlation has the sigma_z sign
        assert (a.m[1, 1] + 1) / 2 == qa2
        assert -a.m[1, 3] / math.sqrt(2) == pytest.approx(qaqb, rel=1e-12, abs=1e-12)

    def test_conditional_variance(self, tabletop_channel):
        g = epr_covariance(35.0, tabletop_channel)
        ps = analytic_phase_stats(tabletop_channel, 900.0, 0)
        v = conditional_variance_b_given_a(averaged_covariance(g, ps))
        # closed form T_eff * (chi + 1 + (V-1) xi) * (V+1)... via elimination of Q_A'
        t, chi, V, xi = 0.8, 0.2725, 35.0, ps.xi
        expected = t * (V + chi) - t * (V * V - 1) * (1 - xi) / (V + 1)
        assert v == pytest.approx(expected, rel=1e-12)


class TestEstimatorVariance:
    def test_classical_limit(self, tabletop_channel):
        assert phase_estimator_variance(tabletop_channel, 1e9, 1) < 1e-6
        assert phase_estimator_variance(tabletop_channel, math.inf, 1) == 0.0

    def test_tabletop(self, tabletop_channel):
        v0 = phase_estimator_variance(tabletop_channel, 900.0, 0)
        assert v0 == pytest.approx(1.41389e-3, abs=5e-9)
        v1 = phase_estimator_variance(tabletop_channel, 900.0, 1)
        assert v1 - v0 == pytest.approx(1 / (0.8 * 900), rel=1e-12)
        assert 1 / (0.8 * 900) == pytest.approx(1.38889e-3, abs=5e-9)

    def test_domain(self, tabletop_channel):
        with pytest.raises(ParameterDomainError):
            phase_estimator_variance(tabletop_channel, 0.0, 0)
        with pytest.raises(ParameterDomainError):
            phase_estimator_variance(tabletop_channel, 10.0, 3)

    def test_bound_stats(self, tabletop_channel):
        ps = analytic_phase_stats(tabletop_channel, 900.0, 0)
        assert ps.xi == pytest.approx(ps.V_thetahat, rel=1e-12)
        assert ps.cos_bar == pytest.approx(0.999293, abs=1e-6)


def test_omega_is_symplectic_form():
    assert np.array_equal(OMEGA2, -OMEGA2.T)
    assert np.array_equal(OMEGA2 @ OMEGA2, -np.eye(4))
