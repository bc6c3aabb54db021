import math

import numpy as np
import pytest
from scipy.stats import poisson

from qho_cal.analytics import (
    PerturbativeElement,
    TruncationPolicy,
    mu,
    perturbative_matrix,
    perturbative_u,
    transmission_T0,
    transmission_T1,
    transmission_TN,
    truncated_calorimetric_moment,
    truncated_projective_moment,
    unitary_T0,
    unitary_calorimetric_moment,
    unitary_projective_moments,
    w_nk,
)
from qho_cal.errors import RegimeWarning
from qho_cal.fock import displacement_matrix, ladder_operators, matrix_exponential
from qho_cal.model import PhysicalParams, bath_occupation, make_rates, nh_generator
from qho_cal.quadrature import gauss_legendre

pytestmark = pytest.mark.filterwarnings("ignore::qho_cal.errors.RegimeWarning")

PI2_4 = np.pi**2 / 4.0


def fig4():
    p = PhysicalParams(gamma=0.001, beta=2.0, lambda0=0.01, dim=10)
    return p, make_rates(p)


class TestMu:
    def test_zero(self):
        assert mu(0.0, 0.01) == 0.0

    def test_full_drive(self):
        p = PhysicalParams(gamma=1e-4, beta=2.0, lambda0=0.01)
        assert mu(p.drive_time, p.lambda0) == pytest.approx(PI2_4, rel=1e-12)
        assert mu(p.drive_time, p.lambda0) == pytest.approx(2.4674, abs=1e-4)

    def test_quadratic_scaling(self):
        for t in (3.0, 17.0, 120.0):
            assert mu(2 * t, 0.01) == pytest.approx(4 * mu(t, 0.01), rel=1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            mu(-1.0, 0.01)


class TestUnitaryProjectiveMoments:
    def test_zero_temperature_variance_equals_mean_scale(self):
        p = PhysicalParams(gamma=1e-4, beta=50.0, lambda0=0.01)
        mean, var = unitary_projective_moments(0.4 * p.drive_time, p)
        assert var == pytest.approx(mean, rel=1e-10)

    def test_beta_two_full_drive(self):
        p = PhysicalParams(gamma=1e-4, beta=2.0, lambda0=0.01)
        mean, var = unitary_projective_moments(p.drive_time, p)
        assert mean == pytest.approx(PI2_4, rel=1e-12)
        assert var == pytest.approx(2.0 * (bath_occupation(2.0) + 0.5) * PI2_4, rel=1e-12)
        assert var == pytest.approx(3.2399, abs=2e-4)

    def test_variance_mean_ratio_time_independent(self):
        p = PhysicalParams(gamma=1e-4, beta=1.3, lambda0=0.01)
        expected = 2.0 * (bath_occupation(1.3) + 0.5)
        for t in (10.0, 80.0, 250.0):
            mean, var = unitary_projective_moments(t, p)
            assert var / mean == pytest.approx(expected, rel=1e-12)


class TestUnitaryT0:
    def test_vacuum_survival(self):
        t, lam = 120.0, 0.01
        assert unitary_T0(0, 0, t, lam) == pytest.approx(
            math.exp(-mu(t, lam)), rel=1e-12
        )

    def test_t_zero_identity(self):
        for m in range(4):
            for n in range(4):
                assert unitary_T0(m, n, 0.0, 0.01) == (1.0 if m == n else 0.0)

    def test_vacuum_column_is_poisson(self):
        t, lam = 200.0, 0.01
        lam_mu = mu(t, lam)
        for m in range(8):
            assert unitary_T0(m, 0, t, lam) == pytest.approx(
                poisson.pmf(m, lam_mu), rel=1e-9
            )

    def test_column_normalization(self):
        t, lam = 150.0, 0.01
        total = sum(unitary_T0(m, 2, t, lam) for m in range(40))
        assert total == pytest.approx(1.0, abs=1e-12)


class TestWnk:
    def test_zero_temperature_mean(self):
        p = PhysicalParams(gamma=1e-6, beta=50.0, lambda0=0.01)
        r = make_rates(p)
        for t in (0.3 * p.drive_time, p.drive_time):
            expected = 1.0 - math.exp(-mu(t, p.lambda0))
            assert w_nk(0, 1, t, p, r) == pytest.approx(expected, abs=1e-9)

    def test_t0_reduces_to_guardian_algebra(self):
        p = PhysicalParams(gamma=1.0, beta=2.0, lambda0=0.01)
        r = make_rates(p)
        x = math.exp(-2.0)
        assert w_nk(0, 1, 0.0, p, r) == 0.0
        assert w_nk(0, 2, 0.0, p, r) == 0.0
        assert w_nk(1, 2, 0.0, p, r) == pytest.approx(4 * x / (1 + 2 * x) ** 2, rel=1e-12)

    def test_high_temperature_limits(self):
        # p_i ~ p_f ~ 1/2 at high occupation: first moment -> 0, second -> 1/2
        p = PhysicalParams(gamma=0.3, beta=1e-3, lambda0=0.01, drive_time=200.0)
        r = make_rates(p)
        t = 200.0  # mu = 1
        assert abs(w_nk(50, 1, t, p, r)) <= 2e-3
        assert w_nk(50, 2, t, p, r) == pytest.approx(0.5, abs=2e-3)

    def test_explicit_m_max_converges(self):
        p = PhysicalParams(gamma=1e-4, beta=2.0, lambda0=0.01)
        r = make_rates(p)
        t = 0.7 * p.drive_time
        full = w_nk(0, 1, t, p, r)
        capped = w_nk(0, 1, t, p, r, m_max=40)
        assert capped == pytest.approx(full, abs=1e-10)

    def test_invalid_arguments(self):
        p, r = fig4()
        with pytest.raises(ValueError):
            w_nk(-1, 1, 1.0, p, r)
        with pytest.raises(ValueError):
            w_nk(0, 0, 1.0, p, r)


class TestUnitaryCalorimetricMoment:
    def test_zero_temperature_block(self):
        p = PhysicalParams(gamma=1e-6, beta=50.0, lambda0=0.01)
        r = make_rates(p)
        t = p.drive_time  # mu = pi^2/4
        m1 = unitary_calorimetric_moment(1, t, p, r)
        m2 = unitary_calorimetric_moment(2, t, p, r)
        assert m1 == pytest.approx(1.0 - math.exp(-PI2_4), rel=1e-9)
        assert m1 == pytest.approx(0.9152, abs=1e-4)
        var = m2 - m1 * m1
        assert var == pytest.approx(math.exp(-2 * PI2_4) * (math.exp(PI2_4) - 1), rel=1e-7)
        assert var == pytest.approx(0.0776, abs=1e-4)

    def test_zero_temperature_closed_forms_to_1e6(self):
        p = PhysicalParams(gamma=1e-6, beta=20.0, lambda0=0.01)
        r = make_rates(p)
        for frac in (0.1, 0.5, 1.0):
            t = frac * p.drive_time
            mu_t = mu(t, p.lambda0)
            m1 = unitary_calorimetric_moment(1, t, p, r)
            m2 = unitary_calorimetric_moment(2, t, p, r)
            assert abs(m1 - (1 - math.exp(-mu_t))) < 1e-6
            assert abs((m2 - m1 * m1) - math.exp(-2 * mu_t) * (math.exp(mu_t) - 1)) < 1e-6

    def test_exact_zero_mean_at_t0_any_temperature(self):
        # the two-level inference is unbiased without driving
        for beta in (0.1, 0.7, 3.0):
            p = PhysicalParams(gamma=0.05, beta=beta, lambda0=0.01)
            r = make_rates(p)
            assert abs(unitary_calorimetric_moment(1, 0.0, p, r, n_max=60)) < 1e-14

    def test_long_drive_asymptotics_zero_temperature(self):
        # mean -> 1 and variance -> 0 as mu grows
        p = PhysicalParams(gamma=1e-6, beta=50.0, lambda0=0.01, drive_time=2000.0)
        r = make_rates(p)
        t = 2.0 * math.sqrt(20.0) / p.lambda0  # mu = 20
        m1 = unitary_calorimetric_moment(1, t, p, r)
        m2 = unitary_calorimetric_moment(2, t, p, r)
        assert m1 == pytest.approx(1.0, abs=1e-8)
        assert m2 - m1 * m1 == pytest.approx(0.0, abs=1e-8)


class TestPerturbativeU:
    def test_collapses_to_displacement_without_coupling(self):
        p = PhysicalParams(gamma=0.0, beta=2.0, lambda0=0.01, dim=10)
        r = make_rates(p)
        t = 0.4 * p.drive_time
        u = perturbative_matrix(t, p, r, dim=12)
        disp = displacement_matrix(p.lambda0 * t / 2.0, 12)
        np.testing.assert_allclose(u, disp, atol=1e-14)
        el = perturbative_u(3, 1, t, p, r)
        assert isinstance(el, PerturbativeElement)
        assert el.value == pytest.approx(complex(disp[3, 1]), rel=1e-12)

    def test_identity_at_t_zero(self):
        p, r = fig4()
        u = perturbative_matrix(0.0, p, r, dim=8)
        np.testing.assert_allclose(u, np.eye(8), atol=1e-14)

    def test_against_full_propagator(self):
        # transfer probabilities from the lowest starting levels match the
        # full matrix exponential to better than 1e-3 relative
        p, r = fig4()
        t = 0.2 * p.drive_time
        dim = 40
        k = nh_generator(PhysicalParams(gamma=p.gamma, beta=p.beta, lambda0=p.lambda0, dim=dim), r)
        exact = matrix_exponential(-1j * t * np.asarray(k))
        u = perturbative_matrix(t, p, r, dim=dim)
        t0_exact = np.abs(exact) ** 2
        t0_pert = np.abs(u) ** 2
        for n in (0, 1):
            mask = t0_exact[:11, n] > 1e-6
            rel = np.abs(t0_pert[:11, n] - t0_exact[:11, n]) / t0_exact[:11, n]
            assert rel[mask].max() < 1e-3

    def test_validity_warning(self):
        p = PhysicalParams(gamma=0.05, beta=2.0, lambda0=0.01, dim=10)
        r = make_rates(p)
        with pytest.warns(RegimeWarning):
            perturbative_matrix(100.0, p, r, dim=6)


class TestCommutationIdentity:
    def test_jump_operator_through_propagator(self):
        # U_nh(-s) a U_nh(s) = a0(s) a + (lambda0/gamma_sigma)(1 - a0(s)):
        # fixes the sign of the constant term in the one-jump amplitude
        p = PhysicalParams(gamma=8e-4, beta=2.0, lambda0=0.01, dim=40)
        r = make_rates(p)
        k = np.asarray(nh_generator(p, r))
        s = 25.0
        u = matrix_exponential(-1j * s * k)
        uinv = matrix_exponential(1j * s * k)
        lowering, raising = ladder_operators(40)
        a0 = math.exp(-r.gamma_sigma * s / 2.0)
        const = p.lambda0 / r.gamma_sigma * (1.0 - a0)
        lhs = uinv @ lowering @ u
        rhs = a0 * np.asarray(lowering) + const * np.eye(40)
        sub = np.s_[:20, :20]
        assert np.abs(lhs[sub] - rhs[sub]).max() < 1e-10
        a1 = math.exp(r.gamma_sigma * s / 2.0)
        const1 = p.lambda0 / r.gamma_sigma * (a1 - 1.0)
        lhs1 = uinv @ raising @ u
        rhs1 = a1 * np.asarray(raising) + const1 * np.eye(40)
        assert np.abs(lhs1[sub] - rhs1[sub]).max() < 1e-10


class TestTransmissionT0:
    def test_matches_unitary_without_coupling(self):
        p = PhysicalParams(gamma=0.0, beta=2.0, lambda0=0.01)
        r = make_rates(p)
        t = 0.6 * p.drive_time
        for m, n in [(0, 0), (3, 0), (2, 1)]:
            assert transmission_T0(m, n, t, p, r) == pytest.approx(
                unitary_T0(m, n, t, p.lambda0), rel=1e-12
            )

    def test_diagonal_decay_without_drive(self):
        # matches exp(-(gamma_sigma n + gamma1) t) to expansion order
        p = PhysicalParams(gamma=0.01, beta=1.0, lambda0=0.0, drive_time=40.0)
        r = make_rates(p)
        t = 8.0
        for n in (0, 1, 2):
            s = (r.gamma_sigma * n + r.gamma1) * t / 2.0
            exact = math.exp(-2 * s)
            got = transmission_T0(n, n, t, p, r)
            assert abs(got - exact) <= 2.2 * s**3 / 6.0 + 1e-12

    def test_subnormalized(self):
        p, r = fig4()
        for frac in (0.2, 0.5):
            t = frac * p.drive_time
            u = perturbative_matrix(t, p, r, dim=30)
            for n in (0, 1):
                total = float(np.sum(np.abs(u[:, n]) ** 2))
                assert total <= 1.0 + 1e-9


class TestTransmissionT1:
    def test_early_jump_limit(self):
        # t1 -> 0: a = 1, b = 0, so T1 = gamma_i (n + d_i1) |u(m,t|n+-1)|^2
        p, r = fig4()
        t = 0.2 * p.drive_time
        n = 1
        u = perturbative_matrix(t, p, r, dim=10)
        for i1, shift, fac in ((0, -1, 1.0), (1, +1, 2.0)):
            rate = r.gamma0 if i1 == 0 else r.gamma1
            for m in range(5):
                got = transmission_T1(m, n, i1, 0.0, t, p, r)
                expected = rate * fac * abs(u[m, n + shift]) ** 2
                assert got == pytest.approx(expected, rel=1e-9, abs=1e-18)

    def test_absorption_vanishes_at_zero_temperature(self):
        p = PhysicalParams(gamma=1e-4, beta=800.0, lambda0=0.01)
        r = make_rates(p)
        t = 0.3 * p.drive_time
        assert transmission_T1(2, 0, 1, 0.1 * t, t, p, r) == 0.0

    def test_time_integrated_decay_without_drive(self):
        # lambda0 = 0, start |1>, emission: integral over t1 gives 1 - exp(-gamma0 t)
        p = PhysicalParams(gamma=0.02, beta=800.0, lambda0=0.0, drive_time=60.0)
        r = make_rates(p)
        t = 45.0
        nodes, weights = gauss_legendre(64, 0.0, t)
        total = sum(
            w * transmission_T1(0, 1, 0, t1, t, p, r) for t1, w in zip(nodes, weights)
        )
        assert total == pytest.approx(1.0 - math.exp(-r.gamma0 * t), abs=1e-10)

    def test_against_full_propagator(self):
        # one-jump density vs exact expm(U) C expm(U) composition
        p = PhysicalParams(gamma=8e-4, beta=2.0, lambda0=0.01, dim=40)
        r = make_rates(p)
        t = 0.2 * p.drive_time
        t1 = 0.4 * t
        k = np.asarray(nh_generator(p, r))
        lowering, raising = ladder_operators(40)
        u_after = matrix_exponential(-1j * (t - t1) * k)
        u_before = matrix_exponential(-1j * t1 * k)
        for i1, c in ((0, np.sqrt(r.gamma0) * lowering), (1, np.sqrt(r.gamma1) * raising)):
            exact_amp = u_after @ np.asarray(c) @ u_before
            for n in (0, 1, 2):
                for m in range(6):
                    exact = abs(exact_amp[m, n]) ** 2
                    got = transmission_T1(m, n, i1, t1, t, p, r)
                    assert got == pytest.approx(exact, rel=2e-2, abs=1e-10)

    def test_invalid_jump_time(self):
        p, r = fig4()
        with pytest.raises(ValueError):
            transmission_T1(0, 0, 0, 5.0, 1.0, p, r)


class TestTransmissionTN:
    def test_reduces_to_t0_and_t1(self):
        p, r = fig4()
        t = 0.15 * p.drive_time
        assert transmission_TN(2, 0, (), (), t, p, r) == pytest.approx(
            transmission_T0(2, 0, t, p, r), rel=1e-12
        )
        got = transmission_TN(2, 1, (0,), (0.3 * t,), t, p, r)
        assert got == pytest.approx(
            transmission_T1(2, 1, 0, 0.3 * t, t, p, r), rel=1e-12
        )

    def test_two_jumps_against_full_propagator(self):
        p = PhysicalParams(gamma=8e-4, beta=2.0, lambda0=0.01, dim=40)
        r = make_rates(p)
        t = 0.2 * p.drive_time
        t1, t2 = 0.3 * t, 0.7 * t
        k = np.asarray(nh_generator(p, r))
        lowering, raising = ladder_operators(40)
        cs = {0: np.sqrt(r.gamma0) * np.asarray(lowering), 1: np.sqrt(r.gamma1) * np.asarray(raising)}
        for seq in ((0, 0), (0, 1), (1, 0), (1, 1)):
            exact_amp = (
                matrix_exponential(-1j * (t - t2) * k)
                @ cs[seq[1]]
                @ matrix_exponential(-1j * (t2 - t1) * k)
                @ cs[seq[0]]
                @ matrix_exponential(-1j * t1 * k)
            )
            for n in (0, 1):
                for m in range(5):
                    exact = abs(exact_amp[m, n]) ** 2
                    got = transmission_TN(m, n, seq, (t1, t2), t, p, r)
                    assert got == pytest.approx(exact, rel=3e-2, abs=1e-12)

    def test_probability_bookkeeping(self):
        # total probability of 0, <=1 and <=2 jump histories approaches one
        # from below, with the deficit shrinking at each order
        from qho_cal.analytics import _one_jump_integrals, _two_jump_integrals

        p, r = fig4()
        t = 0.35 * p.drive_time
        n = 1
        dimw = 25
        u = perturbative_matrix(t, p, r, dim=dimw)
        p0 = float(np.sum(np.abs(u[:, n]) ** 2))
        one = _one_jump_integrals(n, t, u, p, r, nodes=48)
        p1 = float(sum(v.sum() for v in one.values()))
        two = _two_jump_integrals(n, t, u, p, r, nodes=24)
        p2 = float(sum(v.sum() for v in two.values()))
        assert p0 <= 1.0 + 1e-9
        assert p0 + p1 <= 1.0 + 1e-6
        deficit1 = 1.0 - p0
        deficit2 = 1.0 - (p0 + p1)
        deficit3 = 1.0 - (p0 + p1 + p2)
        assert abs(deficit2) < abs(deficit1)
        assert abs(deficit3) < abs(deficit2)

    def test_internal_kernels_match_public_density(self):
        # the integrated kernels used by the moment sums agree with the
        # public per-time transfer densities
        from qho_cal.analytics import _one_jump_integrals

        p, r = fig4()
        t = 0.2 * p.drive_time
        n = 1
        u = perturbative_matrix(t, p, r, dim=20)
        one = _one_jump_integrals(n, t, u, p, r, nodes=48)
        nodes, weights = gauss_legendre(48, 0.0, t)
        for i1 in (0, 1):
            for m in (0, 2):
                direct = sum(
                    w * transmission_T1(m, n, i1, t1, t, p, r)
                    for t1, w in zip(nodes, weights)
                )
                assert one[i1][m] == pytest.approx(direct, rel=1e-6, abs=1e-15)

    def test_validation(self):
        p, r = fig4()
        with pytest.raises(ValueError):
            transmission_TN(0, 0, (0, 1), (2.0, 1.0), 3.0, p, r)
        with pytest.raises(ValueError):
            transmission_TN(0, 0, (0,), (), 3.0, p, r)


class TestTruncatedMoments:
    def test_no_jump_no_coupling_matches_unitary(self):
        p = PhysicalParams(gamma=0.0, beta=2.0, lambda0=0.01)
        r = make_rates(p)
        policy = TruncationPolicy(n_max=1, m_max=30, jumps_max=0)
        for frac in (0.2, 0.8):
            t = frac * p.drive_time
            for k in (1, 2):
                trunc = truncated_calorimetric_moment(k, t, p, r, policy)
                unit = unitary_calorimetric_moment(k, t, p, r)
                assert abs(trunc - unit) < 1e-8

    def test_zero_temperature_identities(self):
        # coupling small enough that the genuine one-jump correction
        # (~gamma T scale) stays below the closed-form tolerance
        p = PhysicalParams(gamma=1e-8, beta=20.0, lambda0=0.01)
        r = make_rates(p)
        policy = TruncationPolicy(n_max=1, m_max=30, jumps_max=2)
        t = 0.5 * p.drive_time
        mu_t = mu(t, p.lambda0)
        m1 = truncated_calorimetric_moment(1, t, p, r, policy)
        m2 = truncated_calorimetric_moment(2, t, p, r, policy)
        assert abs(m1 - (1 - math.exp(-mu_t))) < 1e-6
        assert abs((m2 - m1 * m1) - math.exp(-2 * mu_t) * (math.exp(mu_t) - 1)) < 1e-6

    def test_short_time_agreement_with_projective(self):
        # |calorimetric mean - projective mean| vanishes faster than mu(t)
        # in the low-temperature regime; at finite temperature the two-level
        # inference biases the mean already at first order in mu.
        p = PhysicalParams(gamma=1e-4, beta=20.0, lambda0=0.01, dim=10)
        r = make_rates(p)
        policy = TruncationPolicy()
        ratios = []
        for t in (0.08 * p.drive_time, 0.04 * p.drive_time, 0.02 * p.drive_time):
            wc = truncated_calorimetric_moment(1, t, p, r, policy)
            wp = truncated_projective_moment(1, t, p, r, policy)
            ratios.append(abs(wc - wp) / mu(t, p.lambda0))
        assert ratios[1] < ratios[0] and ratios[2] < ratios[1]
        assert ratios[2] < 0.01

    def test_perturbative_projective_tracks_unitary(self):
        # weak coupling: dissipative corrections stay small at early times
        p, r = fig4()
        t = 0.2 * p.drive_time
        wp = truncated_projective_moment(1, t, p, r)
        assert wp == pytest.approx(mu(t, p.lambda0), rel=0.05)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            TruncationPolicy(n_max=5, m_max=2)
        with pytest.raises(ValueError):
            TruncationPolicy(jumps_max=-1)
        p, r = fig4()
        with pytest.raises(NotImplementedError):
            truncated_calorimetric_moment(
                1, 1.0, p, r, TruncationPolicy(jumps_max=3)
            )
