import numpy as np
import pytest

from dicert.behaviour import validate_behaviour
from dicert.fock import fock_oracle_distribution, truncation_tail
from dicert.spdc import (
    Efficiency,
    GaussianState,
    SetupParams,
    apply_measurement_optics,
    assemble_behaviour,
    click_distribution,
    measurement_unitary,
    noclick_probabilities,
    passive_symplectic,
    pattern_to_outcomes,
    setting_distribution,
    single_pair_covariance,
    two_mode_squeezed_cov,
    vacuum_state,
)

ANGLES = ((0.3, 0.1), (1.1, 5.2))
PARAMS = SetupParams(2, 0.12, 0.08, ANGLES, ((0.7, 0.4), (2.0, 1.3)))


class TestGaussianBasics:
    def test_vacuum_probability_of_vacuum(self):
        assert vacuum_state(3).vacuum_probability() == pytest.approx(1.0)

    def test_vacuum_is_physical(self):
        assert vacuum_state(2).is_physical()

    def test_tmsv_thermal_reduction(self):
        # tracing out one arm of a two-mode squeezed state leaves a thermal
        # state whose vacuum weight is 1/cosh^2(r)
        r = 0.37
        state = GaussianState(two_mode_squeezed_cov(r))
        assert state.reduced([0]).vacuum_probability() == \
            pytest.approx(1 / np.cosh(r) ** 2, rel=1e-12)

    def test_measurement_unitary_is_unitary(self):
        u = measurement_unitary(0.7, 1.9)
        assert np.allclose(u @ u.conj().T, np.eye(2), atol=1e-14)

    def test_passive_symplectic_preserves_form(self):
        s = passive_symplectic(measurement_unitary(0.5, 0.8))
        n = s.shape[0] // 2
        omega = np.block([[np.zeros((n, n)), np.eye(n)],
                          [-np.eye(n), np.zeros((n, n))]])
        assert np.allclose(s @ omega @ s.T, omega, atol=1e-13)


class TestClickStatistics:
    def test_distribution_is_normalized(self):
        state = apply_measurement_optics(
            single_pair_covariance(0.1, 0.1),
            ANGLES[0], (0.7, 0.4), Efficiency(0.8))
        probs = click_distribution(noclick_probabilities(state, 3))
        assert probs.shape == (16,)
        assert probs.min() >= 0
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_pattern_outcome_encoding(self):
        probs = np.zeros(16)
        probs[0b1010] = 1.0  # both first detectors click
        out = pattern_to_outcomes(probs)
        assert out[2, 2] == 1.0  # outcome = 2*click1 + click2 on each side

    def test_perfect_efficiency_structural_zeros(self):
        # photons arrive in pairs: one side cannot click alone at eta = 1
        p = assemble_behaviour(PARAMS, Efficiency(1.0))
        for x in range(2):
            for y in range(2):
                assert abs(p.entries[0, 1, x, y]) < 1e-12
                assert abs(p.entries[2, 0, x, y]) < 1e-12

    def test_assembled_behaviour_is_valid(self):
        for eta in (0.6, 1.0):
            p = assemble_behaviour(PARAMS, Efficiency(eta))
            assert validate_behaviour(p) == []

    def test_accepts_plain_float_efficiency(self):
        a = assemble_behaviour(PARAMS, 0.9)
        b = assemble_behaviour(PARAMS, Efficiency(0.9))
        assert np.allclose(a.entries, b.entries)

    def test_more_pairs_more_clicks(self):
        few = SetupParams(1, 0.1, 0.1, ANGLES, ANGLES)
        many = SetupParams(50, 0.1, 0.1, ANGLES, ANGLES)
        p1 = setting_distribution(few, Efficiency(1.0), 0, 0)
        p50 = setting_distribution(many, Efficiency(1.0), 0, 0)
        assert p50[0] < p1[0]  # no-click probability drops with N


class TestSetupParams:
    def test_vector_round_trip(self):
        v = PARAMS.to_vector()
        q = SetupParams.from_vector(v)
        assert q == PARAMS

    def test_asymmetric_split(self):
        v = [1, 0.1, 0.1, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
        q = SetupParams.from_vector(np.array(v), m_a=3)
        assert q.m_a == 3 and q.m_b == 1

    def test_entanglement_ratio(self):
        p = SetupParams(1, 0.1, 0.2, ANGLES, ANGLES)
        assert p.entanglement_ratio == \
            pytest.approx(np.tanh(0.1) / np.tanh(0.2))

    def test_json_round_trip(self):
        q = SetupParams.from_json(PARAMS.to_json())
        assert q == PARAMS

    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            SetupParams(0, 0.1, 0.1, ANGLES, ANGLES)
        with pytest.raises(ValueError):
            SetupParams(1, 0.7, 0.1, ANGLES, ANGLES)


class TestFockOracle:
    def test_truncation_tail_small(self):
        assert truncation_tail(0.15, 0.15, 8) < 1e-12

    def test_agrees_with_gaussian(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(2):
            angles_a = tuple(zip(rng.uniform(0, np.pi, 2),
                                 rng.uniform(0, 2 * np.pi, 2)))
            angles_b = tuple(zip(rng.uniform(0, np.pi, 2),
                                 rng.uniform(0, 2 * np.pi, 2)))
            params = SetupParams(2, 0.15, 0.1, angles_a, angles_b)
            for eta in (0.5, 1.0):
                gauss = pattern_to_outcomes(
                    setting_distribution(params, Efficiency(eta), 0, 1))
                fock = fock_oracle_distribution(params, Efficiency(eta), 0, 1)
                worst = max(worst, float(np.abs(gauss - fock).max()))
        assert worst < 1e-8

    def test_independent_of_gaussian_path(self):
        # sanity check the oracle against an analytic point: at eta = 1 and
        # theta = 0 the two squeezers feed the detectors directly
        params = SetupParams(1, 0.1, 0.0, ((0.0, 0.0),), ((0.0, 0.0),))
        probs = fock_oracle_distribution(params, Efficiency(1.0), 0, 0)
        # only the (a, b_perp) pair is squeezed; vacuum weight 1/cosh^2(g1)
        assert probs.sum() == pytest.approx(1.0, abs=1e-10)
        assert probs[0, 0] == pytest.approx(1 / np.cosh(0.1) ** 2, rel=1e-9)
