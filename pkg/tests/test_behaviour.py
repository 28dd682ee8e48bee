import numpy as np
import pytest

from dicert.behaviour import (
    BIN_B,
    BIN_B_PRIME,
    BIN_ONE_DETECTOR,
    BellFunctional,
    Behaviour,
    Scenario,
    apply_binning,
    behaviour_from_json,
    behaviour_to_json,
    bell_value,
    binning,
    chsh_eta_behaviour,
    chsh_functional,
    compose_binnings,
    deterministic_behaviour,
    from_collins_gisin,
    is_local,
    local_deterministic_points,
    to_collins_gisin,
    validate_behaviour,
)


def tsirelson_behaviour():
    c, s = (2 + np.sqrt(2)) / 8, (2 - np.sqrt(2)) / 8
    entries = np.zeros((2, 2, 2, 2))
    for x in range(2):
        for y in range(2):
            flip = 1 if (x == 1 and y == 1) else 0
            for a in range(2):
                for b in range(2):
                    entries[a, b, x, y] = c if (a + b) % 2 == flip else s
    return Behaviour(Scenario(2, 2, 2, 2), entries)


class TestScenario:
    def test_cg_shape(self):
        assert Scenario(2, 2, 4, 4).cg_shape == (7, 7)
        assert Scenario(3, 2, 4, 4).cg_shape == (10, 7)

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            Scenario(0, 2, 2, 2)
        with pytest.raises(ValueError):
            Scenario(2, 2, 1, 2)


class TestBehaviour:
    def test_entries_immutable(self):
        p = deterministic_behaviour(Scenario(2, 2, 2, 2), (0, 0), (0, 0))
        with pytest.raises(ValueError):
            p.entries[0, 0, 0, 0] = 0.5

    def test_validation_passes_on_quantum_point(self):
        assert validate_behaviour(tsirelson_behaviour()) == []

    def test_validation_catches_signalling(self):
        entries = np.zeros((2, 2, 2, 2))
        entries[0, 0] = 1.0
        # Bob's y=0 marginal now depends on Alice's input: signalling
        entries[:, :, 1, 0] = [[0.5, 0.5], [0.0, 0.0]]
        p = Behaviour(Scenario(2, 2, 2, 2), entries)
        kinds = {v[0] for v in validate_behaviour(p)}
        assert "no-signalling" in kinds

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Behaviour(Scenario(2, 2, 2, 2), np.zeros((3, 2, 2, 2)))


class TestCollinsGisin:
    def test_round_trip(self):
        p = chsh_eta_behaviour(0.9)
        q = from_collins_gisin(to_collins_gisin(p))
        assert np.allclose(q.entries, p.entries, atol=1e-12)

    def test_corner_is_one(self):
        t = to_collins_gisin(tsirelson_behaviour())
        assert t.coefficients[0, 0] == 1.0


class TestBinning:
    def test_normalisation_preserved(self):
        p = chsh_eta_behaviour(0.85)
        q = apply_binning(p, binning(BIN_B, BIN_B_PRIME))
        assert q.scenario == Scenario(2, 2, 2, 2)
        assert np.allclose(q.entries.sum(axis=(0, 1)), 1.0)

    def test_one_detector_marginalizes_second_detector(self):
        rng = np.random.default_rng(3)
        w = rng.dirichlet(np.ones(16))
        entries = np.zeros((4, 4, 1, 1))
        entries[:, :, 0, 0] = w.reshape(4, 4)
        p = Behaviour(Scenario(1, 1, 4, 4), entries)
        q = apply_binning(p, binning(BIN_ONE_DETECTOR, BIN_ONE_DETECTOR))
        # outcome index is 2*click1 + click2; the binned bit is click1
        expected = np.zeros((2, 2))
        for a in range(4):
            for b in range(4):
                expected[a // 2, b // 2] += w.reshape(4, 4)[a, b]
        assert np.allclose(q.entries[:, :, 0, 0], expected)

    def test_compose(self):
        first = binning((0, 1, 2, 0), (0, 1, 2, 0))
        second = binning(BIN_B, BIN_B)
        both = compose_binnings(first, second)
        p = chsh_eta_behaviour(0.9)
        # pad to 4 outcomes with an empty last outcome to use the 4-maps
        entries = np.zeros((4, 4, 2, 2))
        entries[:3, :3] = p.entries
        p4 = Behaviour(Scenario(2, 2, 4, 4), entries)
        a = apply_binning(apply_binning(p4, first), second)
        b = apply_binning(p4, both)
        assert np.allclose(a.entries, b.entries)


class TestBellFunctional:
    def test_chsh_local_bound(self):
        chsh = chsh_functional(Scenario(2, 2, 2, 2))
        values = [bell_value(q, chsh)
                  for q in local_deterministic_points(Scenario(2, 2, 2, 2))]
        assert max(values) == pytest.approx(2.0)

    def test_chsh_tsirelson(self):
        chsh = chsh_functional(Scenario(2, 2, 2, 2))
        assert bell_value(tsirelson_behaviour(), chsh) == \
            pytest.approx(2 * np.sqrt(2))

    def test_exactly_one_coefficient_set(self):
        s = Scenario(2, 2, 2, 2)
        with pytest.raises(ValueError):
            BellFunctional(s, cg=np.zeros(s.cg_shape),
                           full=np.zeros((2, 2, 2, 2)))


class TestLocality:
    def test_deterministic_is_local(self):
        p = deterministic_behaviour(Scenario(2, 2, 2, 2), (0, 1), (1, 0))
        assert is_local(p)

    def test_tsirelson_is_not_local(self):
        assert not is_local(tsirelson_behaviour())

    def test_chsh_eta_threshold(self):
        # the noisy CHSH behaviour stays nonlocal above 2*sqrt(2)-2 only
        assert not is_local(chsh_eta_behaviour(0.9))
        assert is_local(chsh_eta_behaviour(0.8))


class TestSerialization:
    def test_round_trip(self):
        p = chsh_eta_behaviour(0.93)
        q = behaviour_from_json(behaviour_to_json(p))
        assert q.scenario == p.scenario
        assert np.allclose(q.entries, p.entries, atol=1e-14)

    def test_records_have_full_precision(self):
        text = behaviour_to_json(tsirelson_behaviour())
        q = behaviour_from_json(text)
        assert np.abs(q.entries - tsirelson_behaviour().entries).max() < 1e-15
