import itertools

import numpy as np
import pytest

from qcmm.evidence import MassFunction, TotalConflictError, combine_conjunctive, verify_fusion_correspondence

PI = np.pi


def random_mass(rng, frame_size, n_focal=4):
    subsets = rng.choice(np.arange(1, 1 << frame_size), size=min(n_focal, (1 << frame_size) - 1), replace=False)
    w = rng.dirichlet(np.ones(len(subsets)))
    return MassFunction(frame_size, dict(zip(subsets.tolist(), w)))


def enumerate_combination(m1, m2):
    """Oracle: explicit double loop with the textbook normalization."""
    size = 1 << m1.frame_size
    joint = np.zeros(size)
    for a, b in itertools.product(range(1, size), repeat=2):
        joint[a & b] += m1.get(a) * m2.get(b)
    k = joint[0]
    joint[0] = 0.0
    return joint / (1 - k), k


class TestMassFunction:
    def test_sum_check(self):
        with pytest.raises(ValueError):
            MassFunction(2, {1: 0.5, 2: 0.4})

    def test_empty_set(self):
        with pytest.raises(ValueError):
            MassFunction(2, {0: 0.2, 3: 0.8})

    def test_outside_frame(self):
        with pytest.raises(ValueError):
            MassFunction(2, {4: 1.0})

    def test_from_labels(self):
        m = MassFunction.from_labels(["a", "b"], {"a": 0.6, "ab": 0.4})
        assert m.get(0b01) == 0.6 and m.get(0b11) == 0.4


class TestCombine:
    def test_vacuous_identity(self, rng):
        m = random_mass(rng, 3)
        out, k = combine_conjunctive(m, MassFunction.vacuous(3))
        assert k == 0.0
        assert np.allclose(out.as_vector(), m.as_vector(), atol=1e-15)

    def test_enumerated_example(self):
        m1 = MassFunction.from_labels(["a", "b"], {"a": 0.6, "ab": 0.4})
        m2 = MassFunction.from_labels(["a", "b"], {"b": 0.5, "ab": 0.5})
        out, k = combine_conjunctive(m1, m2)
        assert abs(k - 0.3) <= 1e-12
        assert abs(out.get(0b01) - 3 / 7) <= 1e-12
        assert abs(out.get(0b10) - 2 / 7) <= 1e-12
        assert abs(out.get(0b11) - 2 / 7) <= 1e-12

    def test_idempotent_singleton(self):
        m = MassFunction(2, {1: 1.0})
        out, k = combine_conjunctive(m, m)
        assert k == 0.0 and out.masses == {1: 1.0}

    def test_total_conflict(self):
        with pytest.raises(TotalConflictError):
            combine_conjunctive(MassFunction(2, {1: 1.0}), MassFunction(2, {2: 1.0}))

    def test_frame_mismatch(self):
        with pytest.raises(ValueError):
            combine_conjunctive(MassFunction.vacuous(2), MassFunction.vacuous(3))

    def test_matches_enumeration(self, rng):
        for _ in range(30):
            m1, m2 = random_mass(rng, 3), random_mass(rng, 3)
            try:
                out, k = combine_conjunctive(m1, m2)
            except TotalConflictError:
                continue
            ref, k_ref = enumerate_combination(m1, m2)
            assert k == pytest.approx(k_ref, abs=1e-12)
            assert np.allclose(out.as_vector(), ref, atol=1e-12)

    def test_commutative_bit_exact(self, rng):
        for _ in range(50):
            m1, m2 = random_mass(rng, 4, 6), random_mass(rng, 4, 6)
            a, ka = combine_conjunctive(m1, m2)
            b, kb = combine_conjunctive(m2, m1)
            assert ka == kb and a.masses == b.masses

    def test_associative(self, rng):
        for _ in range(50):
            m1, m2, m3 = (random_mass(rng, 3, 5) for _ in range(3))
            left, _ = combine_conjunctive(combine_conjunctive(m1, m2)[0], m3)
            right, _ = combine_conjunctive(m1, combine_conjunctive(m2, m3)[0])
            assert np.allclose(left.as_vector(), right.as_vector(), atol=1e-12)


class TestCorrespondence:
    def test_full(self):
        r = verify_fusion_correspondence(PI, PI, PI)
        assert r["quantum_mass"] == pytest.approx(1.0) and r["evidential_mass"] == pytest.approx(1.0)
        assert r["abs_diff"] <= 1e-15

    @pytest.mark.parametrize("v_l,theta", [(1.0, 2.0), (PI, PI)])
    def test_inactive(self, v_l, theta):
        r = verify_fusion_correspondence(0.0, v_l, theta)
        assert r["quantum_mass"] == 0.0 and r["evidential_mass"] == 0.0

    def test_hand_value(self):
        # sin^2(pi/4) * sin^2(pi/6) * sin^2(pi/4) = 1/2 * 1/4 * 1/2
        r = verify_fusion_correspondence(PI / 2, PI / 3, PI / 2)
        assert r["quantum_mass"] == pytest.approx(0.0625, abs=1e-12)

    def test_sweep(self, rng):
        worst = max(verify_fusion_correspondence(*t)["abs_diff"] for t in rng.uniform(-2 * PI, 2 * PI, (200, 3)))
        assert worst <= 1e-12
