import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcmm import gates
from qcmm.gates import CNOT, GateSpec, I2, P0, P1, X, cc_ry, controlled, rotation, u3

angles = st.floats(-10, 10, allow_nan=False)


def expm_herm(h, t):
    # matrix exponential exp(-i t h / 2) via eigendecomposition, independent of the closed forms
    w, v = np.linalg.eigh(h)
    return v @ np.diag(np.exp(-0.5j * t * w)) @ v.conj().T


class TestRotation:
    def test_zero(self):
        assert np.allclose(rotation("Y", 0).matrix, np.eye(2))

    def test_half_turn(self):
        out = rotation("Y", np.pi).matrix @ np.array([1, 0])
        assert abs(out[1]) == pytest.approx(1.0)

    def test_rz_quarter(self):
        m = rotation("Z", np.pi / 2).matrix
        assert np.allclose(m, np.diag([np.exp(-1j * np.pi / 4), np.exp(1j * np.pi / 4)]))

    @pytest.mark.parametrize("axis", "XYZ")
    def test_matches_exponential(self, axis):
        for t in (-1.3, 0.4, 2.9):
            assert np.allclose(rotation(axis, t).matrix, expm_herm(gates.PAULI[axis], t), atol=1e-12)

    def test_ry_on_zero(self):
        phi = 0.77
        out = rotation("Y", phi).matrix @ np.array([1, 0])
        assert np.allclose(out, [np.cos(phi / 2), np.sin(phi / 2)])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            rotation("X", float("nan"))

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from("XYZ"), angles, angles)
    def test_composition(self, axis, a, b):
        lhs = rotation(axis, a).matrix @ rotation(axis, b).matrix
        assert np.allclose(lhs, rotation(axis, a + b).matrix, atol=1e-10)

    @pytest.mark.parametrize("axis", "XYZ")
    def test_derivative(self, axis):
        e, t = 1e-6, 0.9
        fd = (gates.rotation_matrix(axis, t + e) - gates.rotation_matrix(axis, t - e)) / (2 * e)
        assert np.allclose(gates.rotation_derivative(axis, t), fd, atol=1e-9)


class TestU3:
    def test_identity(self):
        assert np.allclose(u3(0, 0, 0).matrix, np.eye(2))

    def test_pauli_x(self):
        assert np.allclose(u3(np.pi, 0, np.pi).matrix, X, atol=1e-12)

    def test_element(self):
        assert u3(1.1, 0, 0).matrix[1, 0] == pytest.approx(np.sin(0.55))

    def test_derivatives(self):
        p = np.array([0.3, -1.2, 2.2])
        for i, d in enumerate(gates.u3_derivatives(*p)):
            e = np.zeros(3)
            e[i] = 1e-6
            fd = (gates.u3_matrix(*(p + e)) - gates.u3_matrix(*(p - e))) / 2e-6
            assert np.allclose(d, fd, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(angles, angles, angles)
    def test_unitary(self, a, b, c):
        assert u3(a, b, c).is_unitary()


class TestControlled:
    def test_cnot(self):
        assert np.allclose(controlled(X, "on-1").matrix, CNOT)

    def test_inactive_control(self, rng):
        psi = rng.normal(size=2) + 1j * rng.normal(size=2)
        state = np.kron([1, 0], psi)
        out = controlled(rotation("Z", 0.8), "on-1").matrix @ state
        assert np.allclose(out, state)

    def test_open_control(self):
        out = controlled(rotation("X", np.pi), "on-0").matrix @ np.array([1, 0, 0, 0])
        assert np.allclose(out, [0, -1j, 0, 0])
        assert abs(out[1]) ** 2 == pytest.approx(1.0)

    def test_bad_polarity(self):
        with pytest.raises(ValueError):
            controlled(X, "on-2")

    def test_bad_base(self):
        with pytest.raises(ValueError):
            controlled(CNOT)


class TestCCRy:
    def test_zero(self):
        assert np.allclose(cc_ry(0).matrix, np.eye(8))

    def test_toffoli_like(self):
        out = cc_ry(np.pi).matrix @ np.eye(8)[6]
        assert abs(out[7]) ** 2 == pytest.approx(1.0)

    def test_half(self):
        out = cc_ry(np.pi / 2).matrix @ np.eye(8)[6]
        assert np.allclose(out, np.cos(np.pi / 4) * np.eye(8)[6] + np.sin(np.pi / 4) * np.eye(8)[7])

    def test_projector_construction(self):
        both = np.kron(P1, P1)
        ref = np.kron(np.eye(4) - both, I2) + np.kron(both, gates.rotation_matrix("Y", np.pi))
        assert np.max(np.abs(cc_ry(np.pi).matrix - ref)) <= 1e-12

    def test_inactive_when_any_control_zero(self, rng):
        m = cc_ry(1.7).matrix
        assert np.allclose(m[:6, :6], np.eye(6))


class TestGateSpec:
    @pytest.mark.parametrize("kind,n", sorted(gates.PARAM_COUNTS.items()))
    def test_param_counts_and_unitarity(self, kind, n, rng):
        spec = GateSpec(kind, tuple(rng.uniform(-3, 3, n)))
        assert spec.gate().is_unitary()
        assert spec.gate().arity == spec.arity
        assert len(spec.derivatives()) == n

    @pytest.mark.parametrize("kind", ["RX", "CRZ", "CRX", "ANTI-CRX", "CCRY", "U3"])
    def test_derivatives_match_fd(self, kind, rng):
        n = gates.PARAM_COUNTS[kind]
        p = rng.uniform(-3, 3, n)
        for i, d in enumerate(GateSpec(kind, tuple(p)).derivatives()):
            e = np.zeros(n)
            e[i] = 1e-6
            fd = (GateSpec(kind, tuple(p + e)).matrix() - GateSpec(kind, tuple(p - e)).matrix()) / 2e-6
            assert np.allclose(d, fd, atol=1e-9)

    def test_wrong_count(self):
        with pytest.raises(ValueError):
            GateSpec("RY", (1.0, 2.0))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            GateSpec("SWAPPY")

    def test_anti_crx_block(self):
        m = GateSpec("ANTI-CRX", (0.5,)).matrix()
        assert np.allclose(m[:2, :2], gates.rotation_matrix("X", 0.5))
        assert np.allclose(m[2:, 2:], np.eye(2))

    def test_constants_unitary(self):
        for m in (gates.H, gates.CNOT, gates.CZ, gates.SWAP, X):
            assert np.allclose(m @ m.conj().T, np.eye(m.shape[0]))
        assert np.allclose(P0 + P1, I2)
