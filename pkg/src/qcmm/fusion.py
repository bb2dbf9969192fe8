"""Angle encoding and the bit-wise CC-R_y evidential fusion layer.

Fusing feature j only involves the triplet (h_j, l_j, f_j), so after the two
control registers are traced out the fused register is a product of d
single-qubit states.  Those factors have a closed form, which is what the
training path uses; the dense 3d-qubit simulation is kept alongside as a
reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import qtensor as qt
from .gates import CNOT, cc_ry_matrix
from .qtensor import DensityMatrix, PureState

STRATEGIES = ("qcmm", "all-to-all", "circuit-block", "classical")
BASELINE_WIDTH = 4


def _finite_vector(v, name="feature vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite components")
    return v


def encode_amplitudes(v) -> np.ndarray:
    """Per-qubit amplitudes (cos(v/2), sin(v/2)); shape (..., d, 2)."""
    v = np.asarray(v, dtype=float)
    return np.stack([np.cos(v / 2), np.sin(v / 2)], axis=-1)


def angle_encode(v) -> PureState:
    v = _finite_vector(v).reshape(-1)
    psi = np.ones(1)
    for a in encode_amplitudes(v):
        psi = np.kron(psi, a)
    return PureState(psi)


def activation_probability(v_h, v_l):
    """Probability that both control qubits read |1>."""
    return np.sin(np.asarray(v_h) / 2) ** 2 * np.sin(np.asarray(v_l) / 2) ** 2


def triplet_factor(p, theta) -> np.ndarray:
    """Real 2x2 fused target state(s): (1-p)|0><0| + p R_y(theta)|0><0|R_y(theta)^T."""
    p = np.asarray(p, dtype=float)
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    c, s = np.broadcast_arrays(c, s)
    p, c, s = np.broadcast_arrays(p, c, s)
    out = np.empty(p.shape + (2, 2))
    out[..., 0, 0] = 1.0 - p * s * s
    out[..., 0, 1] = out[..., 1, 0] = p * c * s
    out[..., 1, 1] = p * s * s
    return out


def fuse_triplet(v_h: float, v_l: float, theta: float) -> DensityMatrix:
    _finite_vector([v_h, v_l, theta], "fusion input")
    return DensityMatrix(triplet_factor(activation_probability(v_h, v_l), theta))


def fuse_triplet_dense(v_h: float, v_l: float, theta: float) -> DensityMatrix:
    """Reference: 3-qubit statevector through CC-R_y, then trace out both controls."""
    psi = np.kron(np.kron(encode_amplitudes(v_h), encode_amplitudes(v_l)), [1.0, 0.0])
    psi = cc_ry_matrix(theta) @ psi
    return qt.partial_trace(DensityMatrix.from_pure(psi), (0, 1))


@dataclass
class FusedState:
    per_qubit: list[DensityMatrix]
    materialized: Optional[DensityMatrix] = field(default=None, repr=False)

    @property
    def n_qubits(self) -> int:
        return len(self.per_qubit)

    def materialize(self) -> DensityMatrix:
        if self.materialized is None:
            self.materialized = DensityMatrix(qt.kron_all(f.data for f in self.per_qubit))
        return self.materialized


def fuse(v_h, v_l, thetas) -> FusedState:
    v_h, v_l = _finite_vector(v_h).reshape(-1), _finite_vector(v_l).reshape(-1)
    thetas = _finite_vector(thetas, "fusion angles").reshape(-1)
    if not v_h.shape == v_l.shape == thetas.shape:
        raise ValueError(f"length mismatch: v_h {v_h.shape}, v_l {v_l.shape}, thetas {thetas.shape}")
    factors = triplet_factor(activation_probability(v_h, v_l), thetas)
    return FusedState([DensityMatrix(f) for f in factors])


def fusion_gate_count(d: int) -> int:
    return d


def simulate_fusion_dense(v_h, v_l, thetas) -> DensityMatrix:
    """Full (3d)-qubit simulation: registers h | l | f, CC-R_y per triplet, trace h and l."""
    v_h, v_l = np.asarray(v_h, float).reshape(-1), np.asarray(v_l, float).reshape(-1)
    thetas = np.asarray(thetas, float).reshape(-1)
    d = v_h.shape[0]
    n = 3 * d
    psi = angle_encode(np.concatenate([v_h, v_l, np.zeros(d)])).amplitudes
    for j in range(d):
        psi = qt.apply_to_ket(psi, cc_ry_matrix(thetas[j]), (j, d + j, 2 * d + j), n)
    rho = DensityMatrix.from_pure(psi)
    return qt.partial_trace(rho, range(2 * d))


def belief_mass(theta):
    return np.sin(np.asarray(theta, dtype=float) / 2) ** 2


# -- entangling baselines ----------------------------------------------------

def baseline_cnots(strategy: str) -> list[tuple[int, int]]:
    """(control, target) CNOT list over the 4+4 qubit register, in circuit order."""
    w = BASELINE_WIDTH
    if strategy == "circuit-block":
        return [(i, w + j) for i in range(w) for j in range(w)]
    if strategy == "all-to-all":
        n = 2 * w
        return [(i, (i + stride) % n) for stride in (1, 2, 4) for i in range(n)]
    raise ValueError(f"no CNOT topology for strategy {strategy!r}")


def cnot_permutation(cnots: list[tuple[int, int]], n: int) -> np.ndarray:
    """Basis permutation of a CNOT network: ``out[perm[x]] = in[x]``."""
    x = np.arange(1 << n)
    for c, t in cnots:
        cbit = (x >> (n - 1 - c)) & 1
        x = x ^ (cbit << (n - 1 - t))
    return x


def fuse_baseline(strategy: str, v_h, v_l) -> PureState:
    v_h, v_l = _finite_vector(v_h).reshape(-1), _finite_vector(v_l).reshape(-1)
    if v_h.shape[0] != BASELINE_WIDTH or v_l.shape[0] != BASELINE_WIDTH:
        raise ValueError(f"baseline fusion expects {BASELINE_WIDTH}+{BASELINE_WIDTH} features")
    n = 2 * BASELINE_WIDTH
    psi = angle_encode(np.concatenate([v_h, v_l])).amplitudes
    for c, t in baseline_cnots(strategy):
        psi = qt.apply_to_ket(psi, CNOT, (c, t), n)
    return PureState(psi)
