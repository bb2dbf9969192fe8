"""Gate constructors.

Rotations follow R_a(phi) = exp(-i phi sigma_a / 2).  In multi-qubit gates the
control qubits are the most significant ones; where a gate lands in a register
is decided by the target list passed at application time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .qtensor import GateMatrix

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
P0 = np.array([[1, 0], [0, 0]], dtype=complex)
P1 = np.array([[0, 0], [0, 1]], dtype=complex)
CNOT = np.kron(P0, I2) + np.kron(P1, X)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)

PAULI = {"X": X, "Y": Y, "Z": Z}

PARAM_COUNTS = {
    "RX": 1, "RY": 1, "RZ": 1, "U3": 3,
    "H": 0, "X": 0, "CNOT": 0, "CZ": 0,
    "CRX": 1, "CRZ": 1, "ANTI-CRX": 1, "CCRY": 1,
}


def _finite(*angles: float) -> None:
    for a in angles:
        if not math.isfinite(a):
            raise ValueError(f"non-finite angle {a!r}")


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    _finite(angle)
    sigma = PAULI[axis.upper()]
    return math.cos(angle / 2) * I2 - 1j * math.sin(angle / 2) * sigma


def rotation_derivative(axis: str, angle: float) -> np.ndarray:
    sigma = PAULI[axis.upper()]
    return -0.5j * sigma @ rotation_matrix(axis, angle)


def rotation(axis: str, angle: float) -> GateMatrix:
    return GateMatrix(rotation_matrix(axis, angle))


def u3_matrix(theta: float, phi: float, lam: float) -> np.ndarray:
    _finite(theta, phi, lam)
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([
        [c, -np.exp(1j * lam) * s],
        [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c],
    ], dtype=complex)


def u3_derivatives(theta: float, phi: float, lam: float) -> list[np.ndarray]:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    el, ep, epl = np.exp(1j * lam), np.exp(1j * phi), np.exp(1j * (phi + lam))
    d_theta = 0.5 * np.array([[-s, -el * c], [ep * c, -epl * s]], dtype=complex)
    d_phi = np.array([[0, 0], [1j * ep * s, 1j * epl * c]], dtype=complex)
    d_lam = np.array([[0, -1j * el * s], [0, 1j * epl * c]], dtype=complex)
    return [d_theta, d_phi, d_lam]


def u3(theta: float, phi: float, lam: float) -> GateMatrix:
    return GateMatrix(u3_matrix(theta, phi, lam))


def controlled_matrix(base: np.ndarray, on_one: bool = True) -> np.ndarray:
    active, idle = (P1, P0) if on_one else (P0, P1)
    return np.kron(idle, I2) + np.kron(active, base)


def controlled(base: GateMatrix | np.ndarray, control_polarity: str = "on-1") -> GateMatrix:
    """Two-qubit gate: control on the first (most significant) qubit.

    ``control_polarity`` is ``"on-1"`` (filled dot) or ``"on-0"`` (open dot).
    """
    m = base.matrix if isinstance(base, GateMatrix) else np.asarray(base, dtype=complex)
    if m.shape != (2, 2):
        raise ValueError("controlled() expects a single-qubit base gate")
    if control_polarity not in ("on-1", "on-0"):
        raise ValueError(f"unknown control polarity {control_polarity!r}")
    return GateMatrix(controlled_matrix(m, control_polarity == "on-1"))


def cc_ry_matrix(theta: float) -> np.ndarray:
    both = np.kron(P1, P1)
    return np.kron(np.eye(4) - both, I2) + np.kron(both, rotation_matrix("Y", theta))


def cc_ry(theta: float) -> GateMatrix:
    return GateMatrix(cc_ry_matrix(theta))


@dataclass(frozen=True)
class GateSpec:
    kind: str
    params: tuple[float, ...] = field(default=())

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in PARAM_COUNTS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != PARAM_COUNTS[kind]:
            raise ValueError(f"{kind} takes {PARAM_COUNTS[kind]} parameters, got {len(params)}")
        _finite(*params)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)

    @property
    def arity(self) -> int:
        if self.kind == "CCRY":
            return 3
        if self.kind in ("CNOT", "CZ", "CRX", "CRZ", "ANTI-CRX"):
            return 2
        return 1

    def matrix(self) -> np.ndarray:
        k, p = self.kind, self.params
        if k in ("RX", "RY", "RZ"):
            return rotation_matrix(k[1], p[0])
        if k == "U3":
            return u3_matrix(*p)
        if k == "CRX":
            return controlled_matrix(rotation_matrix("X", p[0]))
        if k == "CRZ":
            return controlled_matrix(rotation_matrix("Z", p[0]))
        if k == "ANTI-CRX":
            return controlled_matrix(rotation_matrix("X", p[0]), on_one=False)
        if k == "CCRY":
            return cc_ry_matrix(p[0])
        return {"H": H, "X": X, "CNOT": CNOT, "CZ": CZ}[k].copy()

    def derivatives(self) -> list[np.ndarray]:
        """d(matrix)/d(param_i) for each parameter, in parameter order."""
        k, p = self.kind, self.params
        if k in ("RX", "RY", "RZ"):
            return [rotation_derivative(k[1], p[0])]
        if k == "U3":
            return u3_derivatives(*p)
        if k in ("CRX", "CRZ", "ANTI-CRX"):
            axis = "Z" if k == "CRZ" else "X"
            proj = P0 if k == "ANTI-CRX" else P1
            return [np.kron(proj, rotation_derivative(axis, p[0]))]
        if k == "CCRY":
            return [np.kron(np.kron(P1, P1), rotation_derivative("Y", p[0]))]
        return []

    def gate(self) -> GateMatrix:
        return GateMatrix(self.matrix())
