"""Dense multi-qubit linear algebra.

Qubit 0 is the most significant bit of a basis label (big-endian).  Every
array helper in this module accepts optional leading batch axes, so the same
code path serves single states and whole mini-batches.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 16

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_FLOOR = -1e-9
UNITARY_TOL = 1e-10


class CapacityError(ValueError):
    """Raised when an operator would exceed the configured register size."""


def n_qubits_of(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or (1 << n) != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def _check_capacity(n: int, max_qubits: int = MAX_QUBITS) -> None:
    if n > max_qubits:
        raise CapacityError(f"{n} qubits exceeds the {max_qubits}-qubit limit")


@dataclass(frozen=True)
class DensityMatrix:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValueError("density matrix must be square")
        _check_capacity(n_qubits_of(data.shape[0]))
        object.__setattr__(self, "data", data)

    @property
    def n_qubits(self) -> int:
        return n_qubits_of(self.data.shape[0])

    @classmethod
    def from_pure(cls, state: "PureState | np.ndarray") -> "DensityMatrix":
        amps = state.amplitudes if isinstance(state, PureState) else np.asarray(state, dtype=complex)
        return cls(np.outer(amps, amps.conj()))

    @classmethod
    def basis(cls, label: int, n_qubits: int) -> "DensityMatrix":
        rho = np.zeros((1 << n_qubits, 1 << n_qubits), dtype=complex)
        rho[label, label] = 1.0
        return cls(rho)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        dim = 1 << n_qubits
        return cls(np.eye(dim, dtype=complex) / dim)

    def violations(self) -> list[str]:
        """Return the list of broken invariants (empty when valid)."""
        out = []
        rho = self.data
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            out.append("not Hermitian")
        if abs(np.trace(rho) - 1.0) > TRACE_TOL:
            out.append("trace != 1")
        herm = 0.5 * (rho + rho.conj().T)
        if np.linalg.eigvalsh(herm).min() < PSD_FLOOR:
            out.append("not positive semidefinite")
        return out

    def is_valid(self) -> bool:
        return not self.violations()


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        _check_capacity(n_qubits_of(amps.shape[0]))
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_qubits(self) -> int:
        return n_qubits_of(self.amplitudes.shape[0])

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(np.vdot(self.amplitudes, self.amplitudes).real - 1.0) <= tol


@dataclass(frozen=True)
class GateMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("gate matrix must be square")
        arity = n_qubits_of(m.shape[0])
        if not 1 <= arity <= MAX_QUBITS:
            raise ValueError(f"gate arity {arity} out of range")
        object.__setattr__(self, "matrix", m)

    @property
    def arity(self) -> int:
        return n_qubits_of(self.matrix.shape[0])

    def unitarity_error(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0]))))

    def is_unitary(self) -> bool:
        return self.unitarity_error() <= UNITARY_TOL


def _raw(op) -> np.ndarray:
    if isinstance(op, DensityMatrix):
        return op.data
    if isinstance(op, GateMatrix):
        return op.matrix
    return np.asarray(op)


def kron(a, b, max_qubits: int = MAX_QUBITS) -> np.ndarray:
    """Kronecker product with ``a`` on the most significant qubits."""
    a, b = _raw(a), _raw(b)
    for m in (a, b):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("kron operands must be square")
    n = n_qubits_of(a.shape[0]) + n_qubits_of(b.shape[0])
    _check_capacity(n, max_qubits)
    return np.kron(a, b)


def kron_all(ops: Iterable) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = kron(out, op)
    return out


def _validate_targets(targets: Sequence[int], n: int) -> tuple[int, ...]:
    targets = tuple(int(t) for t in targets)
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate target qubits {targets}")
    for t in targets:
        if not 0 <= t < n:
            raise ValueError(f"target qubit {t} out of range for {n} qubits")
    return targets


# -- batched array kernels ---------------------------------------------------

def _contract(t: np.ndarray, u: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Apply ``u`` (2^k x 2^k) to tensor axes ``axes`` of ``t`` (each of size 2)."""
    k = len(axes)
    ut = u.reshape((2,) * (2 * k))
    out = np.tensordot(ut, t, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def apply_to_ket(psi: np.ndarray, u: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """``u`` on ``targets`` of a (batch of) state vector(s) with shape (..., 2^n)."""
    lead = psi.shape[:-1]
    t = psi.reshape(lead + (2,) * n)
    axes = [len(lead) + q for q in targets]
    return _contract(t, u, axes).reshape(psi.shape)


def apply_to_rho(rho: np.ndarray, u: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Conjugate a (batch of) density matrices by ``u`` placed on ``targets``."""
    lead = rho.shape[:-2]
    nl = len(lead)
    t = rho.reshape(lead + (2,) * (2 * n))
    t = _contract(t, u, [nl + q for q in targets])
    t = _contract(t, u.conj(), [nl + n + q for q in targets])
    return t.reshape(rho.shape)


def trace_out(rho: np.ndarray, discard: Iterable[int], n: int) -> np.ndarray:
    """Partial trace over ``discard``; kept qubits retain their relative order."""
    discard = set(discard)
    keep = [q for q in range(n) if q not in discard]
    lead = rho.shape[:-2]
    nl = len(lead)
    t = rho.reshape(lead + (2,) * (2 * n))
    lead_ix = list(range(nl))
    ket = [nl + q for q in range(n)]
    bra = [nl + n + q if q in keep else nl + q for q in range(n)]
    out_ix = lead_ix + [nl + q for q in keep] + [nl + n + q for q in keep]
    out = np.einsum(t, lead_ix + ket + bra, out_ix)
    dim = 1 << len(keep)
    return out.reshape(lead + (dim, dim))


def embed_identity(g: np.ndarray, keep: Sequence[int], n: int) -> np.ndarray:
    """Adjoint of ``trace_out``: lift an operator on ``keep`` to ``g ⊗ I`` on n qubits."""
    keep = list(keep)
    discard = [q for q in range(n) if q not in keep]
    lead = g.shape[:-2]
    nl = len(lead)
    k = len(keep)
    gt = g.reshape(lead + (2,) * (2 * k))
    eye = np.eye(1 << len(discard)).reshape((2,) * (2 * len(discard)))
    lead_ix = list(range(nl))
    g_ix = lead_ix + [nl + q for q in keep] + [nl + n + q for q in keep]
    e_ix = [nl + q for q in discard] + [nl + n + q for q in discard]
    out_ix = lead_ix + list(range(nl, nl + 2 * n))
    out = np.einsum(gt, g_ix, eye, e_ix, out_ix)
    return out.reshape(lead + (1 << n, 1 << n))


def place(u: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Dense 2^n x 2^n matrix of ``u`` acting on ``targets``, identity elsewhere."""
    targets = _validate_targets(targets, n)
    _check_capacity(n)
    eye = np.eye(1 << n, dtype=complex)
    return apply_to_ket(eye.T, u, targets, n).T


def basis_probabilities(rho: np.ndarray) -> np.ndarray:
    return np.clip(np.real(np.diagonal(rho, axis1=-2, axis2=-1)), 0.0, 1.0)


# -- typed public operations -------------------------------------------------

def apply_unitary(state: DensityMatrix, u: GateMatrix | np.ndarray, targets: Sequence[int]) -> DensityMatrix:
    n = state.n_qubits
    u = u if isinstance(u, GateMatrix) else GateMatrix(u)
    targets = _validate_targets(targets, n)
    if len(targets) != u.arity:
        raise ValueError(f"gate arity {u.arity} does not match {len(targets)} targets")
    return DensityMatrix(apply_to_rho(state.data, u.matrix, targets, n))


def partial_trace(state: DensityMatrix, discard: Iterable[int]) -> DensityMatrix:
    n = state.n_qubits
    discard = tuple(discard)
    _validate_targets(discard, n)
    if len(discard) >= n:
        raise ValueError("cannot trace out every qubit")
    return DensityMatrix(trace_out(state.data, discard, n))


def projector_expectation(state: DensityMatrix, basis_index: int) -> float:
    dim = state.data.shape[0]
    if not 0 <= basis_index < dim:
        raise ValueError(f"basis index {basis_index} out of range for dimension {dim}")
    return float(np.clip(state.data[basis_index, basis_index].real, 0.0, 1.0))
