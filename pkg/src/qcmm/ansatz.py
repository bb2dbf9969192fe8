"""Two-qubit convolution kernels, the pooling unit, and layer plans.

Kernel wiring is stored as an ordered list of placed gates on local wires
0 (top, most significant) and 1 (bottom).  Two-qubit entries list their wires
as (control, target).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import qtensor as qt
from .gates import GateSpec, P0, P1, rotation_derivative, rotation_matrix
from .qtensor import DensityMatrix, GateMatrix


@dataclass(frozen=True)
class KernelStep:
    kind: str
    wires: tuple[int, ...]
    params: tuple[int, ...] = ()


@dataclass(frozen=True)
class KernelTemplate:
    name: str
    param_count: int
    steps: tuple[KernelStep, ...]

    @property
    def is_real(self) -> bool:
        """True when every gate in the template has a real matrix."""
        return all(s.kind in ("RY", "CNOT", "CZ", "H", "X") for s in self.steps)


def _s(kind, wires, *params):
    return KernelStep(kind, tuple(wires), tuple(params))


KERNELS: dict[str, KernelTemplate] = {t.name: t for t in (
    KernelTemplate("TTN", 2, (
        _s("RY", [0], 0), _s("RY", [1], 1), _s("CNOT", [0, 1]),
    )),
    KernelTemplate("U5", 10, (
        _s("RX", [0], 0), _s("RX", [1], 1), _s("RZ", [0], 2), _s("RZ", [1], 3),
        _s("CRZ", [1, 0], 4), _s("CRZ", [0, 1], 5),
        _s("RX", [0], 6), _s("RX", [1], 7), _s("RZ", [0], 8), _s("RZ", [1], 9),
    )),
    KernelTemplate("U6", 10, (
        _s("RX", [0], 0), _s("RX", [1], 1), _s("RZ", [0], 2), _s("RZ", [1], 3),
        _s("CRX", [1, 0], 4), _s("CRX", [0, 1], 5),
        _s("RX", [0], 6), _s("RX", [1], 7), _s("RZ", [0], 8), _s("RZ", [1], 9),
    )),
    KernelTemplate("U9", 2, (
        _s("H", [0]), _s("H", [1]), _s("CZ", [0, 1]), _s("RX", [0], 0), _s("RX", [1], 1),
    )),
    KernelTemplate("U13", 6, (
        _s("RY", [0], 0), _s("RY", [1], 1), _s("CRZ", [1, 0], 2),
        _s("RY", [0], 3), _s("RY", [1], 4), _s("CRZ", [0, 1], 5),
    )),
    KernelTemplate("U14", 6, (
        _s("RY", [0], 0), _s("RY", [1], 1), _s("CRX", [1, 0], 2),
        _s("RY", [0], 3), _s("RY", [1], 4), _s("CRX", [0, 1], 5),
    )),
    KernelTemplate("U15", 4, (
        _s("RY", [0], 0), _s("RY", [1], 1), _s("CNOT", [1, 0]),
        _s("RY", [0], 2), _s("RY", [1], 3), _s("CNOT", [0, 1]),
    )),
    KernelTemplate("SO4", 6, (
        _s("RY", [0], 0), _s("RY", [1], 1), _s("CNOT", [0, 1]),
        _s("RY", [0], 2), _s("RY", [1], 3), _s("CNOT", [0, 1]),
        _s("RY", [0], 4), _s("RY", [1], 5),
    )),
    KernelTemplate("SU4", 15, (
        _s("U3", [0], 0, 1, 2), _s("U3", [1], 3, 4, 5), _s("CNOT", [0, 1]),
        _s("RY", [0], 6), _s("RZ", [1], 7), _s("CNOT", [1, 0]),
        _s("RY", [0], 8), _s("CNOT", [0, 1]),
        _s("U3", [0], 9, 10, 11), _s("U3", [1], 12, 13, 14),
    )),
)}

KERNEL_NAMES = tuple(KERNELS)


def get_kernel(name: str) -> KernelTemplate:
    try:
        return KERNELS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; expected one of {', '.join(KERNEL_NAMES)}") from None


def _step_spec(step: KernelStep, params: np.ndarray) -> GateSpec:
    return GateSpec(step.kind, tuple(params[i] for i in step.params))


def _local(m: np.ndarray, wires: Sequence[int]) -> np.ndarray:
    return qt.place(m, wires, 2)


def _check_params(template: KernelTemplate, params) -> np.ndarray:
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.shape[0] != template.param_count:
        raise ValueError(f"{template.name} takes {template.param_count} parameters, got {params.shape[0]}")
    return params


def kernel_matrix(template: KernelTemplate, params) -> np.ndarray:
    params = _check_params(template, params)
    u = np.eye(4, dtype=complex)
    for step in template.steps:
        u = _local(_step_spec(step, params).matrix(), step.wires) @ u
    return u


def instantiate_kernel(template: KernelTemplate | str, params) -> GateMatrix:
    if isinstance(template, str):
        template = get_kernel(template)
    return GateMatrix(kernel_matrix(template, params))


def kernel_derivatives(template: KernelTemplate, params) -> np.ndarray:
    """Array (param_count, 4, 4) of exact derivatives of the kernel matrix."""
    params = _check_params(template, params)
    placed = [_local(_step_spec(s, params).matrix(), s.wires) for s in template.steps]
    out = np.zeros((template.param_count, 4, 4), dtype=complex)
    for k, step in enumerate(template.steps):
        if not step.params:
            continue
        before = np.eye(4, dtype=complex)
        for m in placed[:k]:
            before = m @ before
        after = np.eye(4, dtype=complex)
        for m in placed[k + 1:]:
            after = m @ after
        for pi, d in zip(step.params, _step_spec(step, params).derivatives()):
            out[pi] += after @ _local(d, step.wires) @ before
    return out


# -- pooling -----------------------------------------------------------------

def pooling_matrix(v1: float, v2: float) -> np.ndarray:
    return np.kron(P0, rotation_matrix("X", v2)) + np.kron(P1, rotation_matrix("Z", v1))


def pooling_unit(v1: float, v2: float) -> GateMatrix:
    """Source on the most significant qubit: R_z(v1) on the target if it is |1>, R_x(v2) if |0>."""
    return GateMatrix(pooling_matrix(v1, v2))


def pooling_branches(v1: float, v2: float) -> np.ndarray:
    """Target rotations indexed by source value: [R_x(v2), R_z(v1)]."""
    return np.stack([rotation_matrix("X", v2), rotation_matrix("Z", v1)])


def pooling_branch_derivatives(v1: float, v2: float) -> np.ndarray:
    """d(branches)/d(v1, v2) with shape (2 params, 2 branches, 2, 2)."""
    zero = np.zeros((2, 2), dtype=complex)
    return np.stack([
        np.stack([zero, rotation_derivative("Z", v1)]),
        np.stack([rotation_derivative("X", v2), zero]),
    ])


# -- layer plans -------------------------------------------------------------

@dataclass(frozen=True)
class LayerPlan:
    n_qubits: int
    kernel: KernelTemplate
    sublayer_a_pairs: tuple[tuple[int, int], ...]
    sublayer_b_pairs: tuple[tuple[int, int], ...]
    pool_pairs: tuple[tuple[int, int], ...]

    @classmethod
    def build(cls, n_qubits: int, kernel: KernelTemplate | str) -> "LayerPlan":
        if isinstance(kernel, str):
            kernel = get_kernel(kernel)
        if n_qubits < 4 or n_qubits % 2:
            raise ValueError(f"layer width must be even and >= 4, got {n_qubits}")
        n = n_qubits
        a = tuple((2 * k, 2 * k + 1) for k in range(n // 2))
        b = tuple((2 * k + 1, (2 * k + 2) % n) for k in range(n // 2))
        pool = tuple((2 * k + 1, 2 * k) for k in range(n // 2))
        return cls(n, kernel, a, b, pool)

    @property
    def conv_pairs(self) -> tuple[tuple[int, int], ...]:
        return self.sublayer_a_pairs + self.sublayer_b_pairs

    @property
    def survivors(self) -> tuple[int, ...]:
        return tuple(t for _, t in self.pool_pairs)

    @property
    def sources(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.pool_pairs)


def conv_layer(plan: LayerPlan, kernel_params) -> GateMatrix:
    """Dense U_c = (sublayer B) . (sublayer A) over plan.n_qubits."""
    u = kernel_matrix(plan.kernel, kernel_params)
    n = plan.n_qubits
    total = np.eye(1 << n, dtype=complex)
    for pair in plan.conv_pairs:
        total = qt.place(u, pair, n) @ total
    return GateMatrix(total)


def apply_conv(rho: np.ndarray, plan: LayerPlan, u: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """Schroedinger (or, with ``adjoint``, Heisenberg) action of a conv layer on batched arrays."""
    n = plan.n_qubits
    if adjoint:
        ud = u.conj().T
        for pair in reversed(plan.conv_pairs):
            rho = qt.apply_to_rho(rho, ud, pair, n)
        return rho
    for pair in plan.conv_pairs:
        rho = qt.apply_to_rho(rho, u, pair, n)
    return rho


def _block_index(plan: LayerPlan) -> tuple[np.ndarray, np.ndarray]:
    """Row/column basis indices of every (source config, target row, target col) entry."""
    n = plan.n_qubits
    m = n // 2
    s = np.arange(1 << m)
    t = np.arange(1 << m)
    label = np.zeros((1 << m, 1 << m), dtype=np.intp)
    for i, (src, tgt) in enumerate(zip(plan.sources, plan.survivors)):
        bit = m - 1 - i
        label += (((s >> bit) & 1) << (n - 1 - src))[:, None]
        label += (((t >> bit) & 1) << (n - 1 - tgt))[None, :]
    return label[:, :, None], label[:, None, :]


def _source_blocks(rho: np.ndarray, plan: LayerPlan) -> np.ndarray:
    """Diagonal source blocks: shape (..., 2^m sources, 2^m, 2^m) over targets."""
    rows, cols = _block_index(plan)
    return rho[..., rows, cols]


def _kron_stack(w: np.ndarray, m: int) -> np.ndarray:
    """All m-fold tensor products of the 2x2 matrices in ``w`` (bit 0 of the index picks the last factor)."""
    out = w
    for _ in range(m - 1):
        k, d = out.shape[0], out.shape[1]
        out = np.einsum("sab,tcd->stacbd", out, w).reshape(k * 2, d * 2, d * 2)
    return out


def branch_unitaries(plan: LayerPlan, v1: float, v2: float) -> np.ndarray:
    """V_s = tensor of per-target branch rotations for each source configuration s."""
    return _kron_stack(pooling_branches(v1, v2), plan.n_qubits // 2)


def branch_unitary_derivatives(plan: LayerPlan, v1: float, v2: float) -> np.ndarray:
    """dV_s/d(v1, v2): shape (2, 2^m, 2^m, 2^m)."""
    m = plan.n_qubits // 2
    w = pooling_branches(v1, v2)
    dw = pooling_branch_derivatives(v1, v2)
    out = []
    for p in range(2):
        # product rule, carried factor by factor
        val, der = w, dw[p]
        for _ in range(m - 1):
            k, d = val.shape[0], val.shape[1]
            shape = (k * 2, d * 2, d * 2)
            der = (np.einsum("sab,tcd->stacbd", der, w) + np.einsum("sab,tcd->stacbd", val, dw[p])).reshape(shape)
            val = np.einsum("sab,tcd->stacbd", val, w).reshape(shape)
        out.append(der)
    return np.stack(out)


def pool_arrays(rho: np.ndarray, plan: LayerPlan, v1: float, v2: float) -> np.ndarray:
    """Pool units on every (source, target) pair, then trace out the sources.

    Tracing a control qubit leaves sum_s V_s rho_ss V_s^dagger, so the dense
    2^n-dimensional gate application is skipped entirely.
    """
    blocks = _source_blocks(rho, plan)
    v = branch_unitaries(plan, v1, v2)
    return (v @ blocks @ np.swapaxes(v.conj(), -1, -2)).sum(axis=-3)


def pool_adjoint(g: np.ndarray, plan: LayerPlan, v1: float, v2: float) -> np.ndarray:
    """Heisenberg action of ``pool_arrays``: lift an observable on survivors to n qubits."""
    n = plan.n_qubits
    v = branch_unitaries(plan, v1, v2)
    inner = np.swapaxes(v.conj(), -1, -2) @ g[..., None, :, :] @ v
    rows, cols = _block_index(plan)
    out = np.zeros(g.shape[:-2] + (1 << n, 1 << n), dtype=inner.dtype)
    out[..., rows, cols] = inner
    return out


def pool_layer(state: DensityMatrix, plan: LayerPlan, v1: float, v2: float) -> DensityMatrix:
    if state.n_qubits != plan.n_qubits:
        raise ValueError(f"state has {state.n_qubits} qubits, plan expects {plan.n_qubits}")
    return DensityMatrix(pool_arrays(state.data, plan, v1, v2))


def pool_layer_dense(state: DensityMatrix, plan: LayerPlan, v1: float, v2: float) -> DensityMatrix:
    """Reference path: apply every pooling unit on the full register, then trace."""
    u = pooling_matrix(v1, v2)
    rho = state
    for pair in plan.pool_pairs:
        rho = qt.apply_unitary(rho, u, pair)
    return qt.partial_trace(rho, plan.sources)
