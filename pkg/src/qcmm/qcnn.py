"""Hierarchical QCNN classifier: conv + pool blocks, then a 2-qubit Born readout.

Two equivalent evaluation routes are provided.  ``forward_arrays`` pushes
states through the circuit (Schroedinger picture).  ``observables`` pulls the
four class projectors back to the input register (Heisenberg picture); since
the circuit depends only on the QCNN parameters, one pull-back serves every
sample in a batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import qtensor as qt
from .ansatz import (
    LayerPlan,
    apply_conv,
    get_kernel,
    kernel_matrix,
    pool_adjoint,
    pool_arrays,
)
from .fusion import FusedState
from .qtensor import DensityMatrix, PureState

N_CLASSES = 4
POOL_PARAMS = 2


@dataclass(frozen=True)
class QcnnConfig:
    kernel_name: str = "SO4"
    n_qubits_in: int = 8
    blocks: int = 2

    def __post_init__(self):
        get_kernel(self.kernel_name)
        if self.blocks not in (1, 2):
            raise ValueError("only 1 or 2 conv-pool blocks are supported")
        if self.n_qubits_in != 8:
            raise ValueError("the classifier reads an 8-qubit register")

    @property
    def kernel(self):
        return get_kernel(self.kernel_name)

    @property
    def plans(self) -> list[LayerPlan]:
        widths = [self.n_qubits_in >> b for b in range(self.blocks)]
        return [LayerPlan.build(w, self.kernel) for w in widths]

    @property
    def n_out(self) -> int:
        return self.n_qubits_in >> self.blocks

    @property
    def block_param_count(self) -> int:
        return self.kernel.param_count + POOL_PARAMS


@dataclass
class QcnnParams:
    conv: list[np.ndarray]
    pool: list[np.ndarray]

    @classmethod
    def zeros(cls, config: QcnnConfig) -> "QcnnParams":
        k = config.kernel.param_count
        return cls([np.zeros(k) for _ in range(config.blocks)],
                   [np.zeros(POOL_PARAMS) for _ in range(config.blocks)])

    @classmethod
    def random(cls, config: QcnnConfig, rng: np.random.Generator) -> "QcnnParams":
        k = config.kernel.param_count
        conv, pool = [], []
        for _ in range(config.blocks):
            conv.append(rng.uniform(0.0, 2 * np.pi, k))
            pool.append(rng.uniform(0.0, 2 * np.pi, POOL_PARAMS))
        return cls(conv, pool)


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray

    @property
    def label(self) -> int:
        return int(np.argmax(self.probs))


def count_parameters(config: QcnnConfig, d: int) -> dict:
    qcnn = config.blocks * config.block_param_count
    return {"fusion": d, "qcnn": qcnn, "total_quantum": d + qcnn}


def _readout_keep(config: QcnnConfig) -> tuple[int, ...]:
    # shallow variant leaves 4 qubits; the two lowest-index survivors are read out
    return (0, 1)


def forward_arrays(rho: np.ndarray, config: QcnnConfig, params: QcnnParams) -> np.ndarray:
    """Class probabilities for a (batch of) 8-qubit density matrices."""
    for plan, conv, pool in zip(config.plans, params.conv, params.pool):
        rho = apply_conv(rho, plan, kernel_matrix(plan.kernel, conv))
        rho = pool_arrays(rho, plan, pool[0], pool[1])
    if config.n_out > 2:
        n = config.n_out
        rho = qt.trace_out(rho, [q for q in range(n) if q not in _readout_keep(config)], n)
    return qt.basis_probabilities(rho)


def _as_density(state) -> np.ndarray:
    if isinstance(state, FusedState):
        return state.materialize().data
    if isinstance(state, PureState):
        return DensityMatrix.from_pure(state).data
    if isinstance(state, DensityMatrix):
        return state.data
    raise TypeError(f"unsupported state type {type(state).__name__}")


def qcnn_forward(state: Union[FusedState, PureState, DensityMatrix], config: QcnnConfig,
                 params: QcnnParams) -> Prediction:
    rho = _as_density(state)
    if rho.shape[0] != 1 << config.n_qubits_in:
        raise ValueError(f"expected an {config.n_qubits_in}-qubit input, got dimension {rho.shape[0]}")
    return Prediction(forward_arrays(rho, config, params))


def class_projectors(n_classes: int = N_CLASSES) -> np.ndarray:
    out = np.zeros((n_classes, n_classes, n_classes), dtype=complex)
    for k in range(n_classes):
        out[k, k, k] = 1.0
    return out


@dataclass
class HeisenbergTape:
    """Observables at each level of the circuit, output side first within a block.

    ``levels[b]`` holds (after_pool, after_conv_a) observables for block b, i.e.
    the adjoint 'gradient' matrices just after sublayer B and after sublayer A.
    """
    observables: np.ndarray
    levels: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    block_outputs: list[np.ndarray] = field(default_factory=list)


def observables(config: QcnnConfig, params: QcnnParams, tape: bool = False,
                real_inputs: bool = False):
    """Pull the class projectors back through the whole classifier.

    Returns an array (4, 2^8, 2^8) with probs[k] = Tr(O[k] rho) for any input
    rho, or a ``HeisenbergTape`` when ``tape`` is set.  With ``real_inputs``
    the caller promises real symmetric inputs, so only Re(O) is kept; for
    real kernels the first conv layer then runs in real arithmetic.
    """
    g = class_projectors()
    if config.n_out > 2:
        g = qt.embed_identity(g, _readout_keep(config), config.n_out)
    levels, outs = [], []
    blocks = list(zip(config.plans, params.conv, params.pool))
    for b in reversed(range(len(blocks))):
        plan, conv, pool = blocks[b]
        outs.append(g)
        u = kernel_matrix(plan.kernel, conv)
        g_c = pool_adjoint(g, plan, pool[0], pool[1])
        if real_inputs and b == 0 and plan.kernel.is_real:
            u, g_c = u.real, np.ascontiguousarray(g_c.real)
        g_a = _sublayer(g_c, plan, u, plan.sublayer_b_pairs, adjoint=True)
        g = _sublayer(g_a, plan, u, plan.sublayer_a_pairs, adjoint=True)
        levels.append((g_c, g_a))
    if real_inputs:
        g = np.ascontiguousarray(g.real)
    if not tape:
        return g
    return HeisenbergTape(g, levels[::-1], outs[::-1])


def _sublayer(rho: np.ndarray, plan: LayerPlan, u: np.ndarray, pairs: Sequence[tuple[int, int]],
              adjoint: bool = False) -> np.ndarray:
    n = plan.n_qubits
    w = u.conj().T if adjoint else u
    for pair in pairs:
        rho = qt.apply_to_rho(rho, w, pair, n)
    return rho


def product_input_probs(obs: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """probs[b, k] = Tr(O[k] (x)_j factors[b, j]) for product-state inputs."""
    d = factors.shape[-3]
    t = obs.reshape((obs.shape[0],) + (2,) * (2 * d))
    k_ix = [0]
    ket = list(range(1, d + 1))
    bra = list(range(d + 1, 2 * d + 1))
    b = 2 * d + 1
    ops: list = [t, k_ix + ket + bra]
    for j in range(d):
        ops += [factors[:, j], [b, bra[j], ket[j]]]
    return np.real(np.einsum(*ops, [b, 0], optimize="greedy"))
