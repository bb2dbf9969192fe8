"""End-to-end hybrid model: aligners -> encoding/fusion -> QCNN -> class probabilities.

Every input route (evidential fusion, unimodal, classical concat, and the
entangling CNOT baselines) feeds the QCNN a state of the form
C (x)_j rho_j C^dagger with single-qubit factors rho_j and a fixed basis
permutation C (identity except for the CNOT baselines).  Probabilities are
then Tr(O_k C rho C^dagger) with the observables O_k pulled back once per
parameter setting.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classical import LinearParams, MlpParams, classical_fusion, mlp_forward
from .fusion import (
    BASELINE_WIDTH,
    STRATEGIES,
    activation_probability,
    baseline_cnots,
    cnot_permutation,
    encode_amplitudes,
    triplet_factor,
)
from .qcnn import QcnnConfig, QcnnParams, observables, product_input_probs

ABLATIONS = ("none", "no-mlp", "fixed-fusion", "hsi-only", "lidar-only", "shallow-qcnn")
N_QUBITS = 8
FUSION_INIT = np.pi


@dataclass(frozen=True)
class ModelSpec:
    strategy: str = "qcmm"
    kernel_name: str = "SO4"
    ablation: str = "none"
    d: int = 8
    hidden: int = 64

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown fusion strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation mode {self.ablation!r}; expected one of {ABLATIONS}")
        if self.ablation == "fixed-fusion" and self.strategy != "qcmm":
            raise ValueError("fixed-fusion only applies to the qcmm strategy")
        if self.d < 1:
            raise ValueError("feature dimension must be positive")
        QcnnConfig(self.kernel_name)
        if not self.uses_mlp:
            need = BASELINE_WIDTH if self.route == "entangled" else N_QUBITS
            fits = {"entangled": self.d >= need, "concat": True}.get(self.route, self.d == need)
            if not fits:
                raise ValueError(f"without aligners the {self.route} route needs {need} features, got d={self.d}")

    @property
    def unimodal(self) -> Optional[str]:
        return {"hsi-only": "h", "lidar-only": "l"}.get(self.ablation)

    @property
    def route(self) -> str:
        """How features reach the QCNN: 'fused', 'product', 'concat' or 'entangled'."""
        if self.unimodal:
            return "product"
        if self.strategy == "qcmm":
            return "fused"
        if self.strategy == "classical":
            return "concat"
        return "entangled"

    @property
    def uses_mlp(self) -> bool:
        return self.ablation != "no-mlp"

    @property
    def modalities(self) -> tuple[str, ...]:
        return (self.unimodal,) if self.unimodal else ("h", "l")

    @property
    def mlp_out(self) -> int:
        return BASELINE_WIDTH if self.route == "entangled" else N_QUBITS

    @property
    def qcnn_config(self) -> QcnnConfig:
        return QcnnConfig(self.kernel_name, blocks=1 if self.ablation == "shallow-qcnn" else 2)

    @property
    def frozen(self) -> tuple[str, ...]:
        return ("fusion.theta",) if self.ablation == "fixed-fusion" else ()

    def permutation(self) -> Optional[np.ndarray]:
        if self.route != "entangled":
            return None
        return cnot_permutation(baseline_cnots(self.strategy), N_QUBITS)


class ParamStore:
    """Named trainable arrays with a canonical flat-vector view."""

    def __init__(self, arrays: "OrderedDict[str, np.ndarray] | None" = None):
        self.arrays: OrderedDict[str, np.ndarray] = OrderedDict(arrays or {})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> list[str]:
        return list(self.arrays)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def shapes(self) -> dict[str, list[int]]:
        return {k: list(v.shape) for k, v in self.arrays.items()}

    def flatten(self) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([a.reshape(-1) for a in self.arrays.values()])

    def unflatten(self, vec: np.ndarray) -> "ParamStore":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got {vec.shape}")
        out, i = OrderedDict(), 0
        for k, a in self.arrays.items():
            out[k] = vec[i:i + a.size].reshape(a.shape).copy()
            i += a.size
        return ParamStore(out)

    def like(self, grads: dict[str, np.ndarray]) -> "ParamStore":
        """A store with this store's layout, filled from ``grads`` (missing names are 0)."""
        return ParamStore(OrderedDict(
            (k, np.asarray(grads[k], float).reshape(a.shape) if k in grads else np.zeros_like(a))
            for k, a in self.arrays.items()
        ))

    def mask(self, frozen: tuple[str, ...]) -> np.ndarray:
        return np.concatenate([
            np.full(a.size, 0.0 if k in frozen else 1.0) for k, a in self.arrays.items()
        ]) if self.arrays else np.zeros(0)

    def copy(self) -> "ParamStore":
        return ParamStore(OrderedDict((k, a.copy()) for k, a in self.arrays.items()))

    def mlp(self, m: str) -> MlpParams:
        p = f"mlp_{m}."
        return MlpParams(self[p + "W1"], self[p + "b1"], self[p + "W2"], self[p + "b2"])

    def cfus(self) -> LinearParams:
        return LinearParams(self["cfus.W"], self["cfus.b"])

    def qcnn(self, config: QcnnConfig) -> QcnnParams:
        return QcnnParams([self[f"conv.{b}"] for b in range(config.blocks)],
                          [self[f"pool.{b}"] for b in range(config.blocks)])


def init_params(spec: ModelSpec, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    if spec.uses_mlp:
        for m in spec.modalities:
            p = MlpParams.init(rng, spec.d, spec.hidden, spec.mlp_out)
            for name in ("W1", "b1", "W2", "b2"):
                arrays[f"mlp_{m}.{name}"] = getattr(p, name)
    if spec.route == "fused":
        arrays["fusion.theta"] = np.full(N_QUBITS, FUSION_INIT)
    if spec.route == "concat":
        width = spec.mlp_out if spec.uses_mlp else spec.d
        lin = LinearParams.init(rng, 2 * width, N_QUBITS)
        arrays["cfus.W"], arrays["cfus.b"] = lin.W, lin.b
    qp = QcnnParams.random(spec.qcnn_config, rng)
    for b in range(spec.qcnn_config.blocks):
        arrays[f"conv.{b}"] = qp.conv[b]
        arrays[f"pool.{b}"] = qp.pool[b]
    return ParamStore(arrays)


def parameter_breakdown(spec: ModelSpec) -> dict[str, int]:
    store = init_params(spec, 0)
    groups = {"mlp": 0, "fusion": 0, "qcnn": 0}
    for k, a in store.arrays.items():
        if k.startswith("mlp_"):
            groups["mlp"] += a.size
        elif k.startswith(("fusion", "cfus")):
            groups["fusion"] += a.size
        else:
            groups["qcnn"] += a.size
    groups["total"] = store.size
    return groups


@dataclass
class ForwardCache:
    x_h: np.ndarray
    x_l: np.ndarray
    v_h: Optional[np.ndarray] = None
    v_l: Optional[np.ndarray] = None
    angles: Optional[np.ndarray] = None
    activation: Optional[np.ndarray] = None
    factors: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


def _align(spec: ModelSpec, store: ParamStore, m: str, x: np.ndarray) -> np.ndarray:
    if spec.uses_mlp:
        return mlp_forward(x, store.mlp(m))
    if spec.route == "entangled":
        return x[:, :BASELINE_WIDTH]
    return x


def pure_factors(angles: np.ndarray) -> np.ndarray:
    a = encode_amplitudes(angles)
    return a[..., :, None] * a[..., None, :]


def encode(spec: ModelSpec, store: ParamStore, x_h, x_l) -> ForwardCache:
    """Classical front end: returns the per-qubit input factors (B, 8, 2, 2)."""
    x_h = np.atleast_2d(np.asarray(x_h, dtype=float))
    x_l = np.atleast_2d(np.asarray(x_l, dtype=float))
    cache = ForwardCache(x_h, x_l)
    if spec.unimodal == "h":
        cache.v_h = _align(spec, store, "h", x_h)
        cache.angles = cache.v_h
    elif spec.unimodal == "l":
        cache.v_l = _align(spec, store, "l", x_l)
        cache.angles = cache.v_l
    else:
        cache.v_h = _align(spec, store, "h", x_h)
        cache.v_l = _align(spec, store, "l", x_l)
        if spec.route == "concat":
            cache.angles = classical_fusion(cache.v_h, cache.v_l, store.cfus())
        elif spec.route == "entangled":
            cache.angles = np.concatenate([cache.v_h, cache.v_l], axis=-1)
    if spec.route == "fused" and not spec.unimodal:
        cache.activation = activation_probability(cache.v_h, cache.v_l)
        cache.factors = triplet_factor(cache.activation, store["fusion.theta"])
    else:
        if not np.all(np.isfinite(cache.angles)):
            raise FloatingPointError("non-finite encoding angle")
        cache.factors = pure_factors(cache.angles)
    return cache


def effective_observables(spec: ModelSpec, store: ParamStore, tape: bool = False):
    """Class observables acting on the unpermuted product state (real part suffices)."""
    result = observables(spec.qcnn_config, store.qcnn(spec.qcnn_config), tape=tape, real_inputs=True)
    obs = result.observables if tape else result
    perm = spec.permutation()
    if perm is not None:
        obs = obs[:, perm][:, :, perm]
    return (obs, result) if tape else obs


def predict_proba(spec: ModelSpec, store: ParamStore, x_h, x_l, batch: int = 256) -> np.ndarray:
    obs = effective_observables(spec, store)
    out = []
    n = np.atleast_2d(x_h).shape[0]
    for i in range(0, n, batch):
        cache = encode(spec, store, np.atleast_2d(x_h)[i:i + batch], np.atleast_2d(x_l)[i:i + batch])
        out.append(product_input_probs(obs, cache.factors))
    return np.clip(np.concatenate(out), 0.0, 1.0) if out else np.zeros((0, 4))


def predict(spec: ModelSpec, store: ParamStore, x_h, x_l) -> np.ndarray:
    return np.argmax(predict_proba(spec, store, x_h, x_l), axis=1)


def input_density(spec: ModelSpec, factors: np.ndarray) -> np.ndarray:
    """Materialize the 8-qubit QCNN input state(s) C ((x) rho_j) C^dagger."""
    rho = factors[..., 0, :, :]
    for j in range(1, factors.shape[-3]):
        f = factors[..., j, :, :]
        rho = np.einsum("...ab,...cd->...acbd", rho, f).reshape(
            rho.shape[:-2] + (rho.shape[-2] * 2, rho.shape[-1] * 2))
    perm = spec.permutation()
    if perm is not None:
        out = np.empty_like(rho)
        out[..., perm[:, None], perm[None, :]] = rho
        rho = out
    return rho
