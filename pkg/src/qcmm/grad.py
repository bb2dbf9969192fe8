"""Differentiation: finite-difference oracle, shift rules, and the full backward pass.

The backward pass is exact.  QCNN parameters are differentiated through the
dense simulation (adjoint method): each shared kernel angle collects
2 Re Tr(G dU U^dagger rho) over every gate instance, where G is the class
observable pulled back to that point of the circuit.  This covers the
controlled rotations (pooling, CRX/CRZ kernels, CC-R_y fusion) for which the
two-term shift rule is not exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import qtensor as qt
from .ansatz import (
    _source_blocks,
    branch_unitaries,
    branch_unitary_derivatives,
    kernel_derivatives,
    kernel_matrix,
    pool_arrays,
)
from .classical import classical_fusion_backward, mlp_backward
from .model import ModelSpec, ParamStore, effective_observables, encode, input_density
from .qcnn import HeisenbergTape, QcnnConfig, QcnnParams, _sublayer, product_input_probs

PROB_FLOOR = 1e-12


class GradientError(FloatingPointError):
    pass


def fd_gradient(loss_fn: Callable[[np.ndarray], float], params, eps: float = 1e-4) -> np.ndarray:
    """Central differences (f(x+eps) - f(x-eps)) / (2 eps), one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(params, dtype=float).reshape(-1)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + eps
        up = float(loss_fn(x))
        x[i] = old - eps
        down = float(loss_fn(x))
        x[i] = old
        if not (np.isfinite(up) and np.isfinite(down)):
            raise GradientError(f"non-finite loss while probing coordinate {i}")
        g[i] = (up - down) / (2 * eps)
    return g


def shift_gradient(model_fn: Callable[[np.ndarray], np.ndarray], params, param_index: int,
                   class_index: int, generator: str = "rotation") -> float:
    """Two-term parameter shift: (y_k(phi + pi/2) - y_k(phi - pi/2)) / 2.

    Only exact for gates exp(-i phi P / 2) with a Pauli-word P.  Controlled
    rotations have generator eigenvalues {0, +-1/2} and need
    ``four_term_shift_gradient``.
    """
    if generator != "rotation":
        raise ValueError("the two-term shift rule is not exact for controlled rotations; "
                         "use four_term_shift_gradient")
    x = np.array(params, dtype=float).reshape(-1)
    x[param_index] += np.pi / 2
    up = model_fn(x)[class_index]
    x[param_index] -= np.pi
    down = model_fn(x)[class_index]
    return 0.5 * float(up - down)


def four_term_shift_gradient(model_fn: Callable[[np.ndarray], np.ndarray], params,
                             param_index: int, class_index: int) -> float:
    """Exact shift rule for controlled rotations (frequencies 1/2 and 1)."""
    x0 = np.array(params, dtype=float).reshape(-1)
    root2 = np.sqrt(2.0)
    coeffs = ((np.pi / 2, (root2 + 1) / (4 * root2)), (3 * np.pi / 2, -(root2 - 1) / (4 * root2)))
    total = 0.0
    for shift, c in coeffs:
        x = x0.copy()
        x[param_index] += shift
        up = model_fn(x)[class_index]
        x[param_index] -= 2 * shift
        down = model_fn(x)[class_index]
        total += c * (up - down)
    return float(total)


# -- QCNN adjoint ------------------------------------------------------------

def _pair_reduced(rho: np.ndarray, g: np.ndarray, pair: tuple[int, int], n: int) -> np.ndarray:
    """Tr_rest(rho G) on the ordered pair (top, bottom), without forming rho G."""
    lead = rho.shape[:-2]
    nl = len(lead)
    dim = 1 << n
    rest = [q for q in range(n) if q not in pair]
    order = [nl + q for q in pair] + [nl + q for q in rest] + [nl + n]
    r = np.transpose(rho.reshape(lead + (2,) * n + (dim,)), list(range(nl)) + order)
    gt = np.swapaxes(g, -1, -2)
    c = np.transpose(gt.reshape(lead + (2,) * n + (dim,)), list(range(nl)) + order)
    r = r.reshape(lead + (4, dim >> 2, dim))
    c = c.reshape(lead + (4, dim >> 2, dim))
    return np.einsum("...arx,...brx->...ab", r, c)


def _sublayer_grad(rho: np.ndarray, g: np.ndarray, pairs, a: np.ndarray, n: int) -> np.ndarray:
    # gates inside a sublayer are disjoint and commute, so every instance can be
    # treated as the last one applied
    if np.isrealobj(rho) and np.isrealobj(g):
        a = a.real
    out = np.zeros(a.shape[0])
    for pair in pairs:
        r = _pair_reduced(rho, g, pair, n)
        out += 2.0 * np.real(np.einsum("jab,kba->j", a, r))
    return out


def qcnn_param_grads(states: np.ndarray, config: QcnnConfig, params: QcnnParams,
                     tape: HeisenbergTape) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """d/dphi of sum_k Tr(P_k QCNN_phi(states[k])).

    ``states`` has shape (4, 2^8, 2^8): the k-th entry is the loss-weighted sum
    of inputs paired with class projector k.
    """
    rho = states
    g_conv, g_pool = [], []
    for b, plan in enumerate(config.plans):
        n = plan.n_qubits
        u = kernel_matrix(plan.kernel, params.conv[b])
        a = kernel_derivatives(plan.kernel, params.conv[b]) @ u.conj().T
        g_c, g_a = tape.levels[b]
        if np.isrealobj(g_c) and np.isrealobj(rho):
            u = u.real
        rho_a = _sublayer(rho, plan, u, plan.sublayer_a_pairs)
        grad = _sublayer_grad(rho_a, g_a, plan.sublayer_a_pairs, a, n)
        rho_c = _sublayer(rho_a, plan, u, plan.sublayer_b_pairs)
        grad += _sublayer_grad(rho_c, g_c, plan.sublayer_b_pairs, a, n)
        g_conv.append(grad)

        v1, v2 = params.pool[b]
        blocks = _source_blocks(rho_c, plan)
        v = branch_unitaries(plan, v1, v2)
        dv = branch_unitary_derivatives(plan, v1, v2)
        g_out = tape.block_outputs[b]
        g_pool.append(2.0 * np.real(np.einsum(
            "kab,psbc,ksce,sae->p", g_out, dv, blocks, v.conj(), optimize="greedy")))
        rho = pool_arrays(rho_c, plan, v1, v2)
    return g_conv, g_pool


# -- product-state input -----------------------------------------------------

def factor_gradients(e: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """out[b, j, l, k] = d Tr(E_b (x)_i rho_{b,i}) / d rho_{b,j}[l, k]."""
    bsz, d = factors.shape[0], factors.shape[1]
    out = np.empty(factors.shape, dtype=np.result_type(e, factors))
    # suffix[j] = (x)_{i > j} rho_i
    suffix = [np.ones((bsz, 1, 1))]
    for j in range(d - 1, 0, -1):
        s = suffix[-1]
        f = factors[:, j]
        suffix.append(np.einsum("bac,bdf->badcf", f, s).reshape(bsz, 2 * s.shape[1], 2 * s.shape[1]))
    suffix = suffix[::-1]
    head = e
    for j in range(d):
        r = 1 << (d - 1 - j)
        t = head.reshape(bsz, 2, r, 2, r)
        out[:, j] = np.einsum("bkrls,bsr->blk", t, suffix[j])
        head = np.einsum("bkrls,blk->brs", t, factors[:, j])
    return out


def fused_factor_partials(p: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """d rho / dp and d rho / dtheta for the fused single-qubit factors."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    c, s = np.broadcast_to(c, p.shape), np.broadcast_to(s, p.shape)
    dp = np.empty(p.shape + (2, 2))
    dp[..., 0, 0] = -s * s
    dp[..., 0, 1] = dp[..., 1, 0] = c * s
    dp[..., 1, 1] = s * s
    dt = np.empty(p.shape + (2, 2))
    dt[..., 0, 0] = -p * s * c
    dt[..., 0, 1] = dt[..., 1, 0] = 0.5 * p * (c * c - s * s)
    dt[..., 1, 1] = p * s * c
    return dp, dt


def pure_factor_partial(angles: np.ndarray) -> np.ndarray:
    out = np.empty(angles.shape + (2, 2))
    sn, cs = np.sin(angles), np.cos(angles)
    out[..., 0, 0] = -0.5 * sn
    out[..., 0, 1] = out[..., 1, 0] = 0.5 * cs
    out[..., 1, 1] = 0.5 * sn
    return out


# -- full model --------------------------------------------------------------

@dataclass
class BackwardResult:
    loss: float
    grad: np.ndarray
    probs: np.ndarray


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def model_loss(spec: ModelSpec, store: ParamStore, x_h, x_l, labels) -> float:
    from .model import predict_proba
    return batch_loss(predict_proba(spec, store, x_h, x_l), np.asarray(labels))


def backward(spec: ModelSpec, store: ParamStore, x_h, x_l, labels) -> BackwardResult:
    """Mean cross-entropy over the batch and its exact gradient (flat, canonical order)."""
    labels = np.asarray(labels, dtype=int)
    config = spec.qcnn_config
    qparams = store.qcnn(config)
    cache = encode(spec, store, x_h, x_l)
    obs, tape = effective_observables(spec, store, tape=True)
    probs = product_input_probs(obs, cache.factors)
    n = labels.size
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    if not np.isfinite(loss):
        raise GradientError("non-finite loss")

    # dL/dy_k for every sample; zero where the floor clips the log
    c = np.zeros_like(probs)
    live = picked >= PROB_FLOOR
    c[np.arange(n)[live], labels[live]] = -1.0 / (n * picked[live])

    grads: dict[str, np.ndarray] = {}
    rho_in = input_density(spec, cache.factors)
    states = np.tensordot(c.T, rho_in, axes=1)
    g_conv, g_pool = qcnn_param_grads(states, config, qparams, tape)
    for b in range(config.blocks):
        grads[f"conv.{b}"] = g_conv[b]
        grads[f"pool.{b}"] = g_pool[b]

    e = (c @ obs.reshape(obs.shape[0], -1)).reshape((n,) + obs.shape[1:])
    g_fac = factor_gradients(e, cache.factors)

    g_vh = g_vl = None
    if spec.route == "fused" and not spec.unimodal:
        theta = store["fusion.theta"]
        dp, dt = fused_factor_partials(cache.activation, theta)
        g_p = np.einsum("bjlk,bjlk->bj", g_fac, dp)
        if "fusion.theta" not in spec.frozen:
            grads["fusion.theta"] = np.einsum("bjlk,bjlk->j", g_fac, dt)
        sh2, sl2 = np.sin(cache.v_h / 2) ** 2, np.sin(cache.v_l / 2) ** 2
        g_vh = g_p * 0.5 * np.sin(cache.v_h) * sl2
        g_vl = g_p * 0.5 * np.sin(cache.v_l) * sh2
    else:
        g_ang = np.einsum("bjlk,bjlk->bj", g_fac, pure_factor_partial(cache.angles))
        if spec.unimodal == "h":
            g_vh = g_ang
        elif spec.unimodal == "l":
            g_vl = g_ang
        elif spec.route == "concat":
            g_lin, g_vh, g_vl = classical_fusion_backward(cache.v_h, cache.v_l, store.cfus(), g_ang)
            grads["cfus.W"], grads["cfus.b"] = g_lin.W, g_lin.b
        else:
            w = cache.v_h.shape[1]
            g_vh, g_vl = g_ang[:, :w], g_ang[:, w:]

    if spec.uses_mlp:
        for m, x, g in (("h", cache.x_h, g_vh), ("l", cache.x_l, g_vl)):
            if g is None:
                continue
            gp, _ = mlp_backward(x, store.mlp(m), g)
            for name in ("W1", "b1", "W2", "b2"):
                grads[f"mlp_{m}.{name}"] = getattr(gp, name)

    flat = store.like(grads).flatten()
    if not np.all(np.isfinite(flat)):
        raise GradientError("non-finite gradient")
    return BackwardResult(loss, flat, probs)


# -- finite-difference audit -------------------------------------------------

def toy_spec(strategy: str = "qcmm", kernel_name: str = "SO4", ablation: str = "shallow-qcnn") -> ModelSpec:
    """Small model for gradient audits: 2 input features per modality, hidden width 4, one block."""
    return ModelSpec(strategy, kernel_name, ablation, d=2, hidden=4)


def gradient_check(spec: ModelSpec, seed: int, eps: float = 1e-4, batch: int = 4) -> float:
    """Max |analytic - central FD| over the trainable parameters on a seeded random batch."""
    from .model import init_params

    rng = np.random.default_rng(seed)
    store = init_params(spec, seed)
    x_h = rng.normal(size=(batch, spec.d))
    x_l = rng.normal(size=(batch, spec.d))
    labels = rng.integers(0, 4, batch)
    res = backward(spec, store, x_h, x_l, labels)
    fd = fd_gradient(lambda v: model_loss(spec, store.unflatten(v), x_h, x_l, labels), store.flatten(), eps)
    live = store.mask(spec.frozen) > 0
    return float(np.max(np.abs(res.grad - fd)[live]))
