"""Classical pieces: per-modality MLP aligners, PCA and the concat-fusion baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: getattr(self, k).shape for k in ("W1", "b1", "W2", "b2")}

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes.values())

    def validate(self) -> None:
        k, d = self.W1.shape
        d_out = self.W2.shape[0]
        if self.b1.shape != (k,) or self.W2.shape != (d_out, k) or self.b2.shape != (d_out,):
            raise ValueError(f"inconsistent MLP shapes {self.shapes}")

    @classmethod
    def init(cls, rng: np.random.Generator, d: int = 8, k: int = 64, d_out: int = 8) -> "MlpParams":
        # uniform(+-sqrt(1/fan_in)) per layer
        a1, a2 = np.sqrt(1.0 / d), np.sqrt(1.0 / k)
        return cls(
            rng.uniform(-a1, a1, (k, d)), rng.uniform(-a1, a1, k),
            rng.uniform(-a2, a2, (d_out, k)), rng.uniform(-a2, a2, d_out),
        )

    @classmethod
    def zeros(cls, d: int = 8, k: int = 64, d_out: int = 8) -> "MlpParams":
        return cls(np.zeros((k, d)), np.zeros(k), np.zeros((d_out, k)), np.zeros(d_out))


def mlp_param_count(d: int = 8, k: int = 64, d_out: int = 8) -> int:
    return k * d + k + d_out * k + d_out


def _check_input(x: np.ndarray, p: MlpParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.W1.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match W1 {p.W1.shape}")
    return x


def mlp_forward(x, p: MlpParams) -> np.ndarray:
    """v = W2 relu(W1 x + b1) + b2; ``x`` may carry leading batch axes."""
    x = _check_input(x, p)
    h = np.maximum(x @ p.W1.T + p.b1, 0.0)
    return h @ p.W2.T + p.b2


def mlp_backward(x, p: MlpParams, upstream) -> tuple[MlpParams, np.ndarray]:
    """Gradients of sum(upstream * mlp_forward(x)) w.r.t. the weights and the input.

    Batched inputs (N, d) with upstream (N, d_out) accumulate over N.  The
    ReLU subgradient at 0 is taken as 0.
    """
    x = _check_input(x, p)
    upstream = np.asarray(upstream, dtype=float)
    single = x.ndim == 1
    if single:
        x, upstream = x[None], upstream[None]
    pre = x @ p.W1.T + p.b1
    h = np.maximum(pre, 0.0)
    g_W2 = upstream.T @ h
    g_b2 = upstream.sum(axis=0)
    g_h = upstream @ p.W2
    g_pre = g_h * (pre > 0)
    g_W1 = g_pre.T @ x
    g_b1 = g_pre.sum(axis=0)
    g_x = g_pre @ p.W1
    return MlpParams(g_W1, g_b1, g_W2, g_b2), (g_x[0] if single else g_x)


# -- concat fusion baseline --------------------------------------------------

@dataclass
class LinearParams:
    W: np.ndarray
    b: np.ndarray

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int = 16, d_out: int = 8) -> "LinearParams":
        a = np.sqrt(1.0 / d_in)
        return cls(rng.uniform(-a, a, (d_out, d_in)), rng.uniform(-a, a, d_out))


def classical_fusion(v_h, v_l, params: LinearParams) -> np.ndarray:
    z = np.concatenate([np.asarray(v_h, float), np.asarray(v_l, float)], axis=-1)
    if z.shape[-1] != params.W.shape[1]:
        raise ValueError(f"concatenated width {z.shape[-1]} does not match W {params.W.shape}")
    return np.maximum(z @ params.W.T + params.b, 0.0)


def classical_fusion_backward(v_h, v_l, params: LinearParams, upstream):
    """Returns (LinearParams gradient, grad v_h, grad v_l) for batched inputs."""
    v_h, v_l = np.atleast_2d(v_h), np.atleast_2d(v_l)
    upstream = np.atleast_2d(upstream)
    z = np.concatenate([v_h, v_l], axis=-1)
    pre = z @ params.W.T + params.b
    g_pre = upstream * (pre > 0)
    g_z = g_pre @ params.W
    d = v_h.shape[-1]
    return LinearParams(g_pre.T @ z, g_pre.sum(axis=0)), g_z[:, :d], g_z[:, d:]


# -- PCA ---------------------------------------------------------------------

class PcaError(ValueError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def pca_fit(data, d: int, rank_tol: float = 1e-12) -> PcaModel:
    """Top-d eigenvectors of the sample covariance, eigenvalue-descending.

    Each component is signed so its largest-magnitude entry is positive.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise PcaError("PCA expects an N x B matrix")
    n, b = x.shape
    if n <= d or b < d:
        raise PcaError(f"need N > d and B >= d (N={n}, B={b}, d={d})")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    scale = max(evals[0], 1.0) if evals.size else 1.0
    if np.sum(evals > rank_tol * scale) < d:
        raise PcaError(f"covariance has fewer than {d} nonzero eigenvalues")
    comps = evecs[:, :d].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return PcaModel(mean, comps, evals[:d].copy())


def pca_transform(model: PcaModel, x) -> np.ndarray:
    return (np.asarray(x, dtype=float) - model.mean) @ model.components.T


# -- scaling for encoder inputs that bypass the MLP ---------------------------

@dataclass
class MinMaxScaler:
    lo: np.ndarray
    hi: np.ndarray
    upper: float = np.pi

    @classmethod
    def fit(cls, x, upper: float = np.pi) -> "MinMaxScaler":
        x = np.asarray(x, dtype=float)
        return cls(x.min(axis=0), x.max(axis=0), upper)

    def transform(self, x) -> np.ndarray:
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (np.asarray(x, dtype=float) - self.lo) / span * self.upper
