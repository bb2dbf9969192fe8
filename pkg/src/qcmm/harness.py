"""Training loop, metrics, ablations and checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .ansatz import get_kernel
from .classical import MinMaxScaler
from .data import N_CLASSES, DatasetBundle
from .fusion import STRATEGIES
from .grad import GradientError, backward
from .model import ABLATIONS, ModelSpec, ParamStore, init_params, predict, predict_proba

DEFAULT_SEED = 998244353
CHECKPOINT_MAGIC = b"QCMMCKPT"
CHECKPOINT_VERSION = 1
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 25
    seed: int = DEFAULT_SEED
    fusion_strategy: str = "qcmm"
    kernel_name: str = "SO4"
    ablation_mode: str = "none"
    hidden: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.hidden < 1:
            raise ValueError("batch_size and hidden must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.fusion_strategy not in STRATEGIES:
            raise ValueError(f"unknown fusion strategy {self.fusion_strategy!r}")
        if self.ablation_mode not in ABLATIONS:
            raise ValueError(f"unknown ablation mode {self.ablation_mode!r}")
        get_kernel(self.kernel_name)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def model_spec(self, d: int) -> ModelSpec:
        return ModelSpec(self.fusion_strategy, self.kernel_name.upper(), self.ablation_mode, d=d,
                         hidden=self.hidden)


# -- shuffling ---------------------------------------------------------------

def splitmix64(state: int):
    """Infinite stream of 64-bit outputs from the splitmix64 generator."""
    while True:
        state = (state + GOLDEN) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield z ^ (z >> 31)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Fisher-Yates shuffle driven by splitmix64 seeded with seed + epoch * golden gamma."""
    stream = splitmix64((seed + epoch * GOLDEN) & MASK64)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = next(stream) % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.intp)


# -- model wrapper -----------------------------------------------------------

@dataclass
class TrainedModel:
    spec: ModelSpec
    params: ParamStore
    scalers: dict[str, MinMaxScaler] = field(default_factory=dict)

    def features(self, x_h, x_l):
        x_h, x_l = np.atleast_2d(x_h), np.atleast_2d(x_l)
        if "h" in self.scalers:
            x_h = self.scalers["h"].transform(x_h)
        if "l" in self.scalers:
            x_l = self.scalers["l"].transform(x_l)
        return x_h, x_l

    def predict_proba(self, x_h, x_l) -> np.ndarray:
        return predict_proba(self.spec, self.params, *self.features(x_h, x_l))

    def predict(self, x_h, x_l) -> np.ndarray:
        return predict(self.spec, self.params, *self.features(x_h, x_l))


@dataclass
class TrainResult:
    model: TrainedModel
    history: list[float]
    config: TrainConfig

    @property
    def params(self) -> ParamStore:
        return self.model.params

    def __iter__(self):
        return iter((self.model.params, self.history))


def build_model(config: TrainConfig, bundle: DatasetBundle) -> TrainedModel:
    if bundle.n_classes != N_CLASSES:
        raise ValueError(f"the classifier reads out {N_CLASSES} classes; dataset has {bundle.n_classes}")
    if bundle.x_h.shape[1] != bundle.x_l.shape[1]:
        raise ValueError("both modalities must have the same feature width")
    spec = config.model_spec(bundle.x_h.shape[1])
    scalers = {}
    if not spec.uses_mlp:
        # aligners are bypassed: map raw features onto rotation angles in [0, pi]
        x_h, x_l, _ = bundle.subset("train")
        scalers = {"h": MinMaxScaler.fit(x_h), "l": MinMaxScaler.fit(x_l)}
    return TrainedModel(spec, init_params(spec, config.seed), scalers)


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0

    def step(self, x: np.ndarray, g: np.ndarray, mask: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m, self.v = np.zeros_like(x), np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return x - mask * (self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


def train(config: TrainConfig, bundle: DatasetBundle, log=None) -> TrainResult:
    """Mini-batch Adam on the mean cross-entropy; history holds the mean loss per epoch."""
    config.validate()
    model = build_model(config, bundle)
    spec = model.spec
    x_h, x_l, y = bundle.subset("train")
    if y.size == 0 and config.epochs:
        raise ValueError("training split is empty")
    x_h, x_l = model.features(x_h, x_l)
    store = model.params
    mask = store.mask(spec.frozen)
    flat = store.flatten()
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    history = []
    for epoch in range(config.epochs):
        perm = epoch_permutation(y.size, config.seed, epoch)
        total = 0.0
        for b, start in enumerate(range(0, y.size, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            try:
                res = backward(spec, store, x_h[idx], x_l[idx], y[idx])
            except (GradientError, FloatingPointError) as exc:
                rows = bundle.train_idx[idx].tolist()
                raise TrainingError(f"epoch {epoch}, batch {b} (dataset rows {rows}): {exc}") from None
            total += res.loss * idx.size
            flat = opt.step(flat, res.grad, mask)
            store = store.unflatten(flat)
        history.append(total / y.size)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}  loss {history[-1]:.6f}")
    model.params = store
    return TrainResult(model, history, config)


# -- metrics -----------------------------------------------------------------

@dataclass
class MetricsReport:
    per_class_recall: list[float]
    OA: float
    AA: float
    kappa: float
    F1: float
    confusion: list[list[int]]

    @property
    def n(self) -> int:
        return int(np.sum(self.confusion))

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true, y_pred = np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics_from_confusion(confusion) -> MetricsReport:
    """OA, AA, Cohen's kappa and macro F1 from a (true x predicted) count matrix.

    Classes absent from the true labels are left out of AA; a class that is
    never predicted gets precision 0.  When chance agreement is total
    (p_e = 1) kappa is defined as 1 for perfect agreement and 0 otherwise.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    n = cm.sum()
    if n == 0:
        raise ValueError("cannot score an empty test split")
    diag = np.diag(cm).astype(float)
    support = cm.sum(axis=1).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    recall = np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)
    precision = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    present = support > 0
    p_o = diag.sum() / n
    p_e = float(np.dot(support, predicted)) / float(n) ** 2
    if p_e >= 1.0:
        kappa = 1.0 if p_o >= 1.0 else 0.0
    else:
        kappa = (p_o - p_e) / (1 - p_e)
    return MetricsReport(
        per_class_recall=recall.tolist(),
        OA=float(p_o),
        AA=float(recall[present].mean()),
        kappa=float(kappa),
        F1=float(f1[present].mean()),
        confusion=cm.tolist(),
    )


def evaluate(model: TrainedModel, bundle: DatasetBundle, split: str = "test") -> MetricsReport:
    x_h, x_l, y = bundle.subset(split)
    if y.size == 0:
        raise ValueError(f"the {split} split is empty")
    pred = model.predict(x_h, x_l)
    return metrics_from_confusion(confusion_matrix(y, pred, bundle.n_classes))


def ablate(config: TrainConfig, mode: str, bundle: DatasetBundle) -> tuple[MetricsReport, TrainResult]:
    if mode not in ABLATIONS:
        raise ValueError(f"unknown ablation mode {mode!r}; expected one of {ABLATIONS}")
    cfg = TrainConfig.from_dict({**asdict(config), "ablation_mode": mode})
    result = train(cfg, bundle)
    return evaluate(result.model, bundle), result


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, model: TrainedModel, config: Optional[TrainConfig] = None) -> Path:
    """Magic, u64 header length, UTF-8 JSON header, then little-endian float64 parameters."""
    store = model.params
    spec = model.spec
    header = {
        "format": "qcmm-checkpoint",
        "version": CHECKPOINT_VERSION,
        "spec": asdict(spec),
        "config": asdict(config) if config is not None else None,
        "params": [[k, list(a.shape)] for k, a in store.arrays.items()],
        "scalers": {m: {"lo": s.lo.tolist(), "hi": s.hi.tolist(), "upper": s.upper}
                    for m, s in sorted(model.scalers.items())},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = np.ascontiguousarray(store.flatten(), dtype="<f8").tobytes()
    path = Path(path)
    path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<Q", len(head)) + head + blob)
    return path


def load_checkpoint(path) -> tuple[TrainedModel, Optional[TrainConfig]]:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC) or len(raw) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError(f"{path}: not a qcmm checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (size,) = struct.unpack("<Q", raw[off:off + 8])
    off += 8
    try:
        header = json.loads(raw[off:off + size].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    blob = raw[off + size:]
    layout = [(k, tuple(s)) for k, s in header["params"]]
    total = sum(int(np.prod(s)) for _, s in layout)
    if len(blob) != 8 * total:
        raise CheckpointError(f"{path}: expected {8 * total} parameter bytes, found {len(blob)}")
    vec = np.frombuffer(blob, dtype="<f8").astype(float)
    arrays, i = {}, 0
    for k, s in layout:
        size_k = int(np.prod(s))
        arrays[k] = vec[i:i + size_k].reshape(s).copy()
        i += size_k
    spec = ModelSpec(**header["spec"])
    expected = init_params(spec, 0)
    if expected.shapes() != {k: list(s) for k, s in layout}:
        raise CheckpointError(f"{path}: parameter layout does not match {spec}")
    scalers = {m: MinMaxScaler(np.array(s["lo"]), np.array(s["hi"]), s["upper"])
               for m, s in header.get("scalers", {}).items()}
    config = TrainConfig.from_dict(header["config"]) if header.get("config") else None
    return TrainedModel(spec, ParamStore(arrays), scalers), config
