"""Paired two-modality datasets: synthetic generator, manifest loader, splitting.

Manifest layout (JSON, paths relative to the manifest file)::

    {
      "modalities": {
        "h": {"path": "hsi.f32", "shape": [N, 7, 7, 144]},
        "l": {"path": "lidar.f32", "shape": [N, 7, 7, 1], "pca": true}
      },
      "labels": {"path": "labels.i32", "count": N},
      "class_names": ["grass", "trees", ...],
      "classes": [1, 2, 3, 4],
      "split": {"train_fraction": 0.8, "seed": 998244353}
    }

Blobs are raw little-endian float32 (features) and int32 (labels), row-major
and sample-major.  ``classes`` optionally selects a subset of label values,
remapped to 0..C-1 in the listed order.  ``split`` may instead give
``train_counts`` (one count per selected class, optionally with
``test_counts``).  Each modality is flattened per sample and reduced to
``d`` (default 8) components by PCA fitted on the training split, unless
``"pca": false``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classical import PcaError, pca_fit, pca_transform

N_CLASSES = 4
DEFAULT_FEATURES = 8


class DataError(ValueError):
    pass


class ManifestError(DataError):
    pass


class SplitError(DataError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DatasetBundle:
    x_h: np.ndarray
    x_l: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    class_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x_h = np.atleast_2d(np.asarray(self.x_h, dtype=float))
        x_l = np.atleast_2d(np.asarray(self.x_l, dtype=float))
        labels = np.asarray(self.labels, dtype=np.intp).reshape(-1)
        n = labels.size
        if x_h.shape[0] != n or x_l.shape[0] != n:
            raise DataError(f"modalities have {x_h.shape[0]} and {x_l.shape[0]} rows for {n} labels")
        names = tuple(self.class_names) or tuple(f"class {k}" for k in range(N_CLASSES))
        if n and (labels.min() < 0 or labels.max() >= len(names)):
            raise DataError(f"labels must lie in 0..{len(names) - 1}")
        train = np.asarray(self.train_idx, dtype=np.intp).reshape(-1)
        test = np.asarray(self.test_idx, dtype=np.intp).reshape(-1)
        if train.size or test.size:
            both = np.concatenate([train, test])
            if np.unique(both).size != both.size:
                raise SplitError("train and test indices overlap")
            if both.size and (both.min() < 0 or both.max() >= n):
                raise SplitError("split index out of range")
        for name, value in (("x_h", x_h), ("x_l", x_l), ("labels", labels),
                            ("train_idx", train), ("test_idx", test)):
            object.__setattr__(self, name, _frozen(value))
        object.__setattr__(self, "class_names", names)

    @property
    def n_samples(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def spec(self) -> dict:
        return {"d_h": self.x_h.shape[1], "d_l": self.x_l.shape[1], "n_classes": self.n_classes}

    @property
    def has_split(self) -> bool:
        return bool(self.train_idx.size or self.test_idx.size)

    def samples(self) -> list[tuple[np.ndarray, np.ndarray, int]]:
        return [(self.x_h[i], self.x_l[i], int(self.labels[i])) for i in range(self.n_samples)]

    def subset(self, which: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "test": self.test_idx}[which]
        return self.x_h[idx], self.x_l[idx], self.labels[idx]

    def class_counts(self, which: Optional[str] = None) -> np.ndarray:
        labels = self.labels if which is None else self.subset(which)[2]
        return np.bincount(labels, minlength=self.n_classes)


# -- synthetic ---------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 200
    d: int = DEFAULT_FEATURES
    separation: float = 4.0
    complementarity: bool = True
    train_fraction: float = 0.8

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthSpec":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**raw)


def synth_generate(spec: SynthSpec | dict, seed: int) -> DatasetBundle:
    """Four Gaussian blobs per modality, with unit noise.

    With ``complementarity`` the h mean encodes bit k // 2 of the class and the
    l mean encodes bit k % 2, each along one random direction, so every
    modality alone confounds one pair of classes.  Without it both
    modalities get distinct means for all four classes.  The returned bundle
    is already split with ``spec.train_fraction``.
    """
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    if spec.n_per_class < 4 or spec.d < 2:
        raise DataError("synthetic data needs n_per_class >= 4 and d >= 2")
    if not np.isfinite(spec.separation) or spec.separation < 0:
        raise DataError("separation must be a finite non-negative number")
    rng = np.random.default_rng(seed)
    n = spec.n_per_class
    labels = np.repeat(np.arange(N_CLASSES), n)
    half = spec.separation / 2
    means = {}
    for m in ("h", "l"):
        if spec.complementarity:
            u = rng.normal(size=spec.d)
            u /= np.linalg.norm(u)
            bit = (np.arange(N_CLASSES) // 2) if m == "h" else (np.arange(N_CLASSES) % 2)
            means[m] = np.outer(2 * bit - 1, u) * half
        else:
            q, _ = np.linalg.qr(rng.normal(size=(spec.d, 2)))
            corners = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float)
            means[m] = corners @ q.T * half
    x_h = means["h"][labels] + rng.normal(size=(labels.size, spec.d))
    x_l = means["l"][labels] + rng.normal(size=(labels.size, spec.d))
    meta = {"source": "synthetic", "seed": int(seed), "synthetic": spec.__dict__.copy()}
    bundle = DatasetBundle(x_h, x_l, labels, meta=meta)
    return split_dataset(bundle, spec.train_fraction, seed)


def linear_probe_accuracy(x_train, y_train, x_test, y_test, n_classes: int = N_CLASSES) -> float:
    """Least-squares one-vs-rest linear classifier; returns test accuracy."""
    a = np.column_stack([np.asarray(x_train, float), np.ones(len(x_train))])
    targets = np.eye(n_classes)[np.asarray(y_train)]
    w, *_ = np.linalg.lstsq(a, targets, rcond=None)
    b = np.column_stack([np.asarray(x_test, float), np.ones(len(x_test))])
    return float(np.mean(np.argmax(b @ w, axis=1) == np.asarray(y_test)))


# -- splitting ---------------------------------------------------------------

def _check_split_counts(labels: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=n_classes)
    for k, c in enumerate(counts):
        if 0 < c < 2:
            raise SplitError(f"class {k} has {c} sample; need at least 2 to split")
    return counts


def split_dataset(bundle: DatasetBundle, train_fraction: float, seed: int) -> DatasetBundle:
    """Stratified split: round(fraction * n_k) training samples from each class."""
    if not 0 < train_fraction < 1:
        raise SplitError("train_fraction must lie strictly between 0 and 1")
    counts = _check_split_counts(bundle.labels, bundle.n_classes)
    n_train = [int(min(max(round(train_fraction * c), 1), c - 1)) if c else 0 for c in counts]
    return split_by_counts(bundle, n_train, None, seed)


def split_by_counts(bundle: DatasetBundle, train_counts: Sequence[int],
                    test_counts: Optional[Sequence[int]], seed: int) -> DatasetBundle:
    """Stratified split with explicit per-class sizes (the rest goes to test when unspecified)."""
    counts = _check_split_counts(bundle.labels, bundle.n_classes)
    if len(train_counts) != bundle.n_classes or (test_counts is not None and len(test_counts) != bundle.n_classes):
        raise SplitError(f"expected {bundle.n_classes} per-class counts")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in range(bundle.n_classes):
        idx = np.flatnonzero(bundle.labels == k)
        idx = idx[rng.permutation(idx.size)]
        a = int(train_counts[k])
        b = counts[k] - a if test_counts is None else int(test_counts[k])
        if a < 0 or b < 0 or a + b > counts[k]:
            raise SplitError(f"class {k}: requested {a} train + {b} test but only {counts[k]} samples")
        train.append(np.sort(idx[:a]))
        test.append(np.sort(idx[a:a + b]))
    return replace(bundle, train_idx=np.concatenate(train), test_idx=np.concatenate(test))


# -- manifest I/O ------------------------------------------------------------

def _read_blob(path: Path, dtype: str, shape: Sequence[int]) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read ({exc.strerror})") from None
    want = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(raw) != want:
        raise ManifestError(f"{path}: expected {want} bytes for shape {list(shape)}, found {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ManifestError(f"{where}: missing field {key!r}")
    return obj[key]


def load_dataset(manifest_path, d: int = DEFAULT_FEATURES) -> DatasetBundle:
    path = Path(manifest_path)
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    root = path.parent
    mods = _require(manifest, "modalities", str(path))
    lab = _require(manifest, "labels", str(path))
    names = list(_require(manifest, "class_names", str(path)))

    label_path = root / _require(lab, "path", f"{path}: labels")
    count = int(_require(lab, "count", f"{path}: labels"))
    labels = _read_blob(label_path, "<i4", (count,)).astype(np.intp)
    if count and (labels.min() < 0 or labels.max() >= len(names)):
        bad = labels[(labels < 0) | (labels >= len(names))][0]
        raise DataError(f"{label_path}: label {bad} has no entry in class_names")

    raw = {}
    specs = {}
    for m in ("h", "l"):
        spec = _require(mods, m, f"{path}: modalities")
        blob = root / _require(spec, "path", f"{path}: modality {m}")
        shape = [int(s) for s in _require(spec, "shape", f"{path}: modality {m}")]
        if not shape or shape[0] != count:
            raise ManifestError(f"{blob}: leading dimension {shape[:1]} does not match {count} labels")
        raw[m] = _read_blob(blob, "<f4", shape).reshape(count, -1).astype(float)
        specs[m] = spec

    classes = manifest.get("classes")
    if classes is not None:
        classes = [int(c) for c in classes]
        if len(set(classes)) != len(classes) or any(not 0 <= c < len(names) for c in classes):
            raise DataError(f"{path}: invalid class subset {classes}")
        lut = np.full(len(names), -1, dtype=np.intp)
        lut[classes] = np.arange(len(classes))
        keep = lut[labels] >= 0
        labels = lut[labels[keep]]
        raw = {m: x[keep] for m, x in raw.items()}
        names = [names[c] for c in classes]

    bundle = DatasetBundle(raw["h"], raw["l"], labels, class_names=tuple(names),
                           meta={"source": str(path)})
    split = manifest.get("split", {})
    seed = int(split.get("seed", 0))
    if "train_counts" in split:
        bundle = split_by_counts(bundle, split["train_counts"], split.get("test_counts"), seed)
    else:
        bundle = split_dataset(bundle, float(split.get("train_fraction", 0.8)), seed)

    feats = {}
    for m in ("h", "l"):
        x = raw[m]
        if specs[m].get("pca", True):
            try:
                model = pca_fit(x[bundle.train_idx], d)
            except PcaError as exc:
                raise DataError(f"modality {m}: {exc}") from None
            x = pca_transform(model, x)
        feats[m] = x
    return replace(bundle, x_h=feats["h"], x_l=feats["l"])


def save_dataset(bundle: DatasetBundle, directory, split_seed: int = 0) -> Path:
    """Write already-reduced features in the manifest format (``"pca": false``)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    n = bundle.n_samples
    for m, x in (("h", bundle.x_h), ("l", bundle.x_l)):
        (out / f"{m}.f32").write_bytes(np.ascontiguousarray(x, dtype="<f4").tobytes())
    (out / "labels.i32").write_bytes(np.ascontiguousarray(bundle.labels, dtype="<i4").tobytes())
    split: dict = {"seed": split_seed}
    if bundle.has_split:
        split["train_counts"] = bundle.class_counts("train").tolist()
        split["test_counts"] = bundle.class_counts("test").tolist()
    manifest = {
        "modalities": {
            m: {"path": f"{m}.f32", "shape": [n, x.shape[1]], "pca": False}
            for m, x in (("h", bundle.x_h), ("l", bundle.x_l))
        },
        "labels": {"path": "labels.i32", "count": n},
        "class_names": list(bundle.class_names),
        "split": split,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
