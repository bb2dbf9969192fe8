"""Dempster-Shafer mass functions over small frames, encoded as subset bitmasks.

This is the classical side of the fusion-layer correspondence: the CC-R_y
gate fires only on the joint |11> control state, i.e. on the intersection of
the two modalities' evidence.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .fusion import belief_mass, fuse_triplet

MAX_FRAME = 16
MASS_TOL = 1e-12


class TotalConflictError(ArithmeticError):
    """The two bodies of evidence are fully contradictory (K = 1)."""


@dataclass(frozen=True)
class MassFunction:
    frame_size: int
    masses: Mapping[int, float]

    def __post_init__(self):
        if not 1 <= self.frame_size <= MAX_FRAME:
            raise ValueError(f"frame size must be in 1..{MAX_FRAME}")
        full = (1 << self.frame_size) - 1
        clean = {}
        for subset, m in self.masses.items():
            subset = int(subset)
            if subset & ~full:
                raise ValueError(f"subset {subset:#b} outside a frame of size {self.frame_size}")
            if m < -MASS_TOL or m > 1 + MASS_TOL:
                raise ValueError(f"mass {m} outside [0, 1]")
            if m != 0.0:
                clean[subset] = clean.get(subset, 0.0) + float(m)
        if clean.get(0, 0.0) != 0.0:
            raise ValueError("the empty set must carry zero mass")
        total = sum(clean.values())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total}, not 1")
        object.__setattr__(self, "masses", dict(sorted(clean.items())))

    @property
    def omega(self) -> int:
        return (1 << self.frame_size) - 1

    @classmethod
    def vacuous(cls, frame_size: int) -> "MassFunction":
        return cls(frame_size, {(1 << frame_size) - 1: 1.0})

    @classmethod
    def from_labels(cls, frame: list[str], masses: Mapping[frozenset | str, float]) -> "MassFunction":
        """Build from element names, e.g. ``{frozenset({"a"}): 0.6, "ab": 0.4}``."""
        index = {name: i for i, name in enumerate(frame)}
        out = {}
        for subset, m in masses.items():
            mask = 0
            for name in subset:
                mask |= 1 << index[name]
            out[mask] = m
        return cls(len(frame), out)

    def get(self, subset: int) -> float:
        return self.masses.get(subset, 0.0)

    def as_vector(self) -> np.ndarray:
        v = np.zeros(1 << self.frame_size)
        for subset, m in self.masses.items():
            v[subset] = m
        return v


def combine_conjunctive(m1: MassFunction, m2: MassFunction) -> tuple[MassFunction, float]:
    """Dempster's rule: normalized conjunctive combination and the conflict K."""
    if m1.frame_size != m2.frame_size:
        raise ValueError("mass functions are defined on different frames")
    # terms are summed in a canonical order so that m1 (+) m2 == m2 (+) m1 bit for bit
    terms = sorted(
        (a & b, min((a, ma), (b, mb)), max((a, ma), (b, mb)), ma * mb)
        for a, ma in m1.masses.items()
        for b, mb in m2.masses.items()
    )
    joint: dict[int, float] = {}
    conflict = 0.0
    for c, _, _, m in terms:
        if c == 0:
            conflict += m
        else:
            joint[c] = joint.get(c, 0.0) + m
    if conflict >= 1.0 - MASS_TOL:
        raise TotalConflictError("total conflict: K = 1")
    norm = 1.0 - conflict
    return MassFunction(m1.frame_size, {c: m / norm for c, m in joint.items()}), conflict


def verify_fusion_correspondence(v_h: float, v_l: float, theta: float) -> dict:
    """Compare the fused qubit's |1> population with the reliability-weighted mass product."""
    quantum = float(fuse_triplet(v_h, v_l, theta).data[1, 1].real)
    evidential = float(np.sin(v_h / 2) ** 2 * np.sin(v_l / 2) ** 2 * belief_mass(theta))
    return {
        "quantum_mass": quantum,
        "evidential_mass": evidential,
        "abs_diff": abs(quantum - evidential),
    }
