"""Core tensor/mask types, adversarial-image construction, losses, and metrics.

Conventions used throughout the package:

* images are channel-major ``(c, w, h)`` float32 arrays with every value
  in ``[0, 1]``;
* pixel masks are ``(w, h)`` boolean matrices whose popcount equals the
  perturbation budget ``B``;
* a "pixel" means one ``(i, j)`` grid cell covering all ``c`` channels.

All types here are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, DomainError

#: Guard added inside the log of the targeted cross-entropy loss so that
#: quantized oracles reporting an exact 0 probability do not yield inf.
CROSS_ENTROPY_EPS = 1e-12

ClassId = Union[int, str]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Image:
    """Dense ``(c, w, h)`` float32 tensor with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise DimensionError(f"image data must be (c, w, h), got shape {arr.shape}")
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"image dimensions must be >= 1, got {arr.shape}")
        arr = np.array(arr, dtype=np.float32)
        if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
            raise DomainError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def _from_valid(cls, arr: np.ndarray) -> "Image":
        """Wrap an array already known to satisfy the invariants (hot path)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "data", _frozen(np.ascontiguousarray(arr, dtype=np.float32)))
        return obj

    @classmethod
    def full(cls, shape: tuple[int, int, int], value: float) -> "Image":
        return cls(np.full(shape, value, dtype=np.float32))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def flat(self) -> np.ndarray:
        """Channel-major flattened view of length c*w*h."""
        return self.data.reshape(-1)


@dataclass(frozen=True)
class PixelMask:
    """``(w, h)`` binary pixel-selection matrix with exactly ``budget`` ones."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise DimensionError(f"mask must be (w, h), got shape {arr.shape}")
        arr = arr.astype(bool, copy=True)
        object.__setattr__(self, "bits", _frozen(arr))

    @classmethod
    def zeros(cls, width: int, height: int) -> "PixelMask":
        return cls(np.zeros((width, height), dtype=bool))

    @classmethod
    def from_indices(cls, width: int, height: int, indices: Sequence[int]) -> "PixelMask":
        """Build a mask from flat row-major indices into the (w, h) grid."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= width * height):
            raise DomainError("mask index out of range")
        if np.unique(idx).size != idx.size:
            raise DomainError("mask indices must be distinct")
        bits = np.zeros(width * height, dtype=bool)
        bits[idx] = True
        return cls(bits.reshape(width, height))

    @classmethod
    def random(cls, width: int, height: int, budget: int, rng: np.random.Generator) -> "PixelMask":
        """Uniformly random mask with exactly ``budget`` ones."""
        if budget > width * height:
            raise DomainError(f"budget {budget} exceeds grid size {width * height}")
        idx = rng.choice(width * height, size=budget, replace=False)
        return cls.from_indices(width, height, idx)

    @property
    def width(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]

    @property
    def budget(self) -> int:
        return int(self.bits.sum())

    def indices(self) -> np.ndarray:
        """Flat row-major indices of the selected pixels, ascending."""
        return np.flatnonzero(self.bits.reshape(-1))


@dataclass(frozen=True)
class ScoreVector:
    """Oracle response: either a full probability vector or partial labeled scores.

    The full form holds softmax probabilities over K classes (non-negative,
    summing to 1 within 1e-4).  The partial form holds a subset of
    (label, score) pairs as returned by partial-observation services.
    """

    probabilities: Optional[np.ndarray] = None
    labeled: Optional[tuple[tuple[str, float], ...]] = None

    def __post_init__(self):
        if (self.probabilities is None) == (self.labeled is None):
            raise DomainError("exactly one of probabilities/labeled must be set")
        if self.probabilities is not None:
            arr = np.asarray(self.probabilities, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise DomainError("probabilities must be a non-empty 1-d vector")
            if (arr < 0).any():
                raise DomainError("probabilities must be non-negative")
            total = float(arr.sum())
            if not (1.0 - 1e-4 <= total <= 1.0 + 1e-4):
                raise DomainError(f"probabilities must sum to 1 within 1e-4, got {total}")
            object.__setattr__(self, "probabilities", _frozen(arr))
        else:
            pairs = tuple((str(label), float(score)) for label, score in self.labeled)
            if not pairs:
                raise DomainError("labeled scores must be non-empty")
            labels = [label for label, _ in pairs]
            if len(set(labels)) != len(labels):
                raise DomainError("labels must be distinct")
            if any(not math.isfinite(score) for _, score in pairs):
                raise DomainError("scores must be finite")
            object.__setattr__(self, "labeled", pairs)

    @classmethod
    def full(cls, probabilities) -> "ScoreVector":
        return cls(probabilities=np.asarray(probabilities, dtype=np.float64))

    @classmethod
    def partial(cls, pairs) -> "ScoreVector":
        return cls(labeled=tuple(pairs))

    @property
    def is_partial(self) -> bool:
        return self.labeled is not None

    @property
    def num_classes(self) -> Optional[int]:
        return None if self.probabilities is None else int(self.probabilities.size)


class LossMode(str, Enum):
    TARGETED_CROSS_ENTROPY = "targeted-cross-entropy"
    UNTARGETED_MARGIN = "untargeted-margin"
    PARTIAL_MARGIN = "partial-margin"


@dataclass(frozen=True)
class LossSpec:
    """Which loss to minimize and against which classes.

    Targeted modes require ``target_class``; the untargeted margin requires
    ``source_class``.  For partial-observation oracles the target is a string
    label, otherwise an integer class index.
    """

    mode: LossMode
    source_class: Optional[int] = None
    target_class: Optional[ClassId] = None

    def __post_init__(self):
        mode = LossMode(self.mode)
        object.__setattr__(self, "mode", mode)
        if mode in (LossMode.TARGETED_CROSS_ENTROPY, LossMode.PARTIAL_MARGIN):
            if self.target_class is None:
                raise DomainError(f"{mode.value} requires target_class")
        if mode is LossMode.UNTARGETED_MARGIN and self.source_class is None:
            raise DomainError("untargeted-margin requires source_class")

    @property
    def is_targeted(self) -> bool:
        return self.mode is not LossMode.UNTARGETED_MARGIN


def apply_mask(u: PixelMask, x: Image, x_syn: Image) -> Image:
    """Compose the adversarial image: selected pixels come from ``x_syn``.

    For every pixel (i, j): all ``c`` channels are copied from ``x_syn``
    where u=1 and from ``x`` where u=0.
    """
    if x.shape != x_syn.shape:
        raise DimensionError(f"source {x.shape} and synthetic {x_syn.shape} shapes differ")
    if (u.width, u.height) != (x.width, x.height):
        raise DimensionError(
            f"mask {(u.width, u.height)} does not match image grid {(x.width, x.height)}"
        )
    out = np.where(u.bits[None, :, :], x_syn.data, x.data)
    return Image._from_valid(out)


def loss(scores: ScoreVector, spec: LossSpec) -> float:
    """Attack loss; lower is better for the attacker in every mode.

    * targeted-cross-entropy: ``-log(p[target] + eps)``
    * untargeted-margin: ``p[source] - max_{r != source} p[r]``
    * partial-margin: ``(top score) - (target's score, 0 if absent)``
    """
    mode = spec.mode
    if scores.is_partial:
        if mode is not LossMode.PARTIAL_MARGIN:
            raise DomainError("partial scores require the partial-margin loss")
        top = max(score for _, score in scores.labeled)
        target = str(spec.target_class)
        target_score = dict(scores.labeled).get(target, 0.0)
        return float(top - target_score)

    p = scores.probabilities
    if mode is LossMode.TARGETED_CROSS_ENTROPY:
        t = _check_class(spec.target_class, p.size, "target_class")
        return float(-np.log(p[t] + CROSS_ENTROPY_EPS))
    if mode is LossMode.UNTARGETED_MARGIN:
        s = _check_class(spec.source_class, p.size, "source_class")
        if p.size == 1:
            raise DomainError("untargeted margin needs at least two classes")
        others = np.delete(p, s)
        return float(p[s] - others.max())
    if mode is LossMode.PARTIAL_MARGIN:
        t = _check_class(spec.target_class, p.size, "target_class")
        return float(p.max() - p[t])
    raise DomainError(f"unknown loss mode {mode!r}")


def _check_class(cls_id, num_classes: int, name: str) -> int:
    if not isinstance(cls_id, (int, np.integer)):
        raise DomainError(f"{name} must be an integer index for full score vectors")
    if not 0 <= int(cls_id) < num_classes:
        raise DomainError(f"{name} {cls_id} out of range for {num_classes} classes")
    return int(cls_id)


def predicted_label(scores: ScoreVector) -> ClassId:
    """Argmax label; ties broken to the lowest index / lexicographic label."""
    if scores.is_partial:
        best = max(score for _, score in scores.labeled)
        return min(label for label, score in scores.labeled if score == best)
    return int(np.argmax(scores.probabilities))


def goal_met(scores: ScoreVector, spec: LossSpec) -> bool:
    """Whether the oracle's reply satisfies the attack goal."""
    pred = predicted_label(scores)
    if spec.mode is LossMode.UNTARGETED_MARGIN:
        return pred != spec.source_class
    if spec.mode is LossMode.PARTIAL_MARGIN and scores.is_partial:
        return pred == str(spec.target_class)
    return pred == spec.target_class


def sparsity(x: Image, x_adv: Image) -> float:
    """Fraction of pixels differing in at least one channel.

    Uses exact float inequality: composed adversarial pixels are verbatim
    copies, so differences are exact.
    """
    if x.shape != x_adv.shape:
        raise DimensionError(f"shapes differ: {x.shape} vs {x_adv.shape}")
    changed = np.any(x.data != x_adv.data, axis=0)
    return float(changed.sum()) / float(x.width * x.height)
