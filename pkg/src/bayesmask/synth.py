"""Synthetic color images (the reduced search space) and the dissimilarity map.

The attack never searches for colors: a synthetic image, generated once per
attack, fixes the color every perturbed pixel will take.  The default scheme
draws each channel value from {0, 1} uniformly; alternatives are provided
for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .core import Image
from .errors import ConfigError, DimensionError, DomainError


class SynthKind(str, Enum):
    BINARY_UNIFORM = "binary-uniform"
    UNIFORM_CONTINUOUS = "uniform-continuous"
    GAUSSIAN_CLIPPED = "gaussian-clipped"
    INVERTED_FREQUENCY = "inverted-frequency"


@dataclass(frozen=True)
class SynthScheme:
    """Synthetic-image generation scheme and its parameters."""

    kind: SynthKind = SynthKind.BINARY_UNIFORM
    gaussian_mean: float = 0.5
    gaussian_std: float = 0.17

    def __post_init__(self):
        object.__setattr__(self, "kind", SynthKind(self.kind))
        if self.gaussian_std <= 0:
            raise DomainError("gaussian_std must be positive")


@dataclass(frozen=True)
class DissimilarityMap:
    """Per-pixel mean absolute channel difference, entries in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"dissimilarity map must be (w, h), got {arr.shape}")
        if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
            raise DomainError("dissimilarity values must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


def generate_synthetic(shape: tuple[int, int, int], scheme: SynthScheme,
                       rng: np.random.Generator,
                       source: Optional[Image] = None) -> Image:
    """Generate the synthetic color image for one attack.

    binary-uniform draws every channel value from {0, 1} with probability
    1/2; uniform-continuous from U[0, 1]; gaussian-clipped from
    N(mean, std^2) clipped to [0, 1]; inverted-frequency samples each
    channel independently from the 256-bin color histogram of
    ``1 - source`` (requires ``source``).
    """
    c, w, h = shape
    kind = scheme.kind
    if kind is SynthKind.BINARY_UNIFORM:
        data = rng.integers(0, 2, size=(c, w, h)).astype(np.float32)
    elif kind is SynthKind.UNIFORM_CONTINUOUS:
        data = rng.random(size=(c, w, h)).astype(np.float32)
    elif kind is SynthKind.GAUSSIAN_CLIPPED:
        data = rng.normal(scheme.gaussian_mean, scheme.gaussian_std, size=(c, w, h))
        data = np.clip(data, 0.0, 1.0).astype(np.float32)
    elif kind is SynthKind.INVERTED_FREQUENCY:
        if source is None:
            raise ConfigError("inverted-frequency scheme requires the source image")
        if source.shape != tuple(shape):
            raise DimensionError(f"source shape {source.shape} != requested {tuple(shape)}")
        data = _inverted_frequency(source, rng)
    else:  # pragma: no cover - enum is closed
        raise ConfigError(f"unknown synthetic scheme {kind!r}")
    return Image(data)


def _inverted_frequency(source: Image, rng: np.random.Generator) -> np.ndarray:
    """Sample colors proportionally to their frequency in the inverted source.

    Channels are sampled independently from their own 256-bin histogram;
    emitted values sit on the 8-bit grid k/255.
    """
    c, w, h = source.shape
    inverted = 1.0 - source.data
    levels = np.clip(np.round(inverted * 255.0), 0, 255).astype(np.int64)
    out = np.empty((c, w, h), dtype=np.float32)
    for ch in range(c):
        counts = np.bincount(levels[ch].reshape(-1), minlength=256)
        probs = counts / counts.sum()
        drawn = rng.choice(256, size=w * h, p=probs)
        out[ch] = (drawn.reshape(w, h) / 255.0).astype(np.float32)
    return out


def dissimilarity_map(x: Image, x_syn: Image) -> DissimilarityMap:
    """Mean absolute channel difference per pixel: ``sum_c |x - x'| / c``."""
    if x.shape != x_syn.shape:
        raise DimensionError(f"shapes differ: {x.shape} vs {x_syn.shape}")
    diff = np.abs(x.data.astype(np.float64) - x_syn.data.astype(np.float64))
    return DissimilarityMap(diff.mean(axis=0))
