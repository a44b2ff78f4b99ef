"""Dirichlet-Categorical belief over pixel influence.

Two integer accumulators drive the belief:

* ``n[i, j]`` counts how often pixel (i, j) took part in a candidate step
  (selected in the previous or the candidate mask);
* ``a[i, j]`` counts how often removing pixel (i, j) failed to reduce the
  loss (evidence that the pixel influences the model's decision).

From these, ``s = (a + z) / (n + z) - 1`` lies in (-1, 0], the posterior
concentration is ``alpha_prior + s`` (positive whenever alpha_prior >= 1),
and the categorical parameter ``theta`` is the Dirichlet expectation
``alpha / sum(alpha)``.  ``theta`` biases which selected pixels are kept
and which unselected pixels are drawn next.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PixelMask
from .errors import BayesmaskError, DimensionError, DomainError

DEFAULT_SMOOTHING = 0.01


@dataclass(frozen=True)
class SamplerSeed:
    """Root of all stochastic choices of one attack run.

    ``seed`` identifies the experiment, ``stream`` the run within it (the
    harness gives every evaluation pair its own stream).  Equal seeds yield
    bit-identical runs.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64 and 0 <= int(self.stream) < 2**64):
            raise DomainError("seed and stream must be unsigned 64-bit integers")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence())

    def split(self, n: int) -> list[np.random.Generator]:
        """n independent generators derived from this seed."""
        return [np.random.default_rng(s) for s in self.seed_sequence().spawn(n)]

    def with_stream(self, stream: int) -> "SamplerSeed":
        return SamplerSeed(self.seed, stream)


class BeliefState:
    """Mutable per-run belief; exclusively owned by a single attack run."""

    def __init__(self, width: int, height: int, alpha_prior: float = 1.0,
                 z: float = DEFAULT_SMOOTHING):
        if width < 1 or height < 1:
            raise DimensionError("belief grid dimensions must be >= 1")
        if alpha_prior < 1.0:
            raise DomainError("alpha_prior must be >= 1 to keep the posterior positive")
        if z <= 0.0:
            raise DomainError("smoothing constant z must be positive")
        self.width = width
        self.height = height
        self.alpha_prior = float(alpha_prior)
        self.z = float(z)
        self.a = np.zeros((width, height), dtype=np.int64)
        self.n = np.zeros((width, height), dtype=np.int64)
        # theta starts as the expectation of the prior: uniform.
        self.theta = np.full((width, height), 1.0 / (width * height), dtype=np.float64)

    def seed_selection(self, mask: PixelMask) -> None:
        """Mark the initial mask's pixels as selected once (n only).

        Does not refresh theta: the first candidate round samples from the
        prior expectation, later rounds from the recorded history.
        """
        self._check_mask(mask)
        self.n[mask.bits] += 1

    def posterior_alpha(self) -> np.ndarray:
        """Elementwise ``alpha_prior + (a + z)/(n + z) - 1``."""
        s = (self.a + self.z) / (self.n + self.z) - 1.0
        return self.alpha_prior + s

    def theta_expectation(self) -> np.ndarray:
        """Dirichlet expectation ``alpha / sum(alpha)``; sums to 1."""
        alpha = self.posterior_alpha()
        if (alpha <= 0).any():
            raise BayesmaskError("posterior concentration must be positive")
        return alpha / alpha.sum()

    def record_outcome(self, u_prev: PixelMask, u_cand: PixelMask,
                       loss_prev: float, loss_cand: float) -> "BeliefState":
        """Fold one candidate evaluation into the counters and refresh theta.

        ``n`` increments on the union of both masks.  When the candidate is
        rejected (``loss_cand >= loss_prev``), ``a`` increments on the pixels
        that were removed (selected before, absent from the candidate): their
        removal failed to reduce the loss.  Updates in place and returns self.
        """
        self._check_mask(u_prev)
        self._check_mask(u_cand)
        if u_prev.budget != u_cand.budget:
            raise DimensionError(
                f"mask budgets differ: {u_prev.budget} vs {u_cand.budget}")
        self.n[u_prev.bits | u_cand.bits] += 1
        if loss_cand >= loss_prev:
            self.a[u_prev.bits & ~u_cand.bits] += 1
        self.theta = self.theta_expectation()
        return self

    def _check_mask(self, mask: PixelMask) -> None:
        if (mask.width, mask.height) != (self.width, self.height):
            raise DimensionError(
                f"mask {(mask.width, mask.height)} does not match "
                f"belief grid {(self.width, self.height)}")

    def to_dict(self) -> dict:
        """Flat JSON-ready dump of a, n, alpha_posterior, theta."""
        return {
            "width": self.width,
            "height": self.height,
            "alpha_prior": self.alpha_prior,
            "z": self.z,
            "a": self.a.reshape(-1).tolist(),
            "n": self.n.reshape(-1).tolist(),
            "alpha_posterior": self.posterior_alpha().reshape(-1).tolist(),
            "theta": self.theta.reshape(-1).tolist(),
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, payload: dict) -> "BeliefState":
        belief = cls(payload["width"], payload["height"],
                     alpha_prior=payload.get("alpha_prior", 1.0),
                     z=payload.get("z", DEFAULT_SMOOTHING))
        belief.a = np.asarray(payload["a"], dtype=np.int64).reshape(belief.a.shape)
        belief.n = np.asarray(payload["n"], dtype=np.int64).reshape(belief.n.shape)
        belief.theta = np.asarray(payload["theta"], dtype=np.float64).reshape(belief.theta.shape)
        return belief


def weighted_subset(weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct indices drawn without replacement with probability ~ weights.

    Implemented as an exponential race (keys ``Exp(1) / w``, take the k
    smallest), which is distributed identically to successive renormalized
    categorical draws.  Zero-weight entries are only used once every
    positive-weight entry is taken, uniformly at random among themselves;
    with no positive weight at all the draw is uniform.
    """
    n = int(weights.size)
    if k < 0 or k > n:
        raise DomainError(f"cannot draw {k} distinct items from {n}")
    # Consume the same amount of randomness regardless of the weights so
    # that runs differing only in weights stay stream-aligned.
    race = rng.standard_exponential(n)
    tiebreak = rng.random(n)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    keys = np.empty(n, dtype=np.float64)
    positive = weights > 0
    keys[positive] = race[positive] / weights[positive]
    keys[~positive] = 1e300 * (1.0 + tiebreak[~positive])
    if k == n:
        return np.arange(n, dtype=np.int64)
    chosen = np.argpartition(keys, k - 1)[:k]
    return np.sort(chosen).astype(np.int64)


def sample_keep(theta: np.ndarray, u_prev: PixelMask, b: int,
                rng: np.random.Generator) -> np.ndarray:
    """Keep ``b`` of the selected pixels, biased by theta on the selection.

    Returns flat row-major pixel indices, ascending.
    """
    support = u_prev.indices()
    if b > support.size:
        raise DomainError(f"cannot keep {b} pixels out of {support.size} selected")
    weights = theta.reshape(-1)[support]
    picked = weighted_subset(weights, b, rng)
    return support[picked]


def sample_new(theta: np.ndarray, dissim: np.ndarray | None, u_prev: PixelMask,
               k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``k`` fresh pixels from the unselected support.

    Weights are ``theta * dissim`` (theta alone when ``dissim`` is None);
    all-zero weights fall back to a uniform draw over the support.
    Returns flat row-major pixel indices, ascending.
    """
    flat = ~u_prev.bits.reshape(-1)
    support = np.flatnonzero(flat)
    if k > support.size:
        raise DomainError(f"cannot draw {k} pixels from {support.size} unselected")
    weights = theta.reshape(-1)[support]
    if dissim is not None:
        weights = weights * dissim.reshape(-1)[support]
    picked = weighted_subset(weights, k, rng)
    return support[picked]
