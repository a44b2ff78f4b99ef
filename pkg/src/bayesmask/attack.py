"""The sparse attack: initialization, scheduler, candidate generation, and
the accept/reject query loop, plus the uniform-belief ablation baseline.

One run is strictly sequential: every oracle query depends on the previous
accept/reject decision.  All randomness flows from ``AttackConfig.seed``;
identical inputs reproduce bit-identical results.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .bayes import (DEFAULT_SMOOTHING, BeliefState, SamplerSeed, sample_keep,
                    sample_new)
from .core import (Image, LossSpec, PixelMask, ScoreVector, apply_mask,
                   goal_met, loss, sparsity)
from .errors import (BayesmaskError, BudgetExhaustedError, ConfigError,
                     DimensionError, DomainError, ProtocolError,
                     TransportError)
from .oracle import ScoreOracle
from .synth import DissimilarityMap, SynthScheme, dissimilarity_map, generate_synthetic

Observer = Callable[[str, PixelMask], None]


class SchedulerKind(str, Enum):
    POWER_STEP = "power-step"
    STEP_DECAY = "step-decay"
    COSINE_ANNEALING = "cosine-annealing"


class LearningMode(str, Enum):
    BAYESIAN = "bayesian"
    UNIFORM_ABLATION = "uniform-ablation"


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyper-parameters.

    ``lambda0`` defaults by attack mode when left unset: 0.3 untargeted,
    0.15 targeted (use 0.05 for high-resolution targeted attacks).
    """

    budget: int
    query_limit: int
    initial_samples: int = 10
    lambda0: Optional[float] = None
    m1: float = 0.24
    m2: float = 0.997
    alpha_prior: float = 1.0
    z: float = DEFAULT_SMOOTHING
    scheduler: SchedulerKind = SchedulerKind.POWER_STEP
    use_dissimilarity_map: bool = True
    learning: LearningMode = LearningMode.BAYESIAN
    seed: SamplerSeed = SamplerSeed(0)
    synth: SynthScheme = SynthScheme()

    def __post_init__(self):
        object.__setattr__(self, "scheduler", SchedulerKind(self.scheduler))
        object.__setattr__(self, "learning", LearningMode(self.learning))
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if not self.query_limit >= self.initial_samples >= 1:
            raise ConfigError("need query_limit >= initial_samples >= 1")
        if self.lambda0 is not None and not 0.0 < self.lambda0 <= 1.0:
            raise ConfigError("lambda0 must lie in (0, 1]")
        if self.m1 <= 0:
            raise ConfigError("m1 must be positive")
        if not 0.0 < self.m2 < 1.0:
            raise ConfigError("m2 must lie in (0, 1)")
        if self.alpha_prior < 1.0:
            raise ConfigError("alpha_prior must be >= 1")
        if self.z <= 0:
            raise ConfigError("z must be positive")

    def resolved(self, spec: LossSpec) -> "AttackConfig":
        """Fill ``lambda0`` from the attack mode when unset."""
        if self.lambda0 is not None:
            return self
        lam0 = 0.15 if spec.is_targeted else 0.3
        return dataclasses.replace(self, lambda0=lam0)

    _FIELD_NAMES = None  # populated below

    @classmethod
    def from_mapping(cls, mapping: dict, **overrides) -> "AttackConfig":
        """Build a config from flat key-value pairs (config-file keys).

        ``seed``/``stream`` integer keys combine into the sampler seed;
        ``synth_scheme`` selects the synthetic-image scheme.  Keys not
        belonging to the attack are ignored (they may belong to the
        harness or oracle sections of the same file).
        """
        known = set(cls._FIELD_NAMES) | {"seed", "stream", "synth_scheme"}
        values = {k: v for k, v in mapping.items() if k in known}
        values.update({k: v for k, v in overrides.items() if v is not None})
        seed = SamplerSeed(int(values.pop("seed", 0)), int(values.pop("stream", 0)))
        synth = SynthScheme(kind=values.pop("synth_scheme", SynthKindDefault))
        values.pop("synth", None)
        try:
            return cls(seed=seed, synth=synth, **values)
        except TypeError as exc:
            raise ConfigError(f"bad attack config: {exc}") from exc


SynthKindDefault = SynthScheme().kind
AttackConfig._FIELD_NAMES = tuple(
    f.name for f in dataclasses.fields(AttackConfig) if f.name not in ("seed", "synth"))


@dataclass(frozen=True)
class AttackResult:
    """Outcome of one attack run."""

    success: bool
    final_mask: PixelMask
    adversarial: Image
    queries_used: int
    loss_trace: tuple[tuple[int, float], ...]
    achieved_sparsity: float
    init_queries: int
    abort_reason: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "loss_trace", tuple((int(q), float(v)) for q, v in self.loss_trace))
        losses = [v for _, v in self.loss_trace]
        if any(b > a for a, b in zip(losses, losses[1:])):
            raise BayesmaskError("loss trace must be non-increasing")

    def to_dict(self) -> dict:
        from .oracle import encode_image_payload

        return {
            "success": self.success,
            "final_mask": {
                "width": self.final_mask.width,
                "height": self.final_mask.height,
                "indices": self.final_mask.indices().tolist(),
            },
            "adversarial": {
                "shape": list(self.adversarial.shape),
                "data_b64": encode_image_payload(self.adversarial),
            },
            "queries_used": self.queries_used,
            "loss_trace": [[q, v] for q, v in self.loss_trace],
            "achieved_sparsity": self.achieved_sparsity,
            "init_queries": self.init_queries,
            "abort_reason": self.abort_reason,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AttackResult":
        from .oracle import decode_image_payload

        mask = PixelMask.from_indices(payload["final_mask"]["width"],
                                      payload["final_mask"]["height"],
                                      payload["final_mask"]["indices"])
        adv = Image(decode_image_payload(payload["adversarial"]["shape"],
                                         payload["adversarial"]["data_b64"]))
        return cls(success=payload["success"], final_mask=mask, adversarial=adv,
                   queries_used=payload["queries_used"],
                   loss_trace=tuple((q, v) for q, v in payload["loss_trace"]),
                   achieved_sparsity=payload["achieved_sparsity"],
                   init_queries=payload["init_queries"],
                   abort_reason=payload.get("abort_reason"))


def schedule(t: int, cfg: AttackConfig) -> tuple[float, int]:
    """Changing rate and keep count for round ``t`` (1-based).

    power-step: ``lambda_t = lambda0 * (t^m1 + m2^t)``; the alternatives
    decay lambda0 by halving every query_limit/10 rounds (step-decay) or by
    cosine annealing over query_limit rounds.  lambda_t is clamped to
    [0, 1] and the keep count ``b = ceil((1 - lambda_t) * B)`` to [0, B].
    """
    if t < 1:
        raise DomainError("round index starts at 1")
    lam0 = cfg.lambda0
    if lam0 is None:
        raise ConfigError("lambda0 unresolved; call cfg.resolved(loss_spec) first")
    if cfg.scheduler is SchedulerKind.POWER_STEP:
        lam = lam0 * (t ** cfg.m1 + cfg.m2 ** t)
    elif cfg.scheduler is SchedulerKind.STEP_DECAY:
        step = max(1, cfg.query_limit // 10)
        lam = lam0 * 0.5 ** (t // step)
    else:
        progress = min(t, cfg.query_limit) / cfg.query_limit
        lam = 0.5 * lam0 * (1.0 + math.cos(math.pi * progress))
    lam = min(max(lam, 0.0), 1.0)
    b = math.ceil((1.0 - lam) * cfg.budget)
    return lam, min(max(b, 0), cfg.budget)


@dataclass
class InitOutcome:
    mask: Optional[PixelMask]
    loss: float
    consumed: int
    success: bool


class InitInterrupted(BayesmaskError):
    """Initialization could not finish; carries the partial outcome."""

    def __init__(self, partial: InitOutcome, reason: str):
        super().__init__(reason)
        self.partial = partial
        self.reason = reason


def initialize(x: Image, x_syn: Image, spec: LossSpec, cfg: AttackConfig,
               oracle: ScoreOracle, rng: np.random.Generator,
               observer: Optional[Observer] = None) -> InitOutcome:
    """Evaluate ``initial_samples`` uniformly random masks; keep the best.

    Stops early (success=True) on a candidate that already satisfies the
    attack goal.  Budget or transport failures raise
    :class:`InitInterrupted` carrying the best mask found so far.
    """
    best_mask: Optional[PixelMask] = None
    best_loss = math.inf
    consumed = 0
    for _ in range(cfg.initial_samples):
        mask = PixelMask.random(x.width, x.height, cfg.budget, rng)
        candidate = apply_mask(mask, x, x_syn)
        try:
            scores = oracle.query(candidate)
        except BudgetExhaustedError:
            raise InitInterrupted(InitOutcome(best_mask, best_loss, consumed, False),
                                  "query budget exhausted during initialization")
        except (TransportError, ProtocolError) as exc:
            raise InitInterrupted(InitOutcome(best_mask, best_loss, consumed, False),
                                  f"oracle failure during initialization: {exc}")
        consumed += 1
        if observer is not None:
            observer("init", mask)
        cand_loss = loss(scores, spec)
        if cand_loss < best_loss:
            best_mask, best_loss = mask, cand_loss
        if goal_met(scores, spec):
            return InitOutcome(mask, cand_loss, consumed, True)
    return InitOutcome(best_mask, best_loss, consumed, False)


def generate(belief: BeliefState, dissim: Optional[DissimilarityMap],
             u_prev: PixelMask, lambda_t: float, cfg: AttackConfig,
             rng: np.random.Generator) -> PixelMask:
    """Propose the next mask: keep ``b`` selected pixels, draw ``B - b`` new.

    Kept pixels are drawn by theta over the current selection; new pixels
    by theta times the dissimilarity map over the unselected support.  The
    uniform-ablation mode replaces theta with the uniform matrix and
    ignores the map.  When the unselected support is smaller than ``B - b``
    (tiny images) the turnover is clamped, never duplicating pixels.
    """
    budget = u_prev.budget
    b = math.ceil((1.0 - min(max(lambda_t, 0.0), 1.0)) * budget)
    b = min(max(b, 0), budget)
    fresh = budget - b
    unselected = u_prev.width * u_prev.height - budget
    if fresh > unselected:
        fresh = unselected
        b = budget - fresh
    if cfg.learning is LearningMode.UNIFORM_ABLATION:
        theta = np.full((u_prev.width, u_prev.height),
                        1.0 / (u_prev.width * u_prev.height))
        weights_map = None
    else:
        theta = belief.theta
        weights_map = dissim.values if (cfg.use_dissimilarity_map and dissim is not None) else None
    kept = sample_keep(theta, u_prev, b, rng)
    new = sample_new(theta, weights_map, u_prev, fresh, rng)
    bits = np.zeros(u_prev.width * u_prev.height, dtype=bool)
    bits[kept] = True
    bits[new] = True
    mask = PixelMask(bits.reshape(u_prev.width, u_prev.height))
    if mask.budget != budget:  # pragma: no cover - defended invariant
        raise BayesmaskError("generated mask lost cardinality")
    return mask


def update_step(u_cand: PixelMask, loss_cand: float, u_prev: PixelMask,
                loss_prev: float, belief: BeliefState
                ) -> tuple[PixelMask, float, BeliefState]:
    """Fold the outcome into the belief, then accept on strict improvement."""
    belief.record_outcome(u_prev, u_cand, loss_prev, loss_cand)
    if loss_cand < loss_prev:
        return u_cand, loss_cand, belief
    return u_prev, loss_prev, belief


def run_attack(x: Image, spec: LossSpec, cfg: AttackConfig, oracle: ScoreOracle,
               *, x_syn: Optional[Image] = None,
               initial_scores: Optional[ScoreVector] = None,
               observer: Optional[Observer] = None,
               belief_out: Optional[list] = None) -> AttackResult:
    """Run the full query loop; at most ``cfg.query_limit`` oracle queries.

    ``initial_scores`` (the clean image's scores, from a bookkeeping query
    outside the attack budget) enables the degenerate shortcut: an input
    that already satisfies the goal returns success with zero queries.
    ``x_syn`` may be injected for audit/replay; otherwise it is generated
    once from the seed's synthetic stream.  ``belief_out``, when given a
    list, receives the final belief state.
    """
    cfg = cfg.resolved(spec)
    if cfg.budget > x.width * x.height:
        raise ConfigError(f"budget {cfg.budget} exceeds {x.width * x.height} pixels")
    zeros = PixelMask.zeros(x.width, x.height)
    if initial_scores is not None and goal_met(initial_scores, spec):
        return AttackResult(True, zeros, x, 0, (), 0.0, init_queries=0)

    synth_rng, attack_rng = cfg.seed.split(2)
    if x_syn is None:
        x_syn = generate_synthetic(x.shape, cfg.synth, synth_rng, source=x)
    elif x_syn.shape != x.shape:
        raise DimensionError(f"synthetic shape {x_syn.shape} != source {x.shape}")
    dissim = dissimilarity_map(x, x_syn)

    try:
        init = initialize(x, x_syn, spec, cfg, oracle, attack_rng, observer)
    except InitInterrupted as exc:
        part = exc.partial
        mask = part.mask if part.mask is not None else zeros
        adv = apply_mask(mask, x, x_syn) if part.mask is not None else x
        trace = ((part.consumed, part.loss),) if part.mask is not None else ()
        return AttackResult(False, mask, adv, part.consumed, trace,
                            sparsity(x, adv), init_queries=part.consumed,
                            abort_reason=exc.reason)

    queries = init.consumed
    trace: list[tuple[int, float]] = [(queries, init.loss)]
    if init.success:
        adv = apply_mask(init.mask, x, x_syn)
        return AttackResult(True, init.mask, adv, queries, tuple(trace),
                            sparsity(x, adv), init_queries=queries)

    belief = BeliefState(x.width, x.height, alpha_prior=cfg.alpha_prior, z=cfg.z)
    belief.seed_selection(init.mask)
    u_prev, loss_prev = init.mask, init.loss
    abort_reason = None
    success_mask: Optional[PixelMask] = None
    t = 1
    while queries < cfg.query_limit:
        lam, _ = schedule(t, cfg)
        u_cand = generate(belief, dissim, u_prev, lam, cfg, attack_rng)
        x_cand = apply_mask(u_cand, x, x_syn)
        try:
            scores = oracle.query(x_cand)
        except BudgetExhaustedError:
            break
        except (TransportError, ProtocolError) as exc:
            abort_reason = f"oracle failure at query {queries + 1}: {exc}"
            break
        queries += 1
        if observer is not None:
            observer("loop", u_cand)
        loss_cand = loss(scores, spec)
        hit = goal_met(scores, spec)
        u_prev, loss_prev, belief = update_step(u_cand, loss_cand, u_prev,
                                                loss_prev, belief)
        trace.append((queries, loss_prev))
        if hit:
            success_mask = u_cand
            break
        t += 1

    if belief_out is not None:
        belief_out.append(belief)
    if success_mask is not None:
        adv = apply_mask(success_mask, x, x_syn)
        return AttackResult(True, success_mask, adv, queries, tuple(trace),
                            sparsity(x, adv), init_queries=init.consumed)
    adv = apply_mask(u_prev, x, x_syn)
    return AttackResult(False, u_prev, adv, queries, tuple(trace),
                        sparsity(x, adv), init_queries=init.consumed,
                        abort_reason=abort_reason)


def run_baseline_uniform(x: Image, spec: LossSpec, cfg: AttackConfig,
                         oracle: ScoreOracle, **kwargs) -> AttackResult:
    """Ablation comparator: the same loop with uniform theta and no map."""
    ablated = dataclasses.replace(cfg, learning=LearningMode.UNIFORM_ABLATION)
    return run_attack(x, spec, ablated, oracle, **kwargs)
