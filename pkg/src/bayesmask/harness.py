"""Evaluation-protocol runner: pair sets, budgeted sweeps, ASR grids, export.

A dataset is a directory of PNGs plus ``manifest.json`` listing
``[{"file": ..., "label": ...}, ...]``.  Images are verified against the
victim with one bookkeeping query each (outside any attack budget,
reported separately); misclassified images are skipped.  Each surviving
image is paired with random target classes, every pair owning its own
seed stream so sweeps are reproducible and order-independent.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .attack import AttackConfig, AttackResult, run_attack
from .bayes import SamplerSeed
from .core import LossMode, LossSpec, predicted_label
from .errors import BayesmaskError, ConfigError
from .imgio import load_image
from .oracle import ScoreOracle

# Default grids sized for targeted sweeps on 224x224-class tasks.
DEFAULT_QUERY_GRID = (2000, 4000, 6000, 8000, 10000)
DEFAULT_SPARSITY_GRID = (0.004, 0.006, 0.008, 0.010)

@dataclass(frozen=True)
class EvalPair:
    """One attack instance: an image and (optionally) a target class."""

    image_id: str
    path: str
    source_class: int
    target_class: Optional[int]
    stream: int

    def __post_init__(self):
        if self.target_class is not None and self.target_class == self.source_class:
            raise ConfigError("target class must differ from source class")

    def loss_spec(self) -> LossSpec:
        if self.target_class is None:
            return LossSpec(LossMode.UNTARGETED_MARGIN, source_class=self.source_class)
        return LossSpec(LossMode.TARGETED_CROSS_ENTROPY,
                        source_class=self.source_class,
                        target_class=self.target_class)


#: Called once per pair; lets decorators (noise, budgets) derive per-pair
#: state from the pair's seed stream so sweeps stay reproducible.
OracleFactory = Callable[[EvalPair], ScoreOracle]


@dataclass
class BuildReport:
    """Outcome of :func:`build_eval_set`, including the bookkeeping cost."""

    pairs: list[EvalPair]
    requested_images: int
    selected_images: int
    skipped: list[tuple[str, int]]          # (file, predicted label)
    bookkeeping_queries: int
    shortfall: int


def build_eval_set(dataset_dir, num_images: int, targets_per_image: int,
                   seed: SamplerSeed, oracle: ScoreOracle) -> BuildReport:
    """Select correctly classified images and pair them with targets.

    Images are drawn evenly across classes where possible.  With
    ``targets_per_image == 0`` every image yields a single untargeted pair;
    otherwise each image is paired with that many distinct random
    non-source classes.  Pass an unlimited-budget oracle: its queries are
    bookkeeping, not attack queries.
    """
    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{manifest_path} not found")
    entries = json.loads(manifest_path.read_text())
    entries = sorted(entries, key=lambda e: str(e["file"]))
    if not entries:
        raise ConfigError(f"{manifest_path} lists no images")

    classes = oracle.num_classes
    if classes is None:
        raise ConfigError("oracle does not report a class count")
    if targets_per_image > classes - 1:
        raise ConfigError(
            f"cannot draw {targets_per_image} distinct targets from {classes} classes")

    rng = seed.generator()
    by_label: dict[int, list[dict]] = {}
    for entry in entries:
        by_label.setdefault(int(entry["label"]), []).append(entry)
    for label in by_label:
        group = by_label[label]
        order = rng.permutation(len(group))
        by_label[label] = [group[i] for i in order]

    # Round-robin across classes keeps the draw even where possible.
    queue: list[dict] = []
    depth = 0
    while any(len(g) > depth for g in by_label.values()):
        for label in sorted(by_label):
            if len(by_label[label]) > depth:
                queue.append(by_label[label][depth])
        depth += 1

    selected: list[dict] = []
    skipped: list[tuple[str, int]] = []
    bookkeeping = 0
    for entry in queue:
        if len(selected) == num_images:
            break
        image = load_image(dataset_dir / str(entry["file"]))
        scores = oracle.query(image)
        bookkeeping += 1
        pred = predicted_label(scores)
        if pred == int(entry["label"]):
            selected.append(entry)
        else:
            skipped.append((str(entry["file"]), int(pred)))

    pairs: list[EvalPair] = []
    stream = 0
    for entry in selected:
        source = int(entry["label"])
        path = str(dataset_dir / str(entry["file"]))
        if targets_per_image == 0:
            pairs.append(EvalPair(str(entry["file"]), path, source, None, stream))
            stream += 1
            continue
        others = [c for c in range(classes) if c != source]
        order = rng.permutation(len(others))
        for k in order[:targets_per_image]:
            pairs.append(EvalPair(str(entry["file"]), path, source, others[k], stream))
            stream += 1

    return BuildReport(pairs=pairs, requested_images=num_images,
                       selected_images=len(selected), skipped=skipped,
                       bookkeeping_queries=bookkeeping,
                       shortfall=max(0, num_images - len(selected)))


@dataclass
class PairOutcome:
    """One pair's attack outcome (full result kept for export)."""

    pair: EvalPair
    success: bool
    queries_used: int
    achieved_sparsity: float
    final_loss: Optional[float]
    abort_reason: Optional[str]
    result: Optional[AttackResult]


@dataclass
class EvalReport:
    """Sweep results plus the ASR matrix over (query, sparsity) grids."""

    outcomes: list[PairOutcome]
    query_grid: tuple[int, ...]
    sparsity_grid: tuple[float, ...]
    asr: list[list[float]]                  # rows: query grid, cols: sparsity grid
    accuracy_under_attack: float
    median_queries: Optional[float]
    mean_queries: Optional[float]
    metadata: dict = field(default_factory=dict)


def evaluate(pairs: Sequence[EvalPair], cfg: AttackConfig,
             oracle_factory: OracleFactory,
             query_grid: Sequence[int] = DEFAULT_QUERY_GRID,
             sparsity_grid: Sequence[float] = DEFAULT_SPARSITY_GRID,
             workers: int = 1) -> EvalReport:
    """One attack per pair; a pair counts at (q, s) iff it succeeded with
    queries_used <= q and achieved_sparsity <= s.

    Every pair runs under ``SamplerSeed(cfg.seed.seed, pair.stream)``, so a
    fixed master seed reproduces the report regardless of worker count.
    Individual attack failures are recorded, never raised.
    """
    query_grid = tuple(sorted(int(q) for q in query_grid))
    sparsity_grid = tuple(sorted(float(s) for s in sparsity_grid))
    if not query_grid or not sparsity_grid:
        raise ConfigError("query and sparsity grids must be non-empty")

    def run_one(pair: EvalPair) -> PairOutcome:
        spec = pair.loss_spec()
        run_cfg = dataclasses.replace(cfg, seed=cfg.seed.with_stream(pair.stream))
        try:
            oracle = oracle_factory(pair)
            x = load_image(pair.path)
            result = run_attack(x, spec, run_cfg, oracle)
        except Exception as exc:  # aborts are data, not crashes
            return PairOutcome(pair, False, 0, 0.0, None, f"{type(exc).__name__}: {exc}", None)
        final_loss = result.loss_trace[-1][1] if result.loss_trace else None
        return PairOutcome(pair, result.success, result.queries_used,
                           result.achieved_sparsity, final_loss,
                           result.abort_reason, result)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, pairs))
    else:
        outcomes = [run_one(pair) for pair in pairs]

    total = len(outcomes)
    asr: list[list[float]] = []
    for q in query_grid:
        row = []
        for s in sparsity_grid:
            hits = sum(1 for o in outcomes
                       if o.success and o.queries_used <= q
                       and o.achieved_sparsity <= s)
            row.append(hits / total if total else 0.0)
        asr.append(row)
    _assert_monotone(asr)

    untargeted = [o for o in outcomes if o.pair.target_class is None]
    untargeted_success = sum(1 for o in untargeted if o.success)
    fraction = untargeted_success / len(untargeted) if untargeted else 0.0
    success_queries = [o.queries_used for o in outcomes if o.success]
    return EvalReport(
        outcomes=outcomes,
        query_grid=query_grid,
        sparsity_grid=sparsity_grid,
        asr=asr,
        accuracy_under_attack=1.0 - fraction,
        median_queries=statistics.median(success_queries) if success_queries else None,
        mean_queries=statistics.fmean(success_queries) if success_queries else None,
    )


def _assert_monotone(asr: list[list[float]]) -> None:
    for row in asr:
        if any(b < a for a, b in zip(row, row[1:])):
            raise BayesmaskError("ASR must be non-decreasing in the sparsity threshold")
    for col in zip(*asr):
        if any(b < a for a, b in zip(col, col[1:])):
            raise BayesmaskError("ASR must be non-decreasing in the query budget")


def export_results(report: EvalReport, out_dir) -> list[Path]:
    """Write report.json, the ASR grid CSV, per-pair results and loss traces.

    Output is deterministic: re-exporting the same report reproduces every
    file byte for byte.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "pairs").mkdir(exist_ok=True)
    (out_dir / "traces").mkdir(exist_ok=True)
    written: list[Path] = []

    pair_rows = []
    for idx, outcome in enumerate(report.outcomes):
        pair_id = f"pair{idx:05d}"
        row = {
            "id": pair_id,
            "image": outcome.pair.image_id,
            "source_class": outcome.pair.source_class,
            "target_class": outcome.pair.target_class,
            "stream": outcome.pair.stream,
            "success": outcome.success,
            "queries_used": outcome.queries_used,
            "achieved_sparsity": outcome.achieved_sparsity,
            "final_loss": outcome.final_loss,
            "abort_reason": outcome.abort_reason,
            "result_file": f"pairs/{pair_id}.json" if outcome.result else None,
        }
        pair_rows.append(row)
        if outcome.result is not None:
            result_path = out_dir / "pairs" / f"{pair_id}.json"
            result_path.write_text(json.dumps(outcome.result.to_dict(),
                                              sort_keys=True, indent=1))
            written.append(result_path)
            trace_path = out_dir / "traces" / f"{pair_id}.csv"
            lines = ["query,loss"]
            lines += [f"{q},{v!r}" for q, v in outcome.result.loss_trace]
            trace_path.write_text("\n".join(lines) + "\n")
            written.append(trace_path)

    payload = {
        "query_grid": list(report.query_grid),
        "sparsity_grid": list(report.sparsity_grid),
        "asr": report.asr,
        "accuracy_under_attack": report.accuracy_under_attack,
        "median_queries": report.median_queries,
        "mean_queries": report.mean_queries,
        "pairs": pair_rows,
        "metadata": report.metadata,
    }
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(payload, sort_keys=True, indent=1))
    written.append(report_path)

    grid_path = out_dir / "asr_grid.csv"
    header = "queries," + ",".join(repr(s) for s in report.sparsity_grid)
    lines = [header]
    for q, row in zip(report.query_grid, report.asr):
        lines.append(f"{q}," + ",".join(repr(v) for v in row))
    grid_path.write_text("\n".join(lines) + "\n")
    written.append(grid_path)
    return written
