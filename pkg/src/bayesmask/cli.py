"""Command-line front door: attack, eval, gen-synth, inspect-belief, serve-check.

Configuration layering is flag > config file > built-in default.  Config
files are flat key-value TOML (or JSON); attack keys match the
AttackConfig field names (`budget`, `query_limit`, `initial_samples`,
`lambda0`, `m1`, `m2`, `alpha_prior`, `z`, `scheduler`,
`use_dissimilarity_map`, `learning`, `seed`, `stream`, `synth_scheme`),
plus `oracle`, `rnd_sigma`, `toy_classes`, `toy_seed` for the oracle and
`num_images`, `targets_per_image`, `query_grid`, `sparsity_grid`,
`workers` for eval sweeps.

Exit codes: 0 success, 1 attack failure (budget exhausted), 2 usage or
config error, 3 transport error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .attack import AttackConfig, run_attack
from .bayes import BeliefState, SamplerSeed
from .core import Image, LossMode, LossSpec, predicted_label
from .errors import (BayesmaskError, ConfigError, DimensionError, DomainError,
                     ProtocolError, TransportError)
from .harness import (DEFAULT_QUERY_GRID, DEFAULT_SPARSITY_GRID,
                      build_eval_set, evaluate, export_results)
from .imgio import load_image, save_image
from .oracle import (LinearSoftmaxOracle, QueryBudget, RemoteOracle,
                     ScoreOracle, wrap_rnd)
from .synth import SynthScheme, generate_synthetic

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version dependent
    import tomli as tomllib


_ORACLE_KEYS = {"oracle", "rnd_sigma", "toy_classes", "toy_seed", "http_token"}
_EVAL_KEYS = {"num_images", "targets_per_image", "query_grid", "sparsity_grid",
              "workers"}


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    if p.suffix.lower() == ".json":
        mapping = json.loads(p.read_text())
    else:
        with open(p, "rb") as fh:
            try:
                mapping = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{p}: {exc}") from exc
    from .attack import AttackConfig
    known = (set(AttackConfig._FIELD_NAMES) | {"seed", "stream", "synth_scheme"}
             | _ORACLE_KEYS | _EVAL_KEYS)
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"{p}: unknown config keys {sorted(unknown)}")
    return mapping


def _build_oracle(spec: str, shape, mapping: dict,
                  limit: int | None) -> ScoreOracle:
    """Parse --oracle {toy|model:<path>|http:<url>} into an oracle."""
    budget = QueryBudget(limit)
    token = mapping.get("http_token")
    if spec.startswith(("http://", "https://")):
        return RemoteOracle(spec, budget=budget, token=token)
    if spec.startswith("http:"):
        return RemoteOracle(spec[len("http:"):], budget=budget, token=token)
    if spec.startswith("model:"):
        return LinearSoftmaxOracle.from_file(spec[len("model:"):], budget=budget)
    if spec == "toy":
        if shape is None:
            raise ConfigError("the toy oracle needs an input image to fix its shape")
        return LinearSoftmaxOracle.default_toy(
            shape, classes=int(mapping.get("toy_classes", 10)),
            seed=int(mapping.get("toy_seed", 7)), budget=budget)
    raise ConfigError(f"unknown oracle spec {spec!r} "
                      "(expected toy, model:<path>, or http:<url>)")


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Sparse black-box attack toolkit."""


@main.command("attack")
@click.option("--config", "config_path", type=str, default=None, help="TOML/JSON config file.")
@click.option("--image", "image_path", type=str, required=True, help="Source image (PNG or raw).")
@click.option("--target", type=str, default=None, help="Target class (omit for untargeted).")
@click.option("--source", type=int, default=None, help="Source class (defaults to the model's prediction).")
@click.option("--out", "out_path", type=str, required=True, help="Result JSON path.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--oracle", "oracle_spec", type=str, default=None, help="toy | model:<path> | http:<url>.")
@click.option("--rnd-sigma", type=float, default=None, help="Wrap the oracle with noise of this stddev.")
@click.option("--save-synth", type=str, default=None, help="Persist the synthetic image for audit.")
@click.option("--belief-out", type=str, default=None, help="Dump the final belief state as JSON.")
def attack_cmd(config_path, image_path, target, source, out_path, seed,
               oracle_spec, rnd_sigma, save_synth, belief_out):
    """Attack a single image and write the result JSON."""
    try:
        mapping = _read_config(config_path)
        cfg = AttackConfig.from_mapping(mapping, seed=seed)
        x = load_image(image_path)

        spec_name = str(mapping.get("oracle", "toy") if oracle_spec is None else oracle_spec)
        bookkeeper = _build_oracle(spec_name, x.shape, mapping, None)
        attack_oracle = _build_oracle(spec_name, x.shape, mapping, cfg.query_limit)
        sigma = float(mapping.get("rnd_sigma", 0.0) if rnd_sigma is None else rnd_sigma)
        if sigma:
            attack_oracle = wrap_rnd(attack_oracle, sigma,
                                     SamplerSeed(cfg.seed.seed, cfg.seed.stream + 1))

        clean_scores = bookkeeper.query(x)
        if source is None and not clean_scores.is_partial:
            source = predicted_label(clean_scores)
        if target is None:
            if clean_scores.is_partial:
                raise ConfigError("untargeted attacks need full score vectors")
            loss_spec = LossSpec(LossMode.UNTARGETED_MARGIN, source_class=source)
        elif clean_scores.is_partial:
            loss_spec = LossSpec(LossMode.PARTIAL_MARGIN, target_class=str(target))
        else:
            loss_spec = LossSpec(LossMode.TARGETED_CROSS_ENTROPY,
                                 source_class=source, target_class=int(target))

        synth_rng = cfg.seed.split(2)[0]
        x_syn = generate_synthetic(x.shape, cfg.synth, synth_rng, source=x)
        if save_synth:
            save_image(x_syn, save_synth)

        sink: list = []
        result = run_attack(x, loss_spec, cfg, attack_oracle, x_syn=x_syn,
                            initial_scores=clean_scores, belief_out=sink)
        if belief_out and sink:
            sink[0].dump(belief_out)

        Path(out_path).write_text(json.dumps(result.to_dict(), sort_keys=True, indent=1))
        click.echo(f"success={result.success} queries={result.queries_used} "
                   f"sparsity={result.achieved_sparsity:.6f} "
                   f"(1 bookkeeping query outside the budget)")
        sys.exit(0 if result.success else 1)
    except TransportError as exc:
        _fail(3, str(exc))
    except (ConfigError, DomainError, DimensionError, ProtocolError, OSError,
            json.JSONDecodeError) as exc:
        _fail(2, str(exc))


@main.command("eval")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--dataset", "dataset_dir", type=str, required=True, help="PNG directory with manifest.json.")
@click.option("--out", "out_dir", type=str, required=True, help="Report output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None, help="Concurrent attacks.")
@click.option("--oracle", "oracle_spec", type=str, default=None)
@click.option("--rnd-sigma", type=float, default=None)
def eval_cmd(config_path, dataset_dir, out_dir, seed, workers, oracle_spec, rnd_sigma):
    """Run a budgeted sweep over a dataset and export JSON + CSV reports."""
    try:
        mapping = _read_config(config_path)
        cfg = AttackConfig.from_mapping(mapping, seed=seed)
        spec_name = str(mapping.get("oracle", "toy") if oracle_spec is None else oracle_spec)
        sigma = float(mapping.get("rnd_sigma", 0.0) if rnd_sigma is None else rnd_sigma)
        n_workers = int(mapping.get("workers", 1) if workers is None else workers)

        sample = _first_image_shape(dataset_dir)
        bookkeeper = _build_oracle(spec_name, sample, mapping, None)
        build = build_eval_set(dataset_dir,
                               num_images=int(mapping.get("num_images", 10)),
                               targets_per_image=int(mapping.get("targets_per_image", 1)),
                               seed=cfg.seed, oracle=bookkeeper)
        if build.shortfall:
            click.echo(f"warning: only {build.selected_images} of "
                       f"{build.requested_images} requested images are usable "
                       f"({len(build.skipped)} misclassified)", err=True)

        def factory(pair):
            oracle = _build_oracle(spec_name, sample, mapping, cfg.query_limit)
            if sigma:
                oracle = wrap_rnd(oracle, sigma, SamplerSeed(cfg.seed.seed, pair.stream))
            return oracle

        report = evaluate(build.pairs, cfg, factory,
                          query_grid=mapping.get("query_grid", DEFAULT_QUERY_GRID),
                          sparsity_grid=mapping.get("sparsity_grid", DEFAULT_SPARSITY_GRID),
                          workers=n_workers)
        report.metadata = {
            "dataset": str(dataset_dir),
            "bookkeeping_queries": build.bookkeeping_queries,
            "requested_images": build.requested_images,
            "selected_images": build.selected_images,
            "shortfall": build.shortfall,
            "oracle": spec_name,
            "rnd_sigma": sigma,
        }
        export_results(report, out_dir)
        click.echo(f"{len(build.pairs)} pairs, accuracy under attack "
                   f"{report.accuracy_under_attack:.4f}; "
                   f"bookkeeping queries: {build.bookkeeping_queries}")
        sys.exit(0)
    except TransportError as exc:
        _fail(3, str(exc))
    except (ConfigError, DomainError, DimensionError, ProtocolError, OSError,
            json.JSONDecodeError) as exc:
        _fail(2, str(exc))


def _first_image_shape(dataset_dir):
    manifest = Path(dataset_dir) / "manifest.json"
    if not manifest.exists():
        raise ConfigError(f"{manifest} not found")
    entries = sorted(json.loads(manifest.read_text()), key=lambda e: str(e["file"]))
    if not entries:
        raise ConfigError(f"{manifest} lists no images")
    return load_image(Path(dataset_dir) / str(entries[0]["file"])).shape


@main.command("gen-synth")
@click.option("--shape", type=str, default=None, help="c,w,h (or derive from --source-image).")
@click.option("--scheme", type=str, default="binary-uniform")
@click.option("--source-image", type=str, default=None, help="Needed by inverted-frequency.")
@click.option("--seed", type=int, default=0)
@click.option("--stream", type=int, default=0)
@click.option("--out", "out_path", type=str, required=True)
def gen_synth_cmd(shape, scheme, source_image, seed, stream, out_path):
    """Emit a synthetic color image (reproduces an attack's, given its seed)."""
    try:
        source = load_image(source_image) if source_image else None
        if shape:
            dims = tuple(int(v) for v in shape.split(","))
            if len(dims) != 3:
                raise ConfigError("--shape must be c,w,h")
        elif source is not None:
            dims = source.shape
        else:
            raise ConfigError("provide --shape or --source-image")
        synth_rng = SamplerSeed(seed, stream).split(2)[0]
        image = generate_synthetic(dims, SynthScheme(kind=scheme), synth_rng, source=source)
        save_image(image, out_path)
        click.echo(f"wrote {out_path} shape={dims} scheme={scheme}")
    except (ConfigError, DomainError, DimensionError, ValueError, OSError) as exc:
        _fail(2, str(exc))


@main.command("inspect-belief")
@click.option("--belief", "belief_path", type=str, required=True, help="Belief dump JSON.")
@click.option("--top", type=int, default=10, help="How many pixels to list.")
def inspect_belief_cmd(belief_path, top):
    """Summarize a belief-state dump: counters and the most influential pixels."""
    try:
        payload = json.loads(Path(belief_path).read_text())
        belief = BeliefState.from_dict(payload)
        theta = belief.theta.reshape(-1)
        alpha = belief.posterior_alpha().reshape(-1)
        click.echo(f"grid: {belief.width}x{belief.height}  "
                   f"selections(n): {int(belief.n.sum())}  "
                   f"influence-evidence(a): {int(belief.a.sum())}  "
                   f"theta sum: {theta.sum():.9f}")
        order = np.argsort(-theta)[:top]
        click.echo("pixel (i,j)    theta        alpha     a    n")
        for flat in order:
            i, j = divmod(int(flat), belief.height)
            click.echo(f"({i:4d},{j:4d})  {theta[flat]:.6e}  {alpha[flat]:8.5f}  "
                       f"{belief.a.reshape(-1)[flat]:4d} {belief.n.reshape(-1)[flat]:4d}")
    except (KeyError, ValueError, OSError, BayesmaskError) as exc:
        _fail(2, str(exc))


@main.command("serve-check")
@click.option("--oracle", "oracle_spec", type=str, required=True, help="http:<url> of the scoring service.")
def serve_check_cmd(oracle_spec):
    """Probe a remote oracle: /meta plus one /score round-trip."""
    try:
        if oracle_spec.startswith(("http://", "https://")):
            url = oracle_spec
        elif oracle_spec.startswith("http:"):
            url = oracle_spec[len("http:"):]
        else:
            raise ConfigError("serve-check needs an http:<url> oracle")
        oracle = RemoteOracle(url)
        meta = oracle.meta()
        probe = Image.full(meta["shape"], 0.5)
        scores = oracle.query(probe)
        kind = "partial" if scores.is_partial else "full"
        click.echo(f"meta: classes={meta['classes']} shape={meta['shape']}; "
                   f"score reply: {kind}")
        sys.exit(0)
    except TransportError as exc:
        _fail(3, str(exc))
    except (ConfigError, ProtocolError, DomainError, DimensionError) as exc:
        _fail(2, str(exc))


if __name__ == "__main__":
    main()
