"""Pair-set construction, budgeted sweeps, and result export."""

import json

import numpy as np
import pytest

import bayesmask as bm
from bayesmask import imgio
from bayesmask.errors import ConfigError
from bayesmask.harness import BuildReport


def write_dataset(tmp_path, oracle, n_per_class=2, side=4, misclassify=()):
    """PNG directory + manifest whose labels come from the oracle itself,
    except `misclassify` entries which get a deliberately wrong label."""
    tmp_path.mkdir(parents=True, exist_ok=True)
    rng = bm.SamplerSeed(300).generator()
    entries = []
    i = 0
    while any(sum(1 for e in entries if e["label"] == k) < n_per_class
              for k in range(oracle.num_classes)):
        img = bm.Image(rng.random((3, side, side)).astype(np.float32))
        name = f"img{i:03d}.png"
        imgio.write_png(img, tmp_path / name)
        # label from the oracle's own prediction of the decoded file
        decoded = imgio.read_png(tmp_path / name)
        label = bm.predicted_label(bm.ScoreVector.full(oracle.probabilities(decoded)))
        entries.append({"file": name, "label": int(label)})
        i += 1
        if i > 500:
            raise RuntimeError("dataset generation did not converge")
    for idx in misclassify:
        entries[idx]["label"] = (entries[idx]["label"] + 1) % oracle.num_classes
    (tmp_path / "manifest.json").write_text(json.dumps(entries))
    return entries


@pytest.fixture(scope="module")
def victim():
    return bm.LinearSoftmaxOracle.default_toy((3, 4, 4), classes=3, seed=301)


class TestBuildEvalSet:
    def test_all_other_classes_as_targets(self, tmp_path, victim):
        write_dataset(tmp_path, victim, n_per_class=1)
        report = bm.build_eval_set(tmp_path, num_images=3, targets_per_image=2,
                                   seed=bm.SamplerSeed(302), oracle=victim)
        assert isinstance(report, BuildReport)
        assert len(report.pairs) == 6  # 3 images x 2 targets (= all others)
        for pair in report.pairs:
            assert pair.target_class != pair.source_class
        by_image = {}
        for pair in report.pairs:
            by_image.setdefault(pair.image_id, set()).add(pair.target_class)
        for targets in by_image.values():
            assert len(targets) == 2

    def test_single_pair(self, tmp_path, victim):
        write_dataset(tmp_path, victim, n_per_class=1)
        report = bm.build_eval_set(tmp_path, num_images=1, targets_per_image=1,
                                   seed=bm.SamplerSeed(303), oracle=victim)
        assert len(report.pairs) == 1
        assert report.pairs[0].target_class != report.pairs[0].source_class

    def test_deterministic_under_seed(self, tmp_path, victim):
        write_dataset(tmp_path, victim)
        a = bm.build_eval_set(tmp_path, 4, 2, bm.SamplerSeed(304), victim)
        b = bm.build_eval_set(tmp_path, 4, 2, bm.SamplerSeed(304), victim)
        assert a.pairs == b.pairs

    def test_misclassified_skipped_and_counted(self, tmp_path, victim):
        entries = write_dataset(tmp_path, victim, misclassify=(0, 1))
        want = len(entries)  # ask for everything: 2 get skipped
        report = bm.build_eval_set(tmp_path, want, 1, bm.SamplerSeed(305), victim)
        assert report.selected_images == want - 2
        assert len(report.skipped) == 2
        assert report.shortfall == 2
        assert report.bookkeeping_queries == len(entries)

    def test_untargeted_mode(self, tmp_path, victim):
        write_dataset(tmp_path, victim, n_per_class=1)
        report = bm.build_eval_set(tmp_path, 3, 0, bm.SamplerSeed(306), victim)
        assert len(report.pairs) == 3
        assert all(p.target_class is None for p in report.pairs)
        assert all(p.loss_spec().mode is bm.LossMode.UNTARGETED_MARGIN
                   for p in report.pairs)

    def test_too_many_targets_rejected(self, tmp_path, victim):
        write_dataset(tmp_path, victim, n_per_class=1)
        with pytest.raises(ConfigError):
            bm.build_eval_set(tmp_path, 1, 5, bm.SamplerSeed(307), victim)

    def test_missing_manifest(self, tmp_path, victim):
        with pytest.raises(ConfigError):
            bm.build_eval_set(tmp_path / "nowhere", 1, 1, bm.SamplerSeed(308), victim)


def sweep(tmp_path, victim, cfg, pairs=None, workers=1,
          query_grid=(10, 20, 40), sparsity_grid=(0.1, 0.2, 0.5)):
    if pairs is None:
        write_dataset(tmp_path, victim, n_per_class=1)
        pairs = bm.build_eval_set(tmp_path, 3, 1, bm.SamplerSeed(310), victim).pairs
    factory = lambda pair: bm.LinearSoftmaxOracle(
        victim.weight, victim.bias, victim.input_shape,
        budget=bm.QueryBudget(cfg.query_limit))
    return bm.evaluate(pairs, cfg, factory, query_grid=query_grid,
                       sparsity_grid=sparsity_grid, workers=workers)


class TestEvaluate:
    def test_counting_rule(self, tmp_path, victim):
        cfg = bm.AttackConfig(budget=2, query_limit=40, seed=bm.SamplerSeed(311))
        report = sweep(tmp_path, victim, cfg)
        # recompute the ASR matrix independently from the outcomes
        for qi, q in enumerate(report.query_grid):
            for si, s in enumerate(report.sparsity_grid):
                want = sum(1 for o in report.outcomes
                           if o.success and o.queries_used <= q
                           and o.achieved_sparsity <= s) / len(report.outcomes)
                assert report.asr[qi][si] == want
        wins = [o.queries_used for o in report.outcomes if o.success]
        if wins:
            import statistics
            assert report.median_queries == statistics.median(wins)
            assert report.mean_queries == statistics.fmean(wins)
        else:
            assert report.median_queries is None and report.mean_queries is None

    def test_monotone_grid(self, tmp_path, victim):
        cfg = bm.AttackConfig(budget=2, query_limit=40, seed=bm.SamplerSeed(312))
        report = sweep(tmp_path, victim, cfg)
        for row in report.asr:
            assert all(b >= a for a, b in zip(row, row[1:]))
        for col in zip(*report.asr):
            assert all(b >= a for a, b in zip(col, col[1:]))

    def test_worker_pool_deterministic(self, tmp_path, victim):
        cfg = bm.AttackConfig(budget=2, query_limit=30, seed=bm.SamplerSeed(313))
        write_dataset(tmp_path, victim, n_per_class=2)
        pairs = bm.build_eval_set(tmp_path, 4, 1, bm.SamplerSeed(314), victim).pairs
        serial = sweep(tmp_path, victim, cfg, pairs=pairs, workers=1)
        threaded = sweep(tmp_path, victim, cfg, pairs=pairs, workers=3)
        assert serial.asr == threaded.asr
        for a, b in zip(serial.outcomes, threaded.outcomes):
            assert a.pair == b.pair
            assert a.success == b.success
            assert a.queries_used == b.queries_used
            assert a.final_loss == b.final_loss

    def test_all_failures_zero_grid(self, tmp_path, victim):
        # class 0 is unreachable for this victim, so targeted attacks on it
        # always exhaust the budget
        weight = victim.weight.copy()
        bias = victim.bias.copy()
        bias[0] -= 50.0
        hard = bm.LinearSoftmaxOracle(weight, bias, victim.input_shape)
        rng = bm.SamplerSeed(330).generator()
        pairs = []
        for stream in range(3):
            img = bm.Image(rng.random((3, 4, 4)).astype(np.float32))
            name = tmp_path / f"hard{stream}.png"
            imgio.write_png(img, name)
            decoded = imgio.read_png(name)
            source = bm.predicted_label(bm.ScoreVector.full(hard.probabilities(decoded)))
            pairs.append(bm.EvalPair(name.name, str(name), int(source), 0, stream))
        cfg = bm.AttackConfig(budget=2, query_limit=20, seed=bm.SamplerSeed(331))
        report = bm.evaluate(pairs, cfg, lambda pair: bm.LinearSoftmaxOracle(
            weight, bias, victim.input_shape), query_grid=(5, 20),
            sparsity_grid=(0.5, 1.0))
        assert all(not o.success for o in report.outcomes)
        assert all(v == 0.0 for row in report.asr for v in row)
        assert report.median_queries is None

    def test_abort_recorded_not_raised(self, tmp_path, victim):
        write_dataset(tmp_path, victim, n_per_class=1)
        pairs = bm.build_eval_set(tmp_path, 3, 1, bm.SamplerSeed(315), victim).pairs

        def factory(pair):
            if pair.stream == 1:
                raise RuntimeError("victim offline")
            return bm.LinearSoftmaxOracle(victim.weight, victim.bias,
                                          victim.input_shape)

        cfg = bm.AttackConfig(budget=2, query_limit=30, seed=bm.SamplerSeed(316))
        report = bm.evaluate(pairs, cfg, factory, query_grid=(30,),
                             sparsity_grid=(0.5,))
        assert len(report.outcomes) == 3
        failed = [o for o in report.outcomes if o.abort_reason]
        assert len(failed) == 1 and "victim offline" in failed[0].abort_reason
        assert all(o.result is not None for o in report.outcomes if not o.abort_reason)

    def test_accuracy_under_attack_untargeted(self, tmp_path, victim):
        write_dataset(tmp_path, victim, n_per_class=2)
        pairs = bm.build_eval_set(tmp_path, 5, 0, bm.SamplerSeed(317), victim).pairs
        cfg = bm.AttackConfig(budget=4, query_limit=60, seed=bm.SamplerSeed(318))
        report = sweep(tmp_path, victim, cfg, pairs=pairs)
        wins = sum(1 for o in report.outcomes if o.success)
        assert report.accuracy_under_attack == pytest.approx(1 - wins / 5, abs=0)

    def test_empty_grid_rejected(self, tmp_path, victim):
        cfg = bm.AttackConfig(budget=2, query_limit=30, seed=bm.SamplerSeed(319))
        with pytest.raises(ConfigError):
            bm.evaluate([], cfg, lambda pair: victim, query_grid=(),
                        sparsity_grid=(0.1,))


class TestExport:
    def test_files_and_grid_shape(self, tmp_path, victim):
        cfg = bm.AttackConfig(budget=2, query_limit=40, seed=bm.SamplerSeed(320))
        report = sweep(tmp_path / "data", victim, cfg,
                       query_grid=(5, 10, 20, 40),
                       sparsity_grid=(0.05, 0.1, 0.2, 0.3, 0.5))
        out = tmp_path / "out"
        bm.export_results(report, out)
        payload = json.loads((out / "report.json").read_text())
        assert len(payload["pairs"]) == len(report.outcomes)
        lines = (out / "asr_grid.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 4                      # header + 4 budget rows
        assert all(len(line.split(",")) == 6 for line in lines)  # label + 5 thresholds
        for outcome_row in payload["pairs"]:
            if outcome_row["result_file"]:
                assert (out / outcome_row["result_file"]).exists()
        trace_files = list((out / "traces").glob("*.csv"))
        assert len(trace_files) == len([o for o in report.outcomes if o.result])

    def test_reexport_byte_identical(self, tmp_path, victim):
        cfg = bm.AttackConfig(budget=2, query_limit=30, seed=bm.SamplerSeed(321))
        report = sweep(tmp_path / "data", victim, cfg)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        bm.export_results(report, out1)
        bm.export_results(report, out2)
        for p1 in sorted(out1.rglob("*")):
            if p1.is_file():
                p2 = out2 / p1.relative_to(out1)
                assert p1.read_bytes() == p2.read_bytes()

    def test_empty_report_valid_files(self, tmp_path):
        report = bm.EvalReport(outcomes=[], query_grid=(10,), sparsity_grid=(0.1,),
                               asr=[[0.0]], accuracy_under_attack=1.0,
                               median_queries=None, mean_queries=None)
        out = tmp_path / "empty"
        bm.export_results(report, out)
        payload = json.loads((out / "report.json").read_text())
        assert payload["pairs"] == []
        lines = (out / "asr_grid.csv").read_text().strip().split("\n")
        assert len(lines) == 2

    def test_result_round_trip_from_export(self, tmp_path, victim):
        cfg = bm.AttackConfig(budget=2, query_limit=30, seed=bm.SamplerSeed(322))
        report = sweep(tmp_path / "data", victim, cfg)
        out = tmp_path / "out"
        bm.export_results(report, out)
        first = json.loads((out / "report.json").read_text())["pairs"][0]
        if first["result_file"]:
            payload = json.loads((out / first["result_file"]).read_text())
            back = bm.AttackResult.from_dict(payload)
            assert back.queries_used == first["queries_used"]
