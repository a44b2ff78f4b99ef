"""CLI contract: exit codes, outputs, config layering."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

import bayesmask as bm
from bayesmask import imgio
from bayesmask.cli import main
from stubserver import ScriptedServer
from test_harness import write_dataset


@pytest.fixture()
def runner():
    return CliRunner()


def write_config(path, **extra):
    keys = {"budget": 2, "query_limit": 40, "seed": 5}
    keys.update(extra)
    lines = []
    for k, v in keys.items():
        if isinstance(v, str):
            lines.append(f'{k} = "{v}"')
        elif isinstance(v, bool):
            lines.append(f"{k} = {str(v).lower()}")
        elif isinstance(v, (list, tuple)):
            lines.append(f"{k} = {list(v)}")
        else:
            lines.append(f"{k} = {v}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_model(tmp_path, shape=(3, 4, 4), classes=3, seed=401):
    oracle = bm.LinearSoftmaxOracle.default_toy(shape, classes=classes, seed=seed)
    path = tmp_path / "model.npz"
    oracle.save(path)
    return oracle, path


class TestAttackCommand:
    def test_end_to_end_result_json(self, tmp_path, runner):
        oracle, model_path = write_model(tmp_path)
        rng = bm.SamplerSeed(402).generator()
        img = bm.Image(rng.random((3, 4, 4)).astype(np.float32))
        imgio.write_png(img, tmp_path / "x.png")
        decoded = imgio.read_png(tmp_path / "x.png")
        source = bm.predicted_label(bm.ScoreVector.full(oracle.probabilities(decoded)))
        target = (source + 1) % 3
        cfg = write_config(tmp_path / "c.toml", query_limit=80, budget=3)
        out = tmp_path / "r.json"
        result = runner.invoke(main, [
            "attack", "--config", str(cfg), "--image", str(tmp_path / "x.png"),
            "--target", str(target), "--out", str(out),
            "--oracle", f"model:{model_path}",
            "--belief-out", str(tmp_path / "belief.json"),
            "--save-synth", str(tmp_path / "syn.rawimg"),
        ])
        assert result.exit_code in (0, 1), result.output
        payload = json.loads(out.read_text())
        back = bm.AttackResult.from_dict(payload)
        assert back.queries_used <= 80
        assert (tmp_path / "syn.rawimg").exists()
        if back.queries_used > 0:
            assert (tmp_path / "belief.json").exists()
        assert "bookkeeping" in result.output

    def test_missing_image_exits_2_without_output(self, tmp_path, runner):
        cfg = write_config(tmp_path / "c.toml")
        out = tmp_path / "r.json"
        result = runner.invoke(main, ["attack", "--config", str(cfg),
                                      "--out", str(out)])
        assert result.exit_code == 2
        assert not out.exists()

    def test_bad_config_exits_2(self, tmp_path, runner):
        oracle, model_path = write_model(tmp_path)
        img = bm.Image(np.full((3, 4, 4), 0.5, dtype=np.float32))
        imgio.write_png(img, tmp_path / "x.png")
        cfg = tmp_path / "c.toml"
        cfg.write_text("budget = 0\nquery_limit = 10\n")
        result = runner.invoke(main, [
            "attack", "--config", str(cfg), "--image", str(tmp_path / "x.png"),
            "--target", "1", "--out", str(tmp_path / "r.json"),
            "--oracle", f"model:{model_path}"])
        assert result.exit_code == 2
        assert not (tmp_path / "r.json").exists()

    def test_degenerate_input_zero_queries(self, tmp_path, runner):
        oracle, model_path = write_model(tmp_path)
        rng = bm.SamplerSeed(403).generator()
        img = bm.Image(rng.random((3, 4, 4)).astype(np.float32))
        imgio.write_png(img, tmp_path / "x.png")
        decoded = imgio.read_png(tmp_path / "x.png")
        already = bm.predicted_label(bm.ScoreVector.full(oracle.probabilities(decoded)))
        cfg = write_config(tmp_path / "c.toml")
        out = tmp_path / "r.json"
        result = runner.invoke(main, [
            "attack", "--config", str(cfg), "--image", str(tmp_path / "x.png"),
            "--target", str(already), "--out", str(out),
            "--oracle", f"model:{model_path}"])
        assert result.exit_code == 0
        payload = json.loads(out.read_text())
        assert payload["success"] and payload["queries_used"] == 0

    def test_seed_flag_reproduces(self, tmp_path, runner):
        oracle, model_path = write_model(tmp_path)
        rng = bm.SamplerSeed(404).generator()
        imgio.write_png(bm.Image(rng.random((3, 4, 4)).astype(np.float32)),
                        tmp_path / "x.png")
        cfg = write_config(tmp_path / "c.toml", query_limit=30)
        outputs = []
        for name in ("a.json", "b.json"):
            runner.invoke(main, [
                "attack", "--config", str(cfg), "--image", str(tmp_path / "x.png"),
                "--target", "2", "--out", str(tmp_path / name),
                "--oracle", f"model:{model_path}", "--seed", "77"])
            outputs.append((tmp_path / name).read_text())
        assert outputs[0] == outputs[1]


class TestEvalCommand:
    def test_sweep_writes_reports(self, tmp_path, runner):
        victim = bm.LinearSoftmaxOracle.default_toy((3, 4, 4), classes=3, seed=405)
        data = tmp_path / "data"
        write_dataset(data, victim, n_per_class=1)
        model_path = tmp_path / "model.npz"
        victim.save(model_path)
        cfg = write_config(tmp_path / "c.toml", query_limit=30,
                           num_images=3, targets_per_image=1,
                           query_grid=[10, 30], sparsity_grid=[0.2, 0.5])
        out = tmp_path / "results"
        result = runner.invoke(main, [
            "eval", "--config", str(cfg), "--dataset", str(data),
            "--out", str(out), "--oracle", f"model:{model_path}", "--workers", "2"])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert len(report["pairs"]) == 3
        assert report["metadata"]["bookkeeping_queries"] >= 3
        assert (out / "asr_grid.csv").exists()


class TestGenSynth:
    def test_writes_reproducible_synthetic(self, tmp_path, runner):
        out1, out2 = tmp_path / "s1.rawimg", tmp_path / "s2.rawimg"
        for out in (out1, out2):
            result = runner.invoke(main, ["gen-synth", "--shape", "3,5,5",
                                          "--seed", "9", "--out", str(out)])
            assert result.exit_code == 0, result.output
        assert out1.read_bytes() == out2.read_bytes()
        img = imgio.read_raw(out1)
        assert set(np.unique(img.data)) <= {0.0, 1.0}

    def test_matches_attack_internal_synthetic(self, tmp_path, runner):
        # same seed/stream as an attack -> same synthetic image
        out = tmp_path / "s.rawimg"
        runner.invoke(main, ["gen-synth", "--shape", "3,4,4", "--seed", "31",
                             "--stream", "2", "--out", str(out)])
        synth_rng = bm.SamplerSeed(31, 2).split(2)[0]
        want = bm.generate_synthetic((3, 4, 4), bm.SynthScheme(), synth_rng)
        assert imgio.read_raw(out).data.tobytes() == want.data.tobytes()

    def test_inverted_frequency_needs_source(self, tmp_path, runner):
        result = runner.invoke(main, ["gen-synth", "--shape", "3,4,4",
                                      "--scheme", "inverted-frequency",
                                      "--out", str(tmp_path / "s.rawimg")])
        assert result.exit_code == 2


class TestInspectBelief:
    def test_summary_output(self, tmp_path, runner):
        belief = bm.BeliefState(3, 3)
        belief.record_outcome(bm.PixelMask.from_indices(3, 3, [0, 1]),
                              bm.PixelMask.from_indices(3, 3, [1, 2]), 1.0, 2.0)
        path = tmp_path / "belief.json"
        belief.dump(path)
        result = runner.invoke(main, ["inspect-belief", "--belief", str(path),
                                      "--top", "3"])
        assert result.exit_code == 0, result.output
        assert "grid: 3x3" in result.output
        assert "theta sum: 1.0" in result.output

    def test_bad_file_exits_2(self, tmp_path, runner):
        path = tmp_path / "garbage.json"
        path.write_text("{}")
        result = runner.invoke(main, ["inspect-belief", "--belief", str(path)])
        assert result.exit_code == 2


class TestServeCheck:
    def test_probe_ok(self, runner):
        script = {"meta": [(200, {"classes": 3, "shape": [1, 2, 2]})],
                  "score": [(200, {"scores": [0.2, 0.3, 0.5]})]}
        with ScriptedServer(script) as srv:
            result = runner.invoke(main, ["serve-check", "--oracle", srv.url])
            assert result.exit_code == 0, result.output
            assert "classes=3" in result.output

    def test_unreachable_exits_3(self, runner):
        result = runner.invoke(main, ["serve-check", "--oracle", "http://127.0.0.1:9"])
        assert result.exit_code == 3

    def test_non_http_spec_exits_2(self, runner):
        result = runner.invoke(main, ["serve-check", "--oracle", "toy"])
        assert result.exit_code == 2
