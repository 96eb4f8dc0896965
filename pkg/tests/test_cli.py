"""End-to-end CLI tests: pipeline smoke, determinism, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from epsbench.cli import main
from epsbench.rasters import load_image, read_png, save_image, write_pfm


def run(*argv) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_synth")
    code = run("synth", "--out", str(out), "--train", "3", "--test", "1",
               "--size", "24", "--seed", "7")
    assert code == 0
    return out


class TestSmoke:
    def test_synth_then_validate(self, synth_dir):
        assert run("validate", "--data", str(synth_dir / "manifest.json")) == 0

    def test_validate_missing_manifest(self, tmp_path):
        assert run("validate", "--data", str(tmp_path / "nope.json")) == 2

    def test_unknown_flag_exits_usage(self, capsys):
        with pytest.raises(SystemExit) as e:
            run("validate", "--nonsense")
        assert e.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_help_exits_zero(self):
        for sub in ["synth", "validate", "stats", "evaluate", "gridsearch",
                    "train", "infer", "timeit", "tonemap", "enhance", "serve"]:
            with pytest.raises(SystemExit) as e:
                run(sub, "--help")
            assert e.value.code == 0

    def test_stats_json(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "stats.json"
        assert run("stats", "--data", str(synth_dir / "manifest.json"),
                   "--json", str(out)) == 0
        doc = json.loads(out.read_text())
        assert doc["votes"] == 4 * 14
        assert sum(doc["per_method"]) == doc["votes"]
        text = capsys.readouterr().out
        assert "max repeated choices" in text


class TestEvaluate:
    def test_planted_optimum_leaderboard(self, tmp_path, capsys):
        data = tmp_path / "planted"
        assert run("synth", "--out", str(data), "--train", "2", "--test", "2",
                   "--size", "24", "--seed", "3",
                   "--vote-mode", "concentrated", "--vote-target", "4,3") == 0
        assert run("evaluate", "--data", str(data / "manifest.json"),
                   "--split", "test", "--out", str(tmp_path / "board")) == 0
        text = capsys.readouterr().out
        m4_line = next(l for l in text.split("\n") if l.startswith("m4"))
        # the voted cell reproduces the single groundtruth exactly
        assert "0.00" in m4_line and "[1]" in m4_line
        rows = [json.loads(l) for l in
                (tmp_path / "board.jsonl").read_text().strip().split("\n")]
        best = next(r for r in rows if r["method"] == "m4")
        assert best["wrmse"] == 0.0 and best["wrmse_param"] == 3

    def test_gridsearch_json(self, synth_dir, tmp_path):
        out = tmp_path / "grid.json"
        assert run("gridsearch", "--data", str(synth_dir / "manifest.json"),
                   "--split", "train", "--out", str(out)) == 0
        doc = json.loads(out.read_text())
        assert set(doc) == {f"m{m}" for m in range(1, 8)}
        assert set(doc["m1"]["wrmse"]) == {str(p) for p in range(1, 9)}


class TestDeterminism:
    def test_synth_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("synth", "--out", str(out), "--train", "2", "--test", "1",
                       "--size", "16", "--seed", "11") == 0
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_train_and_evaluate_byte_identical(self, synth_dir, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = run("train", "--data", str(synth_dir / "manifest.json"),
                       "--preset", "vdcnn-mini", "--steps", "30",
                       "--seed", "5", "--out", str(out))
            assert code == 0
            outs.append(out)
        for fname in ("model.ckpt", "train_log.jsonl"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
        boards = []
        for i, out in enumerate(outs):
            prefix = tmp_path / f"board{i}"
            assert run("evaluate", "--data", str(synth_dir / "manifest.json"),
                       "--split", "test",
                       "--checkpoint", str(out / "model.ckpt"),
                       "--name", "mini",
                       "--out", str(prefix)) == 0
            boards.append((prefix.with_suffix(".txt").read_bytes(),
                           Path(str(prefix) + ".jsonl").read_bytes()))
        assert boards[0] == boards[1]


@pytest.fixture(scope="module")
def checkpoint(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    assert run("train", "--data", str(synth_dir / "manifest.json"),
               "--preset", "vdcnn-mini", "--steps", "20",
               "--out", str(out)) == 0
    return out / "model.ckpt"


class TestInferAndApps:
    def test_infer(self, synth_dir, checkpoint, tmp_path):
        src = synth_dir / "images/img0000/source.png"
        out = tmp_path / "smoothed.png"
        assert run("infer", "--checkpoint", str(checkpoint),
                   "--input", str(src), "--output", str(out)) == 0
        assert read_png(out).shape == read_png(src).shape

    def test_infer_corrupt_checkpoint(self, synth_dir, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage" * 10)
        code = run("infer", "--checkpoint", str(bad),
                   "--input", str(synth_dir / "images/img0000/source.png"),
                   "--output", str(tmp_path / "x.png"))
        assert code == 2

    def test_timeit_table(self, synth_dir, tmp_path, capsys):
        prefix = tmp_path / "timing"
        assert run("timeit", "--data", str(synth_dir / "manifest.json"),
                   "--split", "train", "--smoother", "identity",
                   "--smoother", "gaussian:1.5", "--out", str(prefix)) == 0
        text = capsys.readouterr().out
        assert text.startswith("Method")
        rows = [json.loads(l) for l in
                Path(str(prefix) + ".jsonl").read_text().strip().split("\n")]
        identity_row = next(r for r in rows if r["method"] == "identity")
        assert identity_row["seconds"] < 0.05  # no-op smoother is near-free

    def test_tonemap_and_enhance(self, tmp_path):
        rng = np.random.default_rng(0)
        hdr = rng.uniform(0.05, 500.0, (16, 16, 3))
        hdr_path = tmp_path / "scene.pfm"
        write_pfm(hdr_path, hdr)
        out = tmp_path / "ldr.png"
        assert run("tonemap", "--input", str(hdr_path), "--output", str(out),
                   "--smoother", "gaussian:2", "--compression", "6") == 0
        ldr = load_image(out)
        assert ldr.shape == (16, 16, 3)

        dark = tmp_path / "dark.png"
        save_image(dark, rng.uniform(0.02, 0.2, (16, 16, 3)))
        out2 = tmp_path / "bright.png"
        assert run("enhance", "--input", str(dark), "--output", str(out2),
                   "--smoother", "gaussian:2", "--gamma", "0.5") == 0
        assert load_image(out2).mean() > load_image(dark).mean()

    def test_standin_smoother_spec(self, synth_dir, tmp_path, capsys):
        assert run("timeit", "--data", str(synth_dir / "manifest.json"),
                   "--split", "train", "--smoother", "standin:6,4") == 0
        assert "m6_p4" in capsys.readouterr().out
