import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from polsarclf import data, evaluation, scenes
from polsarclf.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
FAST = ["--epochs", "20", "--softmax-epochs", "40"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--models", str(CONFIGS / "two_class.json"), "--height", "48", "--width", "48",
                 "--out-image", str(d / "img.plsr"), "--out-labels", str(d / "lab.pgm")]) == 0
    assert main(["fit", "--image", str(d / "img.plsr"), "--labels", str(d / "lab.pgm"),
                 "--model", str(d / "m.model"), *FAST]) == 0
    return d


class TestExitCodes:
    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert main(["fit", "--help"]) == 0
        assert "--softmax-epochs" in capsys.readouterr().out

    def test_unknown_flag(self):
        assert main(["eval", "--bogus"]) == 2

    def test_no_command(self):
        assert main([]) == 2

    def test_missing_required(self, tmp_path):
        assert main(["fit", "--image", str(tmp_path / "x")]) == 2

    def test_missing_model_file_for_synth(self, tmp_path):
        assert main(["synth", "--models", str(tmp_path / "none.json"), "--out-image", str(tmp_path / "a"),
                     "--out-labels", str(tmp_path / "b")]) == 2

    def test_missing_model_for_predict(self, work, tmp_path):
        assert main(["predict", "--model", str(tmp_path / "none"), "--image", str(work / "img.plsr"),
                     "--out", str(tmp_path / "p.pgm")]) == 3

    def test_malformed_image(self, work, tmp_path):
        (tmp_path / "bad.plsr").write_bytes(b"junk")
        assert main(["predict", "--model", str(work / "m.model"), "--image", str(tmp_path / "bad.plsr"),
                     "--out", str(tmp_path / "p.pgm")]) == 3

    def test_divergence(self, work, tmp_path):
        assert main(["fit", "--image", str(work / "img.plsr"), "--labels", str(work / "lab.pgm"),
                     "--model", str(tmp_path / "d.model"), "--lr", "1e8", "--epochs", "200"]) == 4

    def test_band_mismatch(self, work, tmp_path):
        image, _ = scenes.band2_fixture(32, seed=0)
        data.save_image(image, tmp_path / "three.plsr")
        assert main(["predict", "--model", str(work / "m.model"), "--image", str(tmp_path / "three.plsr"),
                     "--out", str(tmp_path / "p.pgm")]) == 5

    def test_unknown_config_key(self, work, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"nonsense": 1}))
        assert main(["eval", "--config", str(tmp_path / "c.json"), "--pred", "a", "--truth", "b",
                     "--out", "c"]) == 2

    def test_bad_threads(self, work, tmp_path, monkeypatch):
        monkeypatch.setenv("POLSAR_THREADS", "many")
        assert main(["eval", "--pred", str(work / "lab.pgm"), "--truth", str(work / "lab.pgm"),
                     "--out", str(tmp_path / "s.csv")]) == 2


class TestCommands:
    def test_synth_deterministic(self, work, tmp_path):
        args = ["synth", "--models", str(CONFIGS / "two_class.json"), "--height", "48", "--width", "48",
                "--out-image", str(tmp_path / "img.plsr"), "--out-labels", str(tmp_path / "lab.pgm")]
        assert main(args) == 0
        assert (tmp_path / "img.plsr").read_bytes() == (work / "img.plsr").read_bytes()
        assert (tmp_path / "lab.pgm").read_bytes() == (work / "lab.pgm").read_bytes()

    def test_synth_matches_library(self, tmp_path):
        assert main(["synth", "--models", str(CONFIGS / "five_class.json"), "--out-image",
                     str(tmp_path / "i.plsr"), "--out-labels", str(tmp_path / "l.pgm")]) == 0
        image, labels = scenes.five_class_fixture(64, seed=0)
        assert data.load_image(tmp_path / "i.plsr") == image
        np.testing.assert_array_equal(data.load_labels(tmp_path / "l.pgm").grid, labels.grid)

    def test_fit_deterministic(self, work, tmp_path):
        assert main(["fit", "--image", str(work / "img.plsr"), "--labels", str(work / "lab.pgm"),
                     "--model", str(tmp_path / "m.model"), *FAST]) == 0
        assert (tmp_path / "m.model").read_bytes() == (work / "m.model").read_bytes()
        for stage in ("ae1", "ae2", "softmax"):
            assert (tmp_path / f"m.model.{stage}.history.csv").is_file()

    def test_config_file_and_override(self, work, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"epochs": 20, "softmax_epochs": 40, "seed": 5}))
        assert main(["fit", "--config", str(tmp_path / "c.json"), "--seed", "0", "--image",
                     str(work / "img.plsr"), "--labels", str(work / "lab.pgm"),
                     "--model", str(tmp_path / "m.model")]) == 0
        echo = json.loads((tmp_path / "m.model.config.json").read_text())
        assert echo["pipeline"]["seed"] == 0 and echo["pipeline"]["epochs"] == 20
        assert (tmp_path / "m.model").read_bytes() == (work / "m.model").read_bytes()

    def test_predict_and_eval(self, work, tmp_path):
        assert main(["predict", "--model", str(work / "m.model"), "--image", str(work / "img.plsr"),
                     "--out", str(tmp_path / "p.pgm"), "--map", str(tmp_path / "p.ppm"),
                     "--proba", str(tmp_path / "p.plsr"), "--boundaries", str(tmp_path / "b.png")]) == 0
        for name in ("p.ppm", "p.plsr", "b.png", "p.pgm.config.json"):
            assert (tmp_path / name).is_file()
        assert main(["eval", "--pred", str(tmp_path / "p.pgm"), "--truth", str(work / "lab.pgm"),
                     "--out", str(tmp_path / "s.csv"), "--confusion", str(tmp_path / "c.csv")]) == 0
        expected = evaluation.score(data.load_labels(tmp_path / "p.pgm"), data.load_labels(work / "lab.pgm"))
        evaluation.write_score_csv(expected, tmp_path / "ref.csv")
        assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "ref.csv").read_bytes()
        rows = list(csv.DictReader(open(tmp_path / "s.csv", encoding="utf-8")))
        assert float(rows[-2]["recall"]) == expected.oa

    def test_eval_perfect(self, work, tmp_path):
        assert main(["eval", "--pred", str(work / "lab.pgm"), "--truth", str(work / "lab.pgm"),
                     "--out", str(tmp_path / "s.csv")]) == 0
        rows = {r["class"]: r for r in csv.DictReader(open(tmp_path / "s.csv", encoding="utf-8"))}
        assert float(rows["OA"]["recall"]) == 1.0
        assert float(rows["OA_macro_precision"]["precision"]) == 1.0

    def test_ablate_bands(self, tmp_path):
        image, labels = scenes.band2_fixture(48, seed=0)
        data.save_image(image, tmp_path / "i.plsr")
        data.save_labels(labels, tmp_path / "l.pgm")
        assert main(["ablate-bands", "--image", str(tmp_path / "i.plsr"), "--labels", str(tmp_path / "l.pgm"),
                     "--out", str(tmp_path / "a.csv"), "--table", str(tmp_path / "t.csv"),
                     "--epochs", "5", "--softmax-epochs", "10"]) == 0
        rows = list(csv.DictReader(open(tmp_path / "a.csv", encoding="utf-8")))
        assert [r["subset"] for r in rows] == ["L", "P", "C", "LP", "LC", "PC", "LPC"]
        assert main(["ablate-bands", "--image", str(tmp_path / "i.plsr"), "--labels", str(tmp_path / "l.pgm"),
                     "--out", str(tmp_path / "b.csv"), "--subset", "L,X"]) == 2

    def test_ablate_features(self, work, tmp_path):
        assert main(["ablate-features", "--image", str(work / "img.plsr"), "--labels", str(work / "lab.pgm"),
                     "--out", str(tmp_path / "f.csv"), "--group", "freeman", "--group", "cloude,huynen",
                     "--epochs", "5", "--softmax-epochs", "10"]) == 0
        rows = list(csv.DictReader(open(tmp_path / "f.csv", encoding="utf-8")))
        assert [r["subset"] for r in rows] == ["freeman", "cloude+huynen"]
        assert main(["ablate-features", "--image", str(work / "img.plsr"), "--labels", str(work / "lab.pgm"),
                     "--out", str(tmp_path / "g.csv"), "--group", "wavelet"]) == 2


@pytest.mark.skipif(shutil.which("polsarclf") is None, reason="console script not installed")
def test_console_script():
    out = subprocess.run(["polsarclf", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "ablate-features" in out.stdout
    out = subprocess.run([sys.executable, "-m", "polsarclf.cli", "predict", "--nope"], capture_output=True)
    assert out.returncode == 2
