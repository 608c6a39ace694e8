import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from twotower.cli import main, read_config_file
from twotower.data import load_dataset
from twotower.imageio import read_pfm, read_pgm, write_pfm
from twotower.metrics import from_csv
from twotower.model import ModelConfig, build, save_checkpoint


def tree(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


def same_tree(a, b):
    files = tree(a)
    if files != tree(b):
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    return not mismatch and not errors


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["gen-data", "--count", "12", "--size", "16", "--levels", "2", "--seed", "1", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    argv = ["train", "--data", str(dataset), "--out", str(out), "--levels", "2", "--base-channels", "2", "--epochs", "2", "--batch", "4"]
    assert main(argv) == 0
    return out


class TestGenData:
    def test_count_and_parse_back(self, tmp_path, capsys):
        assert main(["gen-data", "--count", "20", "--size", "64", "--out", str(tmp_path)]) == 0
        for sub, ext in (("left", "ppm"), ("right", "ppm"), ("depth", "pfm"), ("clue", "pfm")):
            assert len(list((tmp_path / sub).glob(f"*.{ext}"))) == 20
        samples = load_dataset(tmp_path)
        assert len(samples) == 20 and samples[0].left.shape == (3, 64, 64)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["count"] == 20 and len(manifest["samples"]) == 20
        assert "rects" in manifest["samples"][0]["scene"]
        assert "0019" in capsys.readouterr().out
        assert (tmp_path / "run.cfg").exists()

    def test_byte_identical(self, tmp_path, monkeypatch):
        # same relative --out from two working directories, so run.cfg matches too
        for name in ("a", "b"):
            (tmp_path / name).mkdir()
            monkeypatch.chdir(tmp_path / name)
            assert main(["gen-data", "--count", "3", "--size", "32", "--seed", "7", "--out", "ds"]) == 0
        assert same_tree(tmp_path / "a" / "ds", tmp_path / "b" / "ds")

    def test_rerun_same_dir_identical(self, tmp_path):
        out = tmp_path / "d"
        main(["gen-data", "--count", "2", "--size", "16", "--levels", "2", "--out", str(out)])
        snapshot = {p: (out / p).read_bytes() for p in tree(out)}
        main(["gen-data", "--count", "2", "--size", "16", "--levels", "2", "--out", str(out)])
        assert {p: (out / p).read_bytes() for p in tree(out)} == snapshot

    def test_count_zero(self, tmp_path):
        assert main(["gen-data", "--count", "0", "--size", "16", "--levels", "2", "--out", str(tmp_path)]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["count"] == 0 and manifest["samples"] == []

    def test_blockmatch_clue(self, tmp_path):
        assert main(["gen-data", "--count", "1", "--size", "32", "--clue-mode", "blockmatch", "--out", str(tmp_path)]) == 0
        clue = read_pfm(tmp_path / "clue" / "0000.pfm")
        assert clue.shape == (1, 32, 32) and 0 <= clue.min() and clue.max() <= 1


class TestInvalidFlags:
    @pytest.mark.parametrize(
        "argv",
        [
            ["gen-data", "--size", "60", "--levels", "3"],
            ["gen-data", "--clue-mode", "none"],
            ["gen-data", "--count", "-1"],
            ["train", "--epochs", "0"],
            ["train", "--lr", "-0.1"],
            ["ablate", "--seeds", "0,1"],
            ["ablate", "--seeds", "a,b,c"],
            ["eval"],
        ],
    )
    def test_nothing_written(self, tmp_path, argv, capsys):
        out = tmp_path / "out"
        extra = ["--data", str(tmp_path / "missing")] if argv[0] in ("train", "ablate", "eval") else []
        assert main(argv + extra + ["--out", str(out)]) == 2
        assert not out.exists()
        assert "error" in capsys.readouterr().err

    def test_missing_out(self, capsys):
        assert main(["gen-data", "--count", "1"]) == 2
        assert "--out" in capsys.readouterr().err

    def test_eval_needs_one_source(self, dataset, tmp_path):
        assert main(["eval", "--data", str(dataset), "--checkpoint", "x", "--predictions", "y"]) == 2


class TestConfigFile:
    def test_flags_win(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\ncount = 2\nsize=16\nlevels=2\nseed=5\n")
        out = tmp_path / "o"
        assert main(["gen-data", "--config", str(cfg), "--count", "1", "--out", str(out)]) == 0
        echoed = read_config_file(out / "run.cfg")
        assert echoed["count"] == "1" and echoed["seed"] == "5" and echoed["size"] == "16"

    def test_run_cfg_round_trips(self, tmp_path):
        out = tmp_path / "o"
        main(["gen-data", "--count", "1", "--size", "16", "--levels", "2", "--seed", "3", "--out", str(out)])
        again = tmp_path / "again"
        (tmp_path / "echo.cfg").write_text((out / "run.cfg").read_text().replace(str(out), str(again)))
        assert main(["gen-data", "--config", str(tmp_path / "echo.cfg")]) == 0
        assert (out / "left" / "0000.ppm").read_bytes() == (again / "left" / "0000.ppm").read_bytes()

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.cfg").write_text("colour=red\n")
        assert main(["gen-data", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "o")]) == 2
        assert not (tmp_path / "o").exists()


class TestTrainEval:
    def test_train_outputs(self, checkpoint):
        assert (checkpoint / "checkpoint.ckpt").exists()
        lines = (checkpoint / "loss.csv").read_text().splitlines()
        assert lines[0] == "step,train_loss,val_loss" and len(lines) == 3
        assert "epochs=2" in (checkpoint / "run.cfg").read_text()

    def test_train_deterministic(self, dataset, checkpoint, tmp_path):
        argv = ["train", "--data", str(dataset), "--out", str(tmp_path), "--levels", "2", "--base-channels", "2", "--epochs", "2", "--batch", "4"]
        assert main(argv) == 0
        for name in ("checkpoint.ckpt", "loss.csv"):
            assert (tmp_path / name).read_bytes() == (checkpoint / name).read_bytes()

    def test_eval_checkpoint(self, dataset, checkpoint, tmp_path, capsys):
        assert main(["eval", "--data", str(dataset), "--checkpoint", str(checkpoint / "checkpoint.ckpt"), "--out", str(tmp_path)]) == 0
        text = capsys.readouterr().out
        assert text.splitlines()[0].split() == ["method", "abs_rel", "sq_rel", "log10", "rmse", "sigma1", "sigma2", "sigma3", "ssim"]
        (row,) = from_csv((tmp_path / "metrics.csv").read_text())
        assert 0 <= row.sigma1 <= row.sigma2 <= row.sigma3 <= 1

    def test_eval_perfect_predictions(self, dataset, tmp_path, capsys):
        preds = tmp_path / "pred"
        preds.mkdir()
        for p in sorted((dataset / "depth").glob("*.pfm")):
            write_pfm(preds / p.name, read_pfm(p))
        out = tmp_path / "report"
        assert main(["eval", "--data", str(dataset), "--predictions", str(preds), "--out", str(out)]) == 0
        (row,) = from_csv((out / "metrics.csv").read_text())
        assert row.sigma1 == 1.0 and row.abs_rel == 0.0
        assert row.ssim == pytest.approx(1.0, abs=1e-9)

    def test_eval_dimension_mismatch(self, tmp_path, capsys):
        ckpt = tmp_path / "deep.ckpt"
        save_checkpoint(ckpt, build(ModelConfig(3, 2), 0))
        data = tmp_path / "d"
        main(["gen-data", "--count", "1", "--size", "20", "--levels", "2", "--out", str(data)])
        assert main(["eval", "--data", str(data), "--checkpoint", str(ckpt)]) == 2
        err = capsys.readouterr().err
        assert "divisible by 8" in err and "20x20" in err

    def test_corrupt_checkpoint(self, dataset, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"TWOTOWER-CKPT 1\nconfig {oops\nEND\n")
        assert main(["eval", "--data", str(dataset), "--checkpoint", str(bad)]) == 2
        assert "malformed header" in capsys.readouterr().err


class TestInfer:
    def test_pgm_matches_input(self, dataset, checkpoint, tmp_path, capsys):
        out = tmp_path / "inf"
        argv = ["infer", "--checkpoint", str(checkpoint / "checkpoint.ckpt"), "--left", str(dataset / "left" / "0000.ppm"),
                "--right", str(dataset / "right" / "0000.ppm"), "--out", str(out)]
        assert main(argv) == 0
        assert "inference time" in capsys.readouterr().out
        assert read_pgm(out / "depth.pgm").shape == (1, 16, 16)
        depth = read_pfm(out / "depth.pfm")
        assert depth.shape == (1, 16, 16) and np.all((depth > 0) & (depth < 1))
        first = (out / "depth.pfm").read_bytes()
        assert main(argv + ["--clue", str(dataset / "clue" / "0000.pfm")]) == 0
        assert main(argv) == 0
        assert (out / "depth.pfm").read_bytes() == first


class TestGradcheckAndAblate:
    def test_gradcheck_one_seed(self, capsys):
        assert main(["gradcheck", "--gradcheck-seeds", "1"]) == 0
        lines = capsys.readouterr().out.splitlines()
        rows = lines[1:]
        assert len(rows) == 9 and all(r.endswith("PASS") for r in rows)
        assert any(r.startswith("two_tower_unet") for r in rows)

    def test_ablate(self, dataset, tmp_path):
        argv = ["ablate", "--data", str(dataset), "--out", str(tmp_path), "--levels", "2", "--base-channels", "2",
                "--epochs", "1", "--seeds", "0,1,2"]
        assert main(argv) == 0
        lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert lines[0] == "seed,clue_test_l1,constant_test_l1" and len(lines) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "twotower", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen-data", "train", "eval", "infer", "gradcheck", "ablate"):
        assert cmd in proc.stdout
