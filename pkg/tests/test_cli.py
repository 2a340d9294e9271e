import json

import numpy as np
import pytest

from memgan.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

SMALL = ["--latent-dim", "4", "--n-mem", "5", "--channels", "4,8,8", "--epochs", "1", "--dtype", "float64",
         "--wall-time", "false"]


def test_missing_command(capsys):
    assert main([]) == EXIT_USAGE
    assert "COMMAND" in capsys.readouterr().err


def test_out_of_range_class(tmp_path, capsys):
    assert main(["train", "--normal-class", "11", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "normal_class" in capsys.readouterr().err


def test_misspelled_flag_suggests(capsys):
    assert main(["train", "--n-meme", "50"]) == EXIT_USAGE
    assert "did you mean --n-mem" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("n_mem=10\nbogus=3\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "bogus" in capsys.readouterr().err


def test_missing_checkpoint_is_runtime_error(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == EXIT_RUNTIME
    assert "error" in capsys.readouterr().err


def test_geometry_command(tmp_path, capsys):
    out = tmp_path / "geo"
    assert main(["geometry", "--points", "triangle", "--n", "3", "--out", str(out)]) == EXIT_OK
    for name in ("polytope.png", "vertices.csv", "objective.csv", "summary.json", "manifest.json"):
        assert (out / name).stat().st_size > 0
    rows = np.loadtxt(out / "vertices.csv", delimiter=",", skiprows=1)
    assert rows.shape == (3, 6) and rows[:, 5].max() <= 1e-2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and "polytope.png" in manifest["outputs"]
    assert "coverage term" in capsys.readouterr().out


def test_geometry_bad_points(tmp_path):
    assert main(["geometry", "--points", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == EXIT_USAGE
    line = tmp_path / "line.csv"
    np.savetxt(line, np.stack([np.arange(5.0), np.arange(5.0)], 1), delimiter=",")
    assert main(["geometry", "--points", str(line), "--out", str(tmp_path / "g")]) == EXIT_RUNTIME


@pytest.fixture(scope="module")
def trained(tmp_path_factory, mnist):
    cache = tmp_path_factory.mktemp("cli")
    cfg = cache / "run.txt"
    cfg.write_text("n_mem=7\nseed=3\nnormal_class=1\n")
    out = cache / "run"
    code = main(["train", "--config", str(cfg), "--n-mem", "5", *SMALL, "--out", str(out)])
    assert code == EXIT_OK
    return out


def test_manifest_precedence(trained):
    m = json.loads((trained / "manifest.json").read_text())
    assert m["config"]["n_mem"] == 5 and m["sources"]["n_mem"] == "cli"
    assert m["config"]["seed"] == 3 and m["sources"]["seed"] == "file"
    assert m["config"]["batch_size"] == 64 and m["sources"]["batch_size"] == "default"
    assert m["status"] == "ok" and "metrics.csv" in m["outputs"] and "final.ckpt" in m["outputs"]


def test_train_is_deterministic(trained, tmp_path):
    cfg = trained.parent / "run.txt"
    assert main(["train", "--config", str(cfg), "--n-mem", "5", *SMALL, "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()


def test_eval_decode_viz(trained, capsys):
    ckpt = str(trained / "final.ckpt")
    assert main(["eval", "--checkpoint", ckpt]) == EXIT_OK
    assert "AUROC" in capsys.readouterr().out
    assert (trained / "eval" / "report.json").exists()
    assert main(["decode-memory", "--checkpoint", ckpt]) == EXIT_OK
    assert (trained / "memory_grid.png").stat().st_size > 0
    assert main(["viz-latent", "--checkpoint", ckpt, "--max-points", "300"]) == EXIT_OK
    assert (trained / "latent_pca.png").stat().st_size > 0
    assert "normal_fraction" in (trained / "hull_report.txt").read_text()
