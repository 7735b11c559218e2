import csv
import math
import shutil

import numpy as np
import pytest
from PIL import Image

from mdis.cli import main, mode_list_arg
from mdis.hmt import load_params, read_model_file
from mdis.image_io import load_image
from mdis.metrics import read_fixations_csv
from conftest import natural_crop

SMALL = ("blocks.png", "stripes.png", "pair.png")


@pytest.fixture
def corpus(tmp_path, minicorpus):
    d = tmp_path / "images"
    d.mkdir()
    for name in SMALL:
        shutil.copy(minicorpus / name, d / name)
    fx = tmp_path / "fix.csv"
    with open(minicorpus / "fixations.csv", encoding="utf-8") as src, open(fx, "w", encoding="utf-8") as dst:
        for k, line in enumerate(src):
            if k == 0 or line.split(",", 1)[0] in SMALL:
                dst.write(line)
    return d, fx


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def _png(path, arr):
    Image.fromarray(np.asarray(arr, np.uint8)).save(path)
    return path


# --- saliency ------------------------------------------------------------------------


def test_saliency_writes_png(tmp_path, capsys):
    img = _png(tmp_path / "img.png", natural_crop("coins", 96))
    assert main(["saliency", "--mode", "uhmt0", str(img)]) == 0
    out = tmp_path / "img.uhmt0.png"
    assert out.exists()
    with Image.open(out) as im:
        assert im.size == (96, 96) and im.mode.startswith("I")
    line = capsys.readouterr().out.strip()
    assert line.startswith("img.png\tuhmt0\t") and "s\t" in line


def test_invalid_mode_is_usage_error(tmp_path, capsys):
    img = _png(tmp_path / "img.png", np.zeros((64, 64)))
    with pytest.raises(SystemExit) as exc:
        main(["saliency", "--mode", "zhmt9", str(img)])
    assert exc.value.code == 2
    assert "invalid mode" in capsys.readouterr().err


def test_directory_input(corpus, tmp_path):
    images, _ = corpus
    out = tmp_path / "maps"
    assert main(["saliency", "--mode", "uhmt3", "--out-dir", str(out), str(images)]) == 0
    made = sorted(p.name for p in out.iterdir())
    assert made == sorted(f"{n[:-4]}.uhmt3.png" for n in SMALL)
    for n in SMALL:
        src = load_image(images / n)
        assert load_image(out / f"{n[:-4]}.uhmt3.png").shape[:2] == src.shape[:2]


def test_missing_input_fails(tmp_path, capsys):
    assert main(["saliency", str(tmp_path / "nope.png")]) == 1
    assert "error" in capsys.readouterr().err


# --- train ----------------------------------------------------------------------------


def test_train_scalar_and_retrain(tmp_path, capsys):
    img = _png(tmp_path / "cam.png", natural_crop("camera", 256))
    model = tmp_path / "m.txt"
    assert main(["train", str(img), "--out", str(model)]) == 0
    first = capsys.readouterr().out
    assert "loglik=" in first and "iterations=" in first
    p = load_params(model)  # validates every invariant
    assert p.levels == 5
    kv = read_model_file(model)
    saved = float(kv["loglik"])

    again = tmp_path / "m2.txt"
    assert main(["train", str(img), "--init", str(model), "--out", str(again)]) == 0
    assert float(read_model_file(again)["loglik"]) >= saved - 1e-8 * abs(saved)


def test_train_vector(tmp_path):
    img = _png(tmp_path / "cam.png", natural_crop("camera", 128))
    model = tmp_path / "v.txt"
    assert main(["train", "--kind", "vector", str(img), "--out", str(model), "--max-iter", "5"]) == 0
    p = load_params(model)
    assert p.levels == 5 and p.cov.shape == (5, 2, 3, 3)


def test_train_black_image_warns(tmp_path, capsys):
    img = _png(tmp_path / "black.png", np.zeros((64, 64)))
    model = tmp_path / "b.txt"
    assert main(["train", str(img), "--out", str(model)]) == 0
    assert "degenerate" in capsys.readouterr().err
    assert model.exists()
    load_params(model)


# --- eval -----------------------------------------------------------------------------


def _eval(corpus, out, modes="uhmt0,uhmt3", extra=()):
    images, fx = corpus
    argv = ["eval", "--images", str(images), "--fixations", str(fx), "--modes", modes,
            "--out-dir", str(out), "--workers", "1", *extra]
    assert main(argv) == 0
    return _rows(out / "metrics.csv"), _rows(out / "summary.csv")


def test_eval_cardinality_and_means(corpus, tmp_path):
    metrics, summary = _eval(corpus, tmp_path / "e")
    assert metrics[0] == ["image", "mode", "lcc", "nss", "auc", "time_s"]
    assert summary[0] == ["mode", "n_images", "lcc", "nss", "auc", "time_s"]
    assert len(metrics) - 1 == 6 and len(summary) - 1 == 2
    for srow in summary[1:]:
        mine = [r for r in metrics[1:] if r[1] == srow[0]]
        assert int(srow[1]) == len(mine) == 3
        for col in range(2, 6):
            mean = math.fsum(float(r[col]) for r in mine) / len(mine)
            assert abs(float(srow[col]) - mean) <= 1e-12
    for r in metrics[1:]:
        assert -1 <= float(r[2]) <= 1 and 0 <= float(r[4]) <= 1
    for m in ("uhmt0", "uhmt3"):
        for kind in ("roc", "isroc"):
            svg = (tmp_path / "e" / f"{kind}_{m}.svg").read_text()
            assert svg.startswith("<svg") and 'viewBox="0 0 800 600"' in svg and "<polyline" in svg


def test_mode_range_expansion():
    names = [m.name for m in mode_list_arg("uhmt0..uhmt5,uhmt6")]
    assert names == [f"uhmt{k}" for k in range(7)]
    assert [m.name for m in mode_list_arg("thmt1,thmt1,vhmt2")] == ["thmt1", "vhmt2"]


def test_eval_table_rows(corpus, tmp_path):
    _, summary = _eval(corpus, tmp_path / "t", "uhmt0..uhmt5,uhmt6")
    assert [r[0] for r in summary[1:]] == [f"uhmt{k}" for k in range(7)]


def test_eval_idempotent_and_parallel_merge(corpus, tmp_path):
    a, sa = _eval(corpus, tmp_path / "a")
    b, sb = _eval(corpus, tmp_path / "b")
    images, fx = corpus
    assert main(["eval", "--images", str(images), "--fixations", str(fx), "--modes", "uhmt0,uhmt3",
                 "--out-dir", str(tmp_path / "c"), "--workers", "2"]) == 0
    c = _rows(tmp_path / "c" / "metrics.csv")
    strip = lambda rows: [r[:-1] for r in rows]  # noqa: E731 (timing differs)
    assert strip(a) == strip(b) == strip(c)
    assert strip(sa) == strip(sb)
    for name in ("roc_uhmt0.svg", "isroc_uhmt3.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_eval_csv_round_trip(corpus, tmp_path):
    metrics, _ = _eval(corpus, tmp_path / "r")
    for r in metrics[1:]:
        for v in r[2:]:
            assert repr(float(v)) == v or v == f"{float(v):.6f}"
    fx = read_fixations_csv(corpus[1])
    assert sorted(fx) == sorted(SMALL)


def test_eval_missing_fixations_row(corpus, tmp_path, capsys):
    images, fx = corpus
    _png(images / "extra.png", natural_crop("coins", 64))
    metrics, summary = _eval(corpus, tmp_path / "m", "uhmt0")
    skipped = [r for r in metrics[1:] if r[0] == "extra.png"]
    assert skipped == [["extra.png", "skipped:no-fixations", "", "", "", ""]]
    assert "extra.png" in capsys.readouterr().err
    assert summary[1][1] == "3"


def test_config_file_with_override(corpus, tmp_path):
    images, fx = corpus
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"modes = uhmt0,uhmt5\nworkers = 1\n\n[eval]\nimages = {images}\nfixations = {fx}\n"
                   f"out-dir = {tmp_path / 'fromfile'}\n")
    assert main(["--config", str(cfg), "eval"]) == 0
    assert [r[0] for r in _rows(tmp_path / "fromfile" / "summary.csv")[1:]] == ["uhmt0", "uhmt5"]
    assert main(["--config", str(cfg), "eval", "--modes", "uhmt2", "--out-dir", str(tmp_path / "flag")]) == 0
    assert [r[0] for r in _rows(tmp_path / "flag" / "summary.csv")[1:]] == ["uhmt2"]
    bad = tmp_path / "bad.ini"
    bad.write_text("frobnicate = 3\n")
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(bad), "version"])
    assert exc.value.code == 2


def test_version(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == "mdis 0.1.0"
