import csv
import json

import numpy as np
import pytest

from wxbs import __version__
from wxbs.cli import main
from wxbs.geometry import format_matrix
from wxbs.imgproc import gaussian_blur, write_image
from wxbs.synthetic import make_scene


@pytest.fixture(scope="module")
def images(tmp_path_factory):
    d = tmp_path_factory.mktemp("img")
    scene = make_scene(320, 240, seed=21, n_shapes=110)
    write_image(d / "a.png", scene)
    write_image(d / "blank.png", np.full((120, 160), 0.5))
    write_image(d / "tex.png", gaussian_blur(make_scene(200, 200, seed=5, n_shapes=80), 0.7))
    return d


def test_match_identical_pair(images, tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["match", str(images / "a.png"), str(images / "a.png"), "--out", str(out), "--viz", "--threads", "2"])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["succeeded"] is True and rep["inlier_count"] >= 15
    rows = list(csv.reader((out / "correspondences.csv").open()))
    assert len(rows) == rep["inlier_count"] + 1
    assert (out / "matches.png").read_bytes()[:4] == b"\x89PNG"
    assert "succeeded" in capsys.readouterr().out
    # write-once outputs
    rc = main(["match", str(images / "a.png"), str(images / "a.png"), "--out", str(out)])
    assert rc == 2 and "--force" in capsys.readouterr().err
    assert main(["match", str(images / "a.png"), str(images / "a.png"), "--out", str(out), "--force"]) == 0


def test_match_blank_images_exit_1(images, tmp_path):
    blank = str(images / "blank.png")
    assert main(["match", blank, blank, "--out", str(tmp_path / "o")]) == 1
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["succeeded"] is False


def test_missing_file_exit_2(tmp_path, capsys):
    assert main(["match", str(tmp_path / "nope.png"), str(tmp_path / "nope.png"), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("wxbs: error:") and err.count("\n") == 1


def test_eval_desc_empty_manifest_exit_2(tmp_path, capsys):
    (tmp_path / "m.json").write_text("[]")
    assert main(["eval-desc", "--manifest", str(tmp_path / "m.json"), "--out-dir", str(tmp_path / "o")]) == 2
    assert "wxbs: error:" in capsys.readouterr().err


def test_malformed_config_exit_2(images, tmp_path):
    (tmp_path / "c.json").write_text('{"bogus": 1}')
    a = str(images / "a.png")
    assert main(["match", a, a, "--out", str(tmp_path / "o"), "--config", str(tmp_path / "c.json")]) == 2


def test_unknown_flag_and_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["match", "a", "b", "--out", "x", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0 and __version__ in capsys.readouterr().out


def test_eval_desc_self_pair(images, tmp_path):
    (tmp_path / "h.txt").write_text(format_matrix(np.eye(3)))
    tex = str(images / "tex.png")
    m = [{"id": "self", "image1": tex, "image2": tex, "category": "c", "model": "Hom", "gt": "h.txt"}]
    (tmp_path / "m.json").write_text(json.dumps(m))
    args = ["eval-desc", "--manifest", str(tmp_path / "m.json"), "--out-dir", str(tmp_path / "o")]
    assert main(args) == 0
    rows = list(csv.DictReader((tmp_path / "o" / "map.csv").open()))
    assert [r["descriptor"] for r in rows] == ["RootSift", "HalfRootSift"]
    assert all(float(r["mAP"]) > 0.9 for r in rows)
    assert (tmp_path / "o" / "complementarity_self.csv").exists()
    assert (tmp_path / "o" / "pr_self.svg").read_text().startswith("<svg")


def test_eval_matcher_self_pair(images, tmp_path):
    (tmp_path / "h.txt").write_text(format_matrix(np.eye(3)))
    a = str(images / "a.png")
    m = [{"id": "p", "image1": a, "image2": a, "category": "same", "model": "Hom", "gt": "h.txt"}]
    (tmp_path / "m.json").write_text(json.dumps(m))
    assert main(["eval-matcher", "--manifest", str(tmp_path / "m.json"), "--out-dir", str(tmp_path / "o")]) == 0
    rows = list(csv.reader((tmp_path / "o" / "category_recall.csv").open()))
    header, last = rows[0], rows[-1]
    assert header[1] == "same" and float(last[1]) == 1.0
    assert (tmp_path / "o" / "recall_same.svg").exists()


def test_demos(images, tmp_path, capsys):
    tex = str(images / "tex.png")
    assert main(["synth-demo", "--image", tex, "--iter", "1", "--out-dir", str(tmp_path / "s")]) == 0
    rows = list(csv.DictReader((tmp_path / "s" / "views.csv").open()))
    assert len(rows) >= 1 and (tmp_path / "s" / rows[0]["file"]).exists()
    assert main(["synth-demo", "--image", tex, "--iter", "99", "--out-dir", str(tmp_path / "s2")]) == 2
    assert main(["detect-demo", "--image", tex, "--out", str(tmp_path / "k.csv")]) == 0
    assert len((tmp_path / "k.csv").read_text().splitlines()) > 10
