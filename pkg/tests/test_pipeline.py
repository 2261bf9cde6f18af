import json

import numpy as np
import pytest

from wxbs.detect import DetectorConfig
from wxbs.evaluation import homography_grid
from wxbs.geometry import ModelKind, sym_reprojection_errors
from wxbs.imgproc import gaussian_blur
from wxbs.match import generate_tentative
from wxbs.pipeline import MatcherConfig, _ImageState, _extend, describe_features, fold_half, match_pair
from wxbs.synthetic import make_scene
from wxbs.viewsynth import ScheduleEntry, SynthSchedule, Tier, make_view


@pytest.fixture(scope="module")
def scene():
    return make_scene(320, 240, seed=21, n_shapes=110)


@pytest.fixture(scope="module")
def self_report(scene):
    return match_pair(scene, scene, MatcherConfig())


def test_self_pair_succeeds_at_first_iteration(scene, self_report):
    r = self_report
    assert r.succeeded and r.inlier_count >= 15
    assert len(r.per_iteration) == 1
    assert r.per_iteration[0].view_count == (1, 1)
    assert r.model.kind is ModelKind.HOM
    x1, x2 = homography_grid(np.eye(3), scene.shape)
    assert sym_reprojection_errors(r.model.matrix, x1, x2).max() < 0.5


def test_report_serialisation(self_report):
    d = json.loads(self_report.to_json())
    assert d["succeeded"] is True and d["inlier_count"] == self_report.inlier_count
    assert "elapsed" not in d["iterations"][0]
    assert "elapsed" in json.loads(self_report.to_json(timings=True))["iterations"][0]
    assert self_report.to_json() == self_report.to_json()


def test_blank_images_fail():
    blank = np.full((120, 160), 0.5)
    r = match_pair(blank, blank, MatcherConfig(s_max=1))
    assert not r.succeeded and r.model is None and r.inlier_count == 0


def test_describe_features_counts(scene):
    view = make_view(scene, 1.0, 1.0, 0.0)
    one = np.array([[[2.0, 0, 100], [0, 2.0, 100]]])
    sets, stats = describe_features(view, one)
    assert sorted(sets) == ["HalfRootSift", "RootSift"]
    assert all(len(s) == 1 for s in sets.values())
    sets, _ = describe_features(view, np.zeros((0, 2, 3)))
    assert all(len(s) == 0 for s in sets.values())


def test_describe_features_accounting():
    rng = np.random.default_rng(3)
    img = gaussian_blur(make_scene(200, 160, seed=4, n_shapes=50), 1.0)
    img[:, :60] = 0.5  # flat region produces degenerate patches
    view = make_view(img, 1.0, 2.0, 0.5)
    for _ in range(5):
        n = int(rng.integers(10, 60))
        lafs = np.zeros((n, 2, 3))
        lafs[:, 0, 0] = lafs[:, 1, 1] = rng.uniform(1, 3, n)
        lafs[:, :, 2] = rng.uniform(-20, [view.image.shape[1] + 20, view.image.shape[0] + 20], (n, 2))
        sets, st = describe_features(view, lafs)
        total = sum(len(s) for s in sets.values())
        assert total == 2 * (st["input"] - st["degenerate"] - st["border"])


def test_fold_half_range():
    rng = np.random.default_rng(5)
    lafs = rng.standard_normal((50, 2, 3))
    f = fold_half(lafs)
    th = np.arctan2(f[:, 1, 0], f[:, 0, 0])
    assert np.all((th >= 0) & (th < np.pi))
    np.testing.assert_array_equal(f[:, :, 2], lafs[:, :, 2])


def test_features_accumulate(scene):
    small = scene[:160, :200]
    cfg = MatcherConfig(detectors={k: DetectorConfig.default(k) for k in ("DoG", "Hessian")})
    schedule = SynthSchedule((ScheduleEntry(("DoG",), (Tier(1.0, (1.0,)),)),
                              ScheduleEntry(("DoG",), (Tier(1.0, (1.0, 2.0), 1.2),))))
    states = [_ImageState(small), _ImageState(small)]
    _extend(states, schedule.iterations[0], cfg, None)
    f1 = {k: v.lafs.copy() for k, v in states[0].features().items()}
    tc1 = generate_tentative(states[0].features(), states[1].features())
    _extend(states, schedule.iterations[1], cfg, None)
    f2 = states[0].features()
    for k, l in f1.items():
        np.testing.assert_array_equal(f2[k].lafs[: len(l)], l)
        assert len(f2[k]) > len(l)
    assert len(states[0].views) == 1 + 6  # tilt 2 with step 1.2: ceil(2 pi / 1.2) rotations
    assert len(tc1) > 0


def test_config_roundtrip_and_validation(tmp_path):
    cfg = MatcherConfig()
    back = MatcherConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        MatcherConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        MatcherConfig(theta_m=3)
    with pytest.raises(ValueError):
        MatcherConfig(s_max=0)
    with pytest.raises(ValueError):
        MatcherConfig(want_model="E")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"theta_m": 20, "ransac": {"threshold": 3.0}}))
    c = MatcherConfig.load(p)
    assert c.theta_m == 20 and c.ransac.threshold == 3.0 and c.laf_thr == 9.0


def test_shipped_default_config_matches_code():
    from importlib.resources import files
    shipped = json.loads(files("wxbs").joinpath("data/default_config.json").read_text())
    assert shipped == json.loads(json.dumps(MatcherConfig().to_dict()))


def test_thread_count_does_not_change_result(scene):
    small = scene[:180, :240]
    a = match_pair(small, small, MatcherConfig(threads=1))
    b = match_pair(small, small, MatcherConfig(threads=3))
    assert a.to_json() == b.to_json()
