import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wxbs.detect import DetectorConfig, detect_keypoints
from wxbs.geometry import transform_lafs
from wxbs.imgproc import gaussian_blur, sample_patches
from wxbs.synthetic import make_scene
from wxbs.viewsynth import (ScheduleEntry, SynthSchedule, Tier, backproject, make_view, synthesize_views,
                            view_transform)


@pytest.fixture(scope="module")
def scene():
    return gaussian_blur(make_scene(200, 160, seed=3, n_shapes=70), 0.8)


def expected_count(entry):
    return sum(1 if t == 1 else math.ceil(math.pi * t / tier.rotation_step) for tier in entry.tiers
               for t in tier.tilts)


def test_identity_tier(scene):
    views = synthesize_views(scene, ScheduleEntry(("DoG",), (Tier(1.0, (1.0,), 0.3),)))
    assert len(views) == 1
    np.testing.assert_array_equal(views[0].A, np.eye(3))
    np.testing.assert_array_equal(views[0].image, scene)


def test_rotation_count():
    entry = ScheduleEntry(("DoG",), (Tier(1.0, (2.0,), math.pi / 5),))
    rots = [p[2] for p in entry.view_params()]
    assert len(rots) == 10 == math.ceil(math.pi / (math.pi / 5 / 2))
    np.testing.assert_allclose(rots, np.arange(10) * math.pi / 10)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from([1.0, math.sqrt(2), 2.0, 2 * math.sqrt(2), 4.0]), min_size=1, max_size=5,
                unique=True), st.floats(0.2, 3.0))
def test_view_count_formula(tilts, step):
    entry = ScheduleEntry(("DoG",), (Tier(1.0, tuple(tilts), step),))
    assert len(entry.view_params()) == expected_count(entry)


def test_default_schedule_roundtrip():
    s = SynthSchedule.default()
    assert SynthSchedule.from_dict(s.to_dict()) == s
    assert [len(e.view_params()) for e in s.iterations][:2] == [1, 10]
    with pytest.raises(ValueError):
        Tier(1.0, (0.5,))
    with pytest.raises(ValueError):
        ScheduleEntry(("SURF",))


@pytest.mark.parametrize("scale,tilt,rot", [(1.0, 2.0, 0.6), (1.0, 4.0, 2.0), (0.25, 1.0, 0.0), (1.0, 1.0, 1.0)])
def test_view_geometry_consistency(scene, scale, tilt, rot):
    view = make_view(scene, scale, tilt, rot)
    rng = np.random.default_rng(0)
    corr = []
    for _ in range(12):
        c = rng.uniform([50, 50], [150, 110])
        base = np.array([[8.0, 0, c[0]], [0, 8.0, c[1]]])
        ref = sample_patches(scene, base[None], 1.0, 17)[0]
        got = sample_patches(view.image, transform_lafs(view.A, base[None]), 1.0, 17)[0]
        corr.append(np.corrcoef(ref.ravel(), got.ravel())[0, 1])
    assert np.median(corr) > 0.9


def test_view_size_covers_image():
    A, w, h = view_transform((100, 200), 1.0, 2.0, 0.7)
    corners = np.array([[0, 0, 1], [199, 0, 1], [0, 99, 1], [199, 99, 1.0]]) @ A.T
    assert corners[:, 0].min() >= -1e-9 and corners[:, 0].max() <= w - 1 + 1e-9
    assert corners[:, 1].min() >= -1e-9 and corners[:, 1].max() <= h - 1 + 1e-9


def test_backproject_identity_and_rotation(scene):
    view = make_view(scene, 1.0, 1.0, 0.0)
    lafs = np.array([[[1.0, 0, 10], [0, 1.0, 20]]])
    np.testing.assert_array_equal(backproject(view, lafs), lafs)
    rv = make_view(scene, 1.0, 1.0, math.pi / 2)
    corner = np.array([[[1.0, 0, 0], [0, 1.0, 0]]])
    back = backproject(rv, corner)
    h, w = scene.shape
    orig = rv.A_inv[:2, 2]
    np.testing.assert_allclose(back[0, :, 2], orig, atol=1e-9)
    assert any(np.allclose(orig, c, atol=1e-9) for c in ([0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]))


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 4.0), st.floats(0, math.pi), st.floats(10, 150), st.floats(10, 110))
def test_backproject_inverts_transform(tilt, rot, x, y):
    A, w, h = view_transform((120, 160), 1.0, tilt, rot)
    from wxbs.viewsynth import SynthView
    view = SynthView(np.zeros((h, w)), A, tilt, rot, 1.0, (120, 160))
    lafs = np.array([[[2.0, 0.3, x], [-0.2, 1.5, y]]])
    np.testing.assert_allclose(backproject(view, transform_lafs(A, lafs)), lafs, atol=1e-9)


def test_backproject_repeatability():
    img = gaussian_blur(make_scene(320, 240, seed=5, n_shapes=120), 0.7)
    cfg = DetectorConfig(min_features=300)
    ref, _ = detect_keypoints(img, cfg)
    view = make_view(img, 1.0, 1.0, 0.9)
    ks, _ = detect_keypoints(view.image, cfg, border_distance=view.border_distance)
    lafs = np.zeros((len(ks), 2, 3))
    lafs[:, 0, 0] = lafs[:, 1, 1] = ks.sigma
    lafs[:, 0, 2], lafs[:, 1, 2] = ks.x, ks.y
    back = backproject(view, lafs)[:, :, 2]
    refc = np.stack([ref.x, ref.y], axis=1)
    d = np.min(np.linalg.norm(back[:, None] - refc[None], axis=2), axis=1)
    assert np.mean(d < 1.5) >= 0.7
