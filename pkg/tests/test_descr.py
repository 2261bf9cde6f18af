import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import non_clamping_patches, sift_histogram
from wxbs.descr import (DescKind, DescriptorError, describe, finalize_root, finalize_sift, gradient_histograms,
                        half_root_sift, half_sift, inv_sift_reorder, inv_sift_reorder_array, raw_pixels,
                        read_descriptors, root_sift, sift, write_descriptors)
from wxbs.geometry import rotation
from wxbs.imgproc import gaussian_blur, photometric_normalize, sample_patches
from wxbs.synthetic import make_scene


def textured(seed, n=1):
    rng = np.random.default_rng(seed)
    return np.stack([gaussian_blur(rng.random((41, 41)), 1.2) for _ in range(n)])


def h_ramp():
    return np.tile(np.linspace(0.2, 0.8, 41), (41, 1))


def test_constant_patch_is_degenerate():
    d = sift(np.full((41, 41), 0.3))
    assert d.degenerate and not np.any(d.values)


def test_ramp_mass_in_bin_zero():
    h = gradient_histograms(h_ramp()).reshape(16, 8)
    assert h[:, 0].sum() / h.sum() > 0.95
    d = sift(h_ramp()).values.reshape(16, 8)
    assert d[:, 0].sum() / d.sum() > 0.95


def test_sift_not_rotation_invariant_by_itself():
    p = make_scene(120, 120, seed=1, n_shapes=40)[40:81, 40:81]
    assert np.linalg.norm(sift(p).values - sift(np.rot90(p, 2)).values) > 0.5


def test_histograms_match_pixel_loop_oracle():
    p = textured(2, 6)
    np.testing.assert_allclose(gradient_histograms(p, normalize=False), sift_histogram(p), atol=1e-12)
    np.testing.assert_allclose(gradient_histograms(p, half=True, normalize=False), sift_histogram(p, 4, math.pi),
                               atol=1e-12)


def test_root_examples():
    h = np.zeros(128)
    h[17] = 3.0
    np.testing.assert_array_equal(finalize_root(h)[0], np.eye(128)[17])
    h = np.zeros(128)
    h[:2] = [9, 16]
    np.testing.assert_allclose(finalize_root(h)[0][:3], [0.6, 0.8, 0])
    h = np.zeros(64)
    h[5] = 1.0
    np.testing.assert_array_equal(finalize_root(h)[0], np.eye(64)[5])


def test_root_sift_is_sqrt_of_l1_histogram():
    p = textured(3, 100)
    h = sift_histogram(photometric_normalize(p))
    ref = np.sqrt(h / h.sum(axis=1, keepdims=True))
    got = describe(p, DescKind.ROOT_SIFT)
    np.testing.assert_allclose(got, ref, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(got, axis=1), 1, atol=1e-9)
    np.testing.assert_allclose(root_sift(p[0]).values, got[0], atol=1e-15)


def test_sift_finalisation():
    d = describe(textured(4, 20), DescKind.SIFT)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1, atol=1e-9)
    assert d.min() >= 0
    # clamped once then renormalised
    h = sift_histogram(photometric_normalize(textured(4, 1)))[0]
    v = np.minimum(h / np.linalg.norm(h), 0.2)
    np.testing.assert_allclose(finalize_sift(h)[0], v / np.linalg.norm(v), atol=1e-12)


def test_half_sift_inversion_invariance():
    rng = np.random.default_rng(5)
    for p in rng.random((30, 41, 41)):
        np.testing.assert_allclose(half_sift(p).values, half_sift(1 - p).values, atol=1e-6)
        np.testing.assert_allclose(half_root_sift(p).values, half_root_sift(1 - p).values, atol=1e-6)
    r = h_ramp()
    np.testing.assert_allclose(half_sift(r).values, half_sift(1 - r).values, atol=1e-12)
    assert half_sift(r).values.shape == (64,) and sift(r).values.shape == (128,)


def test_half_root_norm():
    d = describe(textured(6, 100), DescKind.HALF_ROOT_SIFT)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1, atol=1e-9)
    assert d.min() >= 0


def test_inv_sift_reorder():
    d = np.zeros(128)
    d[1] = 1.0
    np.testing.assert_array_equal(inv_sift_reorder_array(d)[0], np.eye(128)[5])
    x = sift(textured(7)[0])
    np.testing.assert_array_equal(inv_sift_reorder_array(inv_sift_reorder_array(x.values))[0], x.values)
    for p in non_clamping_patches(np.random.default_rng(8), 20):
        assert np.linalg.norm(inv_sift_reorder(sift(p)).values - sift(1 - p).values) < 0.1
    with pytest.raises(DescriptorError):
        inv_sift_reorder(root_sift(p))
    with pytest.raises(DescriptorError):
        inv_sift_reorder_array(np.zeros(64))


def test_raw_pixels():
    img = gaussian_blur(make_scene(120, 120, seed=9, n_shapes=40), 2.0)
    a = raw_pixels(img[20:61, 20:61])
    b = raw_pixels(img[21:62, 20:61])
    c = raw_pixels(img[70:111, 65:106])
    assert np.linalg.norm(a.values - a.values) == 0
    assert np.linalg.norm(a.values) == pytest.approx(1)
    assert np.linalg.norm(a.values - b.values) < 0.5 * np.linalg.norm(a.values - c.values)
    with pytest.raises(DescriptorError, match="degenerate patch"):
        raw_pixels(np.ones((41, 41)))


def test_rotation_covariance():
    img = gaussian_blur(make_scene(200, 200, seed=10, n_shapes=60), 1.0)
    c = np.array([100.0, 100.0])
    for theta in (0.4, 1.3, 2.9):
        laf = np.concatenate([3.0 * rotation(theta), c[:, None]], axis=1)
        p1 = sample_patches(img, laf[None])[0]
        # rotate the image about c by -theta, then read it upright
        R = rotation(-theta)
        y, x = np.mgrid[0:200, 0:200].astype(float)
        src = np.einsum("ij,jyx->iyx", R.T, np.stack([x - c[0], y - c[1]])) + c[:, None, None]
        from scipy.ndimage import map_coordinates
        rot = map_coordinates(img, [src[1], src[0]], order=1, mode="nearest")
        p2 = sample_patches(rot, np.concatenate([3.0 * np.eye(2), c[:, None]], axis=1)[None])[0]
        assert np.linalg.norm(root_sift(p1).values - root_sift(p2).values) < 0.15


def test_single_patch_shape_check():
    with pytest.raises(DescriptorError):
        sift(np.zeros((20, 20)))


def test_dump_roundtrip(tmp_path):
    d = describe(textured(11, 5), DescKind.HALF_ROOT_SIFT)
    write_descriptors(tmp_path / "d.bin", d, "HalfRootSift")
    kind, back = read_descriptors(tmp_path / "d.bin")
    assert kind is DescKind.HALF_ROOT_SIFT
    np.testing.assert_allclose(back, d, atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(arrays(float, (41, 41), elements=st.floats(0, 1)), st.floats(0.1, 10), st.floats(-5, 5))
def test_affine_intensity_invariance(p, a, b):
    if p.std() < 1e-3:
        return
    np.testing.assert_allclose(root_sift(p).values, root_sift(a * p + b).values, atol=1e-6)
