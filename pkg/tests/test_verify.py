import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wxbs.geometry import (ModelKind, TwoViewModel, homography_jacobian, rotation, sym_epipolar_distances,
                           sym_reprojection_errors)
from wxbs.synthetic import random_fundamental_rig
from wxbs.verify import (DegenerateSample, InsufficientTCs, RansacConfig, VerificationFailed,
                         check_sample_h_degeneracy, estimate_fundamental_7pt, estimate_homography_4pt,
                         fit_fundamental, fit_homography, laf_consistency_filter, min_inliers, ransac_verify)


def apply_h(H, x):
    y = np.column_stack([x, np.ones(len(x))]) @ H.T
    return y[:, :2] / y[:, 2:]


def planted_f(seed, n=200, inl=0.6, plane=0.0, noise=0.5):
    rng = np.random.default_rng(seed)
    ni = int(n * inl)
    x1, x2, F, onp = random_fundamental_rig(rng, ni, plane)
    x1 = x1 + rng.normal(0, noise, x1.shape)
    x2 = x2 + rng.normal(0, noise, x2.shape)
    o1 = rng.uniform([0, 0], [640, 480], (n - ni, 2))
    o2 = rng.uniform([0, 0], [640, 480], (n - ni, 2))
    return np.vstack([x1, o1]), np.vstack([x2, o2]), F, onp, ni


def test_h4_examples():
    src = np.array([[0, 0], [10, 0], [10, 10], [0, 10.0]])
    H = estimate_homography_4pt(src, src)
    np.testing.assert_allclose(H / H[2, 2], np.eye(3), atol=1e-9)
    S = np.eye(3)
    S[:2, :2] = 2 * rotation(math.radians(30))
    S[:2, 2] = [5, -3]
    H = estimate_homography_4pt(src, apply_h(S, src))
    np.testing.assert_allclose(H / H[2, 2], S, atol=1e-8)
    with pytest.raises(DegenerateSample):
        estimate_homography_4pt(np.array([[0, 0], [1, 1], [2, 2], [0, 5.0]]), src)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_h4_interpolates(seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 100, (4, 2))
    H0 = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    H0[2, :2] *= 1e-3
    try:
        H = estimate_homography_4pt(src, apply_h(H0, src))
    except DegenerateSample:
        return
    assert np.abs(apply_h(H, src) - apply_h(H0, src)).max() < 1e-6


def test_f7_on_rig():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x1, x2, F, _ = random_fundamental_rig(rng, 7)
        sols = estimate_fundamental_7pt(x1, x2)
        assert 1 <= len(sols) <= 3
        assert min(sym_epipolar_distances(G, x1, x2).max() for G in sols) < 1e-6
        for G in sols:
            s = np.linalg.svd(G, compute_uv=False)
            assert s[2] < 1e-9 * s[0]


def test_f7_coplanar_fails_held_out():
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(10):
        x1, x2, F, onp = random_fundamental_rig(rng, 40, plane_fraction=7 / 40)
        # exact coplanar data has a 3-d null space; measurement noise breaks the tie
        x1 = x1 + rng.normal(0, 0.3, x1.shape)
        sols = estimate_fundamental_7pt(x1[onp], x2[onp])
        off = ~onp
        best = min(np.median(sym_epipolar_distances(G, x1[off], x2[off])) for G in sols)
        bad += best > 2.0
    assert bad >= 8


def test_f7_duplicate_point():
    rng = np.random.default_rng(3)
    x1, x2, F, _ = random_fundamental_rig(rng, 7)
    x1[6], x2[6] = x1[5], x2[5]
    x1h, x2h = random_fundamental_rig(rng, 20)[:2]
    try:
        sols = estimate_fundamental_7pt(x1, x2)
    except DegenerateSample:
        return
    assert all(np.median(sym_epipolar_distances(G, x1h, x2h)) > 1.0 for G in sols)


def test_degeneracy_fixtures():
    rng = np.random.default_rng(4)
    x1, x2, F, onp = random_fundamental_rig(rng, 7, plane_fraction=1.0)
    H = check_sample_h_degeneracy(x1, x2, F, 2.0)
    assert H is not None and sym_reprojection_errors(H, x1, x2).max() < 2.0
    found = 0
    for _ in range(20):
        x1, x2, F, onp = random_fundamental_rig(rng, 7, plane_fraction=5 / 7)
        # every candidate fits the 7 points; take the one matching the rig
        G = min(estimate_fundamental_7pt(x1, x2), key=lambda G: min(np.linalg.norm(G - F), np.linalg.norm(G + F)))
        found += check_sample_h_degeneracy(x1, x2, G, 2.0) is not None
    assert found >= 19


def test_general_position_rarely_degenerate():
    rng = np.random.default_rng(5)
    hits = trials = 0
    for _ in range(300):
        x1, x2, F, _ = random_fundamental_rig(rng, 7)
        for G in estimate_fundamental_7pt(x1, x2):
            trials += 1
            hits += check_sample_h_degeneracy(x1, x2, G, 2.0) is not None
    assert hits / trials < 0.01


def test_planted_f_recovery_and_residual_bound():
    X1, X2, F, onp, ni = planted_f(7)
    cfg = RansacConfig(threshold=3.64, seed=7)
    r = ransac_verify(X1, X2, "F", cfg)
    assert r.model.kind is ModelKind.FUND
    assert np.isin(np.arange(ni), r.inliers).mean() >= 0.95
    assert np.all(r.model.residuals(X1[r.inliers], X2[r.inliers]) < cfg.threshold)
    assert r.samples_used >= 1


def test_auto_prefers_exact_homography():
    rng = np.random.default_rng(8)
    x1 = rng.uniform(0, 500, (60, 2))
    H = np.array([[1.1, 0.1, 20], [-0.05, 0.95, 10], [1e-4, 2e-5, 1]])
    r = ransac_verify(x1, apply_h(H, x1), "Auto", RansacConfig(seed=1))
    assert r.model.kind is ModelKind.HOM
    assert len(r.inliers) == 60


def test_dominant_plane_branch():
    X1, X2, F, onp, ni = planted_f(101, plane=0.8)
    r = ransac_verify(X1, X2, "F", RansacConfig(threshold=2.0, seed=1))
    assert r.degenerate
    off = np.flatnonzero(~onp[:ni])
    assert np.mean(sym_epipolar_distances(r.model.matrix, X1[off], X2[off]) < 4.0) >= 0.9


def test_errors():
    x = np.random.default_rng(9).uniform(0, 100, (6, 2))
    with pytest.raises(InsufficientTCs, match="insufficient TCs"):
        ransac_verify(x, x, "F")
    with pytest.raises(InsufficientTCs):
        ransac_verify(x[:3], x[:3], "H")
    rng = np.random.default_rng(10)
    with pytest.raises(VerificationFailed, match="verification failed"):
        ransac_verify(rng.uniform(0, 640, (40, 2)), rng.uniform(0, 640, (40, 2)), "H", RansacConfig(max_samples=200))
    with pytest.raises(ValueError):
        ransac_verify(x, x, "E")
    with pytest.raises(ValueError):
        RansacConfig(threshold=0)
    assert min_inliers("Fund") == 14 and min_inliers("Hom") == 10


def test_deterministic_and_scale_invariant():
    X1, X2, *_ = planted_f(11, n=120)
    cfg = RansacConfig(threshold=3.0, seed=3)
    a = ransac_verify(X1, X2, "F", cfg)
    b = ransac_verify(X1, X2, "F", cfg)
    np.testing.assert_array_equal(a.inliers, b.inliers)
    np.testing.assert_array_equal(a.model.matrix, b.model.matrix)
    c = ransac_verify(4 * X1, 4 * X2, "F", RansacConfig(threshold=12.0, seed=3))
    np.testing.assert_array_equal(a.inliers, c.inliers)
    d = a.to_dict()
    assert d["kind"] == "Fund" and d["inliers"] == a.inliers.tolist()


def test_fit_fundamental_exact_on_clean_data():
    x1, x2, F, _ = random_fundamental_rig(np.random.default_rng(12), 30)
    G = fit_fundamental(x1, x2)
    assert sym_epipolar_distances(G, x1, x2).max() < 1e-6
    H = fit_homography(x1[:4], x2[:4])
    assert sym_reprojection_errors(H, x1[:4], x2[:4]).max() < 1e-6


def transported_lafs(turn=0.0, sigma=4.0):
    rng = np.random.default_rng(13)
    x1, x2, F, _ = random_fundamental_rig(rng, 20, plane_fraction=1.0)
    H = fit_homography(x1, x2)
    S = sigma * rotation(0.3)
    l1 = np.zeros((20, 2, 3))
    l2 = np.zeros((20, 2, 3))
    for i in range(20):
        l1[i, :, :2] = S
        l1[i, :, 2] = x1[i]
        l2[i, :, :2] = homography_jacobian(H, x1[i]) @ S @ rotation(turn)
        l2[i, :, 2] = apply_h(H, x1[i:i + 1])[0]
    return l1, l2, TwoViewModel.fundamental(F)


def test_laf_consistency_fixtures():
    l1, l2, model = transported_lafs()
    assert len(laf_consistency_filter(l1, l2, model, 6.0)) == 20
    l1, l2, model = transported_lafs(turn=math.pi / 2, sigma=15.0)
    assert len(laf_consistency_filter(l1, l2, model, 6.0)) <= 2
    assert len(laf_consistency_filter(l1, l2, model, math.inf)) == 20


def test_parallax_refine_recovers_epipole():
    from wxbs.verify import _parallax_refine, _Scorer, _skew

    X1, X2, F, onp, ni = planted_f(21, plane=0.8, noise=0.3)
    H = fit_homography(X1[:ni][onp], X2[:ni][onp])
    e2 = np.linalg.svd(F.T)[2][-1]
    bad = _skew(e2 + np.array([0.1, -0.15, 0.0]) * np.linalg.norm(e2)) @ H
    sc = _Scorer(X1, X2, "Fund", 3.0)
    off = np.flatnonzero(~onp)

    def off_plane_ok(M):
        return np.mean(sym_epipolar_distances(M, X1[off], X2[off]) < 3.0)
    assert off_plane_ok(bad) < 0.5
    G, mask = _parallax_refine(sc, H, bad, sc.mask(bad))
    assert mask.sum() > sc.mask(bad).sum()
    assert off_plane_ok(G) >= 0.9
