"""Procedural test imagery and planted two-view geometry."""
from __future__ import annotations

import numpy as np

from .imgproc import gaussian_blur


def make_scene(width: int = 640, height: int = 480, seed: int = 0, n_shapes: int = 220) -> np.ndarray:
    """Textured grayscale scene: multi-scale noise plus random ellipses and rectangles."""
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width))
    for s, a in ((24.0, 0.35), (8.0, 0.2), (2.5, 0.08)):
        img += a * gaussian_blur(rng.standard_normal((height, width)), s) * s
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    for _ in range(n_shapes):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        r = np.exp(rng.uniform(np.log(4), np.log(45)))
        val = rng.uniform(-0.6, 0.6)
        if rng.random() < 0.5:
            ax, ay = r, r * rng.uniform(0.4, 1.0)
            th = rng.uniform(0, np.pi)
            c, s = np.cos(th), np.sin(th)
            u = ((xs - cx) * c + (ys - cy) * s) / ax
            v = (-(xs - cx) * s + (ys - cy) * c) / ay
            m = u**2 + v**2 <= 1
        else:
            w2, h2 = r, r * rng.uniform(0.3, 1.0)
            m = (np.abs(xs - cx) <= w2) & (np.abs(ys - cy) <= h2)
        img[m] += val
    img = gaussian_blur(img, 0.7)
    lo, hi = np.percentile(img, [1, 99])
    return np.clip((img - lo) / (hi - lo) * 0.8 + 0.1, 0.0, 1.0)


def gaussian_blob(width: int, height: int, cx: float, cy: float, sigma: float,
                  amplitude: float = 0.8, background: float = 0.1) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return background + amplitude * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))


def random_fundamental_rig(rng, n: int, plane_fraction: float = 0.0, size=(640, 480)):
    """Project random 3-D points into two synthetic cameras.

    Returns (x1, x2, F, on_plane) with x* as (n, 2) pixel arrays.  A fraction
    ``plane_fraction`` of the points lies on one scene plane.
    """
    w, h = size
    f = 0.9 * w
    K = np.array([[f, 0, w / 2], [0, f, h / 2], [0, 0, 1.0]])
    ang = rng.uniform(-0.25, 0.25, 3)
    R = _rodrigues(ang)
    t = np.array([rng.uniform(0.8, 1.2), rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2)])
    n_plane = int(round(plane_fraction * n))
    X = np.empty((n, 3))
    X[:, 2] = rng.uniform(4.0, 9.0, n)
    X[:, 0] = rng.uniform(-0.45, 0.45, n) * X[:, 2] * w / f
    X[:, 1] = rng.uniform(-0.45, 0.45, n) * X[:, 2] * h / f
    if n_plane:
        normal = _unit(np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 1.0]))
        d = 6.0
        # slide points along their viewing rays onto the plane n.X = d
        rays = X[:n_plane] / X[:n_plane, 2:3]
        X[:n_plane] = rays * (d / (rays @ normal))[:, None]
    on_plane = np.zeros(n, dtype=bool)
    on_plane[:n_plane] = True
    x1 = _project(K, np.eye(3), np.zeros(3), X)
    x2 = _project(K, R, t, X)
    tx = np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])
    Kinv = np.linalg.inv(K)
    F = Kinv.T @ tx @ R @ Kinv
    F /= np.linalg.norm(F)
    return x1, x2, F, on_plane


def _unit(v):
    return v / np.linalg.norm(v)


def _rodrigues(r):
    th = np.linalg.norm(r)
    if th < 1e-12:
        return np.eye(3)
    k = r / th
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * Kx + (1 - np.cos(th)) * Kx @ Kx


def _project(K, R, t, X):
    Xc = X @ R.T + t
    x = Xc @ K.T
    return x[:, :2] / x[:, 2:3]


def warped_pair(img, tilt: float = 3.0, rotation_deg: float = 50.0):
    """(warped image, 3x3 affine A mapping img -> warped) for a tilt/rotation
    warp scaled to fit the original canvas."""
    from .imgproc import warp_affine
    from .viewsynth import view_transform

    h, w = img.shape
    A, vw, vh = view_transform(img.shape, 1.0, tilt, np.deg2rad(rotation_deg))
    s = min(w / vw, h / vh, 1.0)
    A, vw, vh = view_transform(img.shape, s, tilt, np.deg2rad(rotation_deg))
    return warp_affine(img, A, vw, vh), A
