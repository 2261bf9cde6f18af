"""Grayscale images, Gaussian scale space, affine warping and patch sampling.

Images are 2-D float64 numpy arrays indexed ``img[y, x]`` with values in
[0, 1].  Patches are 41x41 arrays; batches of patches are ``(N, 41, 41)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PATCH_SIZE = 41
MR_SCALE = 3.0 * math.sqrt(3.0)


class ImageError(ValueError):
    pass


def as_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ImageError("expected a non-empty 2-D grayscale image")
    if not np.all(np.isfinite(img)):
        raise ImageError("image contains non-finite values")
    return img


def to_gray(rgb) -> np.ndarray:
    """Channel average (R + G + B) / 3; 2-D input is returned as float."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.size == 0:
        raise ImageError("empty image")
    if rgb.ndim == 2:
        return rgb.copy()
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ImageError(f"unsupported image shape {rgb.shape}")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    # (3r)/3 can differ from r in the last bit; keep gray pixels exact
    return np.where((r == g) & (g == b), r, (r + g + b) / 3.0)


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM/PPM (or anything Pillow opens) as gray in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            raise ImageError(f"{path}: only 8-bit images are supported")
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=float) / 255.0
    return to_gray(arr)


def write_image(path, img) -> None:
    from PIL import Image

    arr = np.clip(np.round(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


# --- filtering -------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(img: np.ndarray, sigma: float, axis: int) -> np.ndarray:
    if sigma <= 0:
        return img
    return ndimage.correlate1d(img, gaussian_kernel(sigma), axis=axis, mode="mirror")


def gaussian_blur(img, sigma) -> np.ndarray:
    """Separable Gaussian blur with mirrored borders.

    ``sigma`` is a scalar or a ``(sigma_y, sigma_x)`` pair; non-positive
    components skip that axis.
    """
    img = np.asarray(img, dtype=float)
    if np.isscalar(sigma):
        if sigma <= 0:
            raise ImageError("sigma must be positive")
        sy = sx = float(sigma)
    else:
        sy, sx = (float(s) for s in sigma)
    return _blur_axis(_blur_axis(img, sy, img.ndim - 2), sx, img.ndim - 1)


def gradients(img):
    """Central-difference gradients (one-sided at borders).

    Works on the last two axes, so a stack of patches is accepted.
    Returns (magnitude, orientation in [0, 2*pi)).
    """
    img = np.asarray(img, dtype=float)
    if img.shape[-1] < 3 or img.shape[-2] < 3:
        raise ImageError("gradients need at least 3x3 pixels")
    dy, dx = np.gradient(img, axis=(-2, -1))
    mag = np.hypot(dx, dy)
    ori = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
    # mod can round 2*pi - tiny up to exactly 2*pi
    ori[ori >= 2.0 * np.pi] = 0.0
    return mag, ori


# --- affine warping --------------------------------------------------------

def _resample(img: np.ndarray, inv: np.ndarray, out_w: int, out_h: int, mode="constant") -> np.ndarray:
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(float)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return ndimage.map_coordinates(img, [sy, sx], order=1, mode=mode, cval=0.0)


def antialias_sigmas(linear: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(linear, compute_uv=False)
    return 0.8 * np.sqrt(np.maximum(1.0 / s**2 - 1.0, 0.0))


def warp_affine(img, A, out_w: int, out_h: int) -> np.ndarray:
    """Warp ``img`` by the affine map ``A`` (source -> output coordinates).

    Inverse mapping with bilinear interpolation; samples falling outside the
    source are 0.  Downscaling directions are pre-blurred with
    sigma = 0.8 * sqrt(1/s^2 - 1) along the corresponding singular vector.
    """
    img = as_gray(img)
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3) or not np.allclose(A[2], [0, 0, 1], atol=1e-12):
        raise ImageError("warp matrix must be 3x3 affine")
    L = A[:2, :2]
    if abs(np.linalg.det(L)) < 1e-12:
        raise ImageError("warp matrix is singular")
    U, s, Vt = np.linalg.svd(L)
    sig = 0.8 * np.sqrt(np.maximum(1.0 / s**2 - 1.0, 0.0))
    if np.all(sig < 1e-3):
        return _resample(img, np.linalg.inv(A), out_w, out_h)
    if abs(sig[0] - sig[1]) < 1e-6:
        return _resample(gaussian_blur(img, sig[0]), np.linalg.inv(A), out_w, out_h)
    if np.allclose(np.abs(Vt), np.eye(2), atol=1e-12) or np.allclose(np.abs(Vt), np.eye(2)[::-1], atol=1e-12):
        # singular directions already axis aligned: blur the source directly
        sx, sy = (sig[0], sig[1]) if abs(Vt[0, 0]) > 0.5 else (sig[1], sig[0])
        return _resample(gaussian_blur(img, (sy, sx)), np.linalg.inv(A), out_w, out_h)
    # Rotate into the singular frame, blur per axis, then apply the rest.
    h, w = img.shape
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)
    rc = corners @ Vt.T
    lo = np.floor(rc.min(axis=0))
    hi = np.ceil(rc.max(axis=0))
    R = np.eye(3)
    R[:2, :2] = Vt
    R[:2, 2] = -lo
    mid_w, mid_h = int(hi[0] - lo[0]) + 1, int(hi[1] - lo[1]) + 1
    mid = _resample(img, np.linalg.inv(R), mid_w, mid_h)
    mid = gaussian_blur(mid, (sig[1], sig[0]))
    rest = A @ np.linalg.inv(R)
    return _resample(mid, np.linalg.inv(rest), out_w, out_h)


# --- patches ---------------------------------------------------------------

def _patch_grid(size: int = PATCH_SIZE) -> np.ndarray:
    t = np.linspace(-1.0, 1.0, size)
    px, py = np.meshgrid(t, t)
    return np.stack([px.ravel(), py.ravel()])  # (2, size*size)


def sample_patches(img, lafs, mr_scale: float = MR_SCALE, size: int = PATCH_SIZE) -> np.ndarray:
    """Sample ``size x size`` patches covering ``center + mr_scale * A * p``, p in [-1, 1]^2.

    ``lafs`` is an ``(N, 2, 3)`` array.  Bilinear, clamp-to-edge.
    """
    img = np.asarray(img, dtype=float)
    lafs = np.asarray(lafs, dtype=float).reshape(-1, 2, 3)
    if len(lafs) == 0:
        return np.zeros((0, size, size))
    g = _patch_grid(size)
    pts = mr_scale * np.einsum("nij,jk->nik", lafs[:, :, :2], g) + lafs[:, :, 2:3]
    vals = ndimage.map_coordinates(img, [pts[:, 1].ravel(), pts[:, 0].ravel()], order=1, mode="nearest")
    return vals.reshape(len(lafs), size, size)


def sample_patch(img, laf, mr_scale: float = MR_SCALE) -> np.ndarray:
    return sample_patches(img, laf.as_array()[None], mr_scale)[0]


def photometric_normalize(p, mean: float = 0.5, std: float = 0.2) -> np.ndarray:
    """Shift/scale each patch to the given mean and standard deviation, then clamp to [0, 1].

    Accepts a single patch or a stack; zero-variance patches become constant ``mean``.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 2
    q = p.reshape(1, -1) if single else p.reshape(p.shape[0], int(np.prod(p.shape[1:])))
    mu = q.mean(axis=1, keepdims=True)
    sd = q.std(axis=1, keepdims=True)
    flat = sd[:, 0] < 1e-10
    out = (q - mu) / np.where(flat[:, None], 1.0, sd) * std + mean
    out[flat] = mean
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(p.shape)


# --- scale space -----------------------------------------------------------

@dataclass
class Octave:
    levels: list  # list of 2-D arrays at this octave's resolution
    sigmas: np.ndarray  # absolute sigma of each level in base-image pixels
    step: int  # base pixels per octave pixel


@dataclass
class GaussianPyramid:
    octaves: list = field(default_factory=list)
    sigma0: float = 1.6
    scales_per_octave: int = 3


def build_pyramid(img, sigma0: float = 1.6, scales_per_octave: int = 3, min_size: int = 32,
                  assumed_blur: float = 0.5, extra_levels: int = 3) -> GaussianPyramid:
    img = as_gray(img)
    S = scales_per_octave
    n_levels = S + extra_levels
    rel = sigma0 * 2.0 ** (np.arange(n_levels) / S)
    inc = np.sqrt(np.diff(rel**2))
    pyr = GaussianPyramid(sigma0=sigma0, scales_per_octave=S)
    base = gaussian_blur(img, math.sqrt(max(sigma0**2 - assumed_blur**2, 1e-4)))
    step = 1
    while min(base.shape) >= min_size:
        levels = [base]
        for s in inc:
            levels.append(gaussian_blur(levels[-1], s))
        pyr.octaves.append(Octave(levels, rel * step, step))
        nxt = levels[S]
        h, w = nxt.shape
        base = nxt[: 2 * (h // 2) : 2, : 2 * (w // 2) : 2]
        step *= 2
    return pyr
