"""SIFT-family patch descriptors.

All descriptors work on 41x41 patches (single or stacked).  The gradient
histogram is 4x4 spatial cells x B orientation bins (B = 8 over [0, 2pi) for
SIFT, B = 4 over [0, pi) for HalfSIFT) with trilinear soft assignment and a
Gaussian spatial weight.  Patches are photometrically normalised first
unless ``normalize=False``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .imgproc import PATCH_SIZE, photometric_normalize

N_CELLS = 4
DTYPE = np.float64  # histogram accumulation precision
SIFT_CLAMP = 0.2


class DescriptorError(ValueError):
    pass


class DescKind(str, Enum):
    SIFT = "Sift"
    ROOT_SIFT = "RootSift"
    HALF_SIFT = "HalfSift"
    HALF_ROOT_SIFT = "HalfRootSift"
    INV_SIFT = "InvSift"
    RAW_PIXELS = "RawPixels"

    @property
    def dim(self) -> int:
        if self in (DescKind.HALF_SIFT, DescKind.HALF_ROOT_SIFT):
            return 64
        if self is DescKind.RAW_PIXELS:
            return PATCH_SIZE * PATCH_SIZE
        return 128

    @property
    def half(self) -> bool:
        return self in (DescKind.HALF_SIFT, DescKind.HALF_ROOT_SIFT)


@dataclass(frozen=True)
class Descriptor:
    kind: DescKind
    values: np.ndarray

    @property
    def degenerate(self) -> bool:
        """True only for the all-zero SIFT of a gradient-free patch."""
        return not np.any(self.values)


@lru_cache(maxsize=4)
def _spatial_weights(size: int = PATCH_SIZE) -> np.ndarray:
    """(size*size, 16) bilinear cell weights times the Gaussian window."""
    cell = size / N_CELLS
    c = np.arange(size)
    u = (c + 0.5) / cell - 0.5
    i0 = np.floor(u).astype(int)
    f = u - i0
    w1d = np.zeros((size, N_CELLS))
    for idx, wt in ((i0, 1 - f), (i0 + 1, f)):
        ok = (idx >= 0) & (idx < N_CELLS)
        w1d[c[ok], idx[ok]] += wt[ok]
    half = (size - 1) / 2.0
    sigma = size / 2.0
    g = np.exp(-0.5 * ((c - half) / sigma) ** 2)
    wy = w1d * g[:, None]
    wx = w1d * g[:, None]
    # pixel (y, x) -> cell (cy, cx), row-major in both
    W = np.einsum("ya,xb->yxab", wy, wx).reshape(size * size, N_CELLS * N_CELLS)
    W.flags.writeable = False
    return W


def _stack(p) -> tuple[np.ndarray, bool]:
    p = np.asarray(p, dtype=float)
    if p.ndim == 2:
        return p[None], True
    if p.ndim != 3:
        raise DescriptorError("expected a patch or a stack of patches")
    return p, False


def gradient_histograms(patches, half: bool = False, normalize: bool = True, chunk: int = 128) -> np.ndarray:
    """Raw (unnormalised) 4x4xB histograms, shape (N, 16*B); cell-major, bin-minor."""
    p, _ = _stack(patches)
    if normalize:
        p = photometric_normalize(p)
    nb = 4 if half else 8
    period = np.pi if half else 2 * np.pi
    W = _spatial_weights(p.shape[1]).astype(DTYPE)
    npix = p.shape[1] * p.shape[2]
    out = np.empty((len(p), N_CELLS * N_CELLS * nb))
    for s in range(0, len(p), chunk):
        dy, dx = np.gradient(p[s : s + chunk].astype(DTYPE), axis=(1, 2))
        n = len(dx)
        mag = np.hypot(dx, dy).reshape(n, -1)
        a = np.arctan2(dy, dx).reshape(n, -1) * DTYPE(nb / period)
        a %= nb  # continuous bin coordinate in [0, nb]
        b0 = np.floor(a)
        f = a - b0
        b0 = b0.astype(np.int64) % nb
        b1 = (b0 + 1) % nb
        # scatter the two soft-bin contributions into (n, nb, npix); b0 != b1
        O = np.zeros((n, nb, npix), dtype=DTYPE)
        base = np.arange(n)[:, None] * (nb * npix) + np.arange(npix)[None, :]
        flat = O.reshape(-1)
        flat[base + b0 * npix] = mag * (1 - f)
        flat[base + b1 * npix] = mag * f
        h = (O.reshape(n * nb, npix) @ W).reshape(n, nb, -1)
        out[s : s + n] = h.transpose(0, 2, 1).reshape(n, -1)
    return out


def finalize_sift(h: np.ndarray) -> np.ndarray:
    """L2-normalise, clamp at 0.2, renormalise; all-zero rows stay zero."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    n = np.linalg.norm(h, axis=1, keepdims=True)
    v = np.divide(h, n, out=np.zeros_like(h), where=n > 0)
    v = np.minimum(v, SIFT_CLAMP)
    n = np.linalg.norm(v, axis=1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def finalize_root(h: np.ndarray) -> np.ndarray:
    """L1-normalise then elementwise sqrt (unit L2 norm by construction)."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    s = h.sum(axis=1, keepdims=True)
    return np.sqrt(np.divide(h, s, out=np.zeros_like(h), where=s > 0))


def inv_sift_reorder_array(d: np.ndarray) -> np.ndarray:
    d = np.atleast_2d(np.asarray(d))
    if d.shape[1] != 128:
        raise DescriptorError("inverted-SIFT reordering needs 128-d SIFT descriptors")
    return np.roll(d.reshape(len(d), 16, 8), 4, axis=2).reshape(len(d), 128)


def raw_pixels_array(patches):
    """Photometrically normalised, L2-normalised pixels; returns (desc, degenerate mask)."""
    p, _ = _stack(patches)
    q = p.reshape(len(p), -1)
    degenerate = q.std(axis=1) < 1e-10
    v = photometric_normalize(p).reshape(len(p), -1)
    n = np.linalg.norm(v, axis=1, keepdims=True)
    return v / n, degenerate


def describe(patches, kind, normalize: bool = True) -> np.ndarray:
    """Batch descriptors (N, dim).  RawPixels rows of flat patches are NaN."""
    kind = DescKind(kind)
    if kind is DescKind.RAW_PIXELS:
        d, bad = raw_pixels_array(patches)
        d[bad] = np.nan
        return d
    h = gradient_histograms(patches, half=kind.half, normalize=normalize)
    if kind in (DescKind.ROOT_SIFT, DescKind.HALF_ROOT_SIFT):
        return finalize_root(h)
    d = finalize_sift(h)
    if kind is DescKind.INV_SIFT:
        d = inv_sift_reorder_array(d)
    return d


def _single(p, kind: DescKind, normalize: bool) -> Descriptor:
    p = np.asarray(p, dtype=float)
    if p.shape != (PATCH_SIZE, PATCH_SIZE):
        raise DescriptorError(f"expected a {PATCH_SIZE}x{PATCH_SIZE} patch")
    return Descriptor(kind, describe(p[None], kind, normalize)[0])


def sift(p, normalize: bool = True) -> Descriptor:
    return _single(p, DescKind.SIFT, normalize)


def root_sift(p, normalize: bool = True) -> Descriptor:
    return _single(p, DescKind.ROOT_SIFT, normalize)


def half_sift(p, normalize: bool = True) -> Descriptor:
    return _single(p, DescKind.HALF_SIFT, normalize)


def half_root_sift(p, normalize: bool = True) -> Descriptor:
    return _single(p, DescKind.HALF_ROOT_SIFT, normalize)


def inv_sift_reorder(d: Descriptor) -> Descriptor:
    """Descriptor of the intensity-inverted patch: every 8-bin group is rotated by pi."""
    if DescKind(d.kind) is not DescKind.SIFT:
        raise DescriptorError("inverted-SIFT reordering applies to SIFT descriptors only")
    return Descriptor(DescKind.INV_SIFT, inv_sift_reorder_array(d.values)[0])


def raw_pixels(p) -> Descriptor:
    d, bad = raw_pixels_array(np.asarray(p, dtype=float)[None])
    if bad[0]:
        raise DescriptorError("degenerate patch")
    return Descriptor(DescKind.RAW_PIXELS, d[0])


# --- dump formats ---------------------------------------------------------

def write_descriptors(path, desc: np.ndarray, kind) -> None:
    """JSON header line, then little-endian float32 rows."""
    desc = np.asarray(desc, dtype="<f4")
    header = json.dumps({"kind": DescKind(kind).value, "dim": int(desc.shape[1]), "count": int(desc.shape[0])})
    with open(path, "wb") as f:
        f.write(header.encode() + b"\n")
        f.write(desc.tobytes())


def read_descriptors(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != header["dim"] * header["count"]:
        raise DescriptorError("descriptor dump is truncated")
    return DescKind(header["kind"]), data.reshape(header["count"], header["dim"]).astype(float)


def write_descriptors_csv(path, desc: np.ndarray) -> None:
    np.savetxt(path, np.asarray(desc), delimiter=",", fmt="%.9g")

