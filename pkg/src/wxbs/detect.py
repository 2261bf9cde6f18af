"""DoG and Hessian scale-space detectors with adaptive thresholding and
dominant-orientation assignment.

The adaptive rule: if fewer than ``min_features`` keypoints pass the current
threshold, the threshold is multiplied by ``decay_factor`` until the quota is
met or the floor is reached.  Candidates are extracted once at the floor and
thresholds are applied afterwards, which gives the same result as re-running
detection and makes the rule trivially monotone.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .geometry import Laf
from .imgproc import GaussianPyramid, as_gray, build_pyramid, gaussian_blur, gradients

N_ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
ORI_WINDOW = 1.5  # orientation window sigma, in units of keypoint sigma


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    initial_threshold: float = 0.01
    min_features: int = 1500
    threshold_floor: float = 1e-5
    decay_factor: float = 0.5
    octaves: int | None = None
    scales_per_octave: int = 3
    edge_ratio: float = 10.0
    sigma0: float = 1.6
    max_features: int | None = None

    def __post_init__(self):
        if self.threshold_floor > self.initial_threshold:
            raise ValueError("threshold_floor must not exceed initial_threshold")
        if self.min_features < 1:
            raise ValueError("min_features must be >= 1")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must lie in (0, 1)")

    @classmethod
    def default(cls, kind: str = "DoG") -> "DetectorConfig":
        if kind == "DoG":
            return cls()
        if kind == "Hessian":
            # det-Hessian scales with intensity squared
            return cls(initial_threshold=1e-3, threshold_floor=1e-8)
        raise DetectorError(f"unknown detector {kind!r}")

    def fixed(self) -> "DetectorConfig":
        """Same detector without adaptation (threshold stays at initial_threshold)."""
        return replace(self, threshold_floor=self.initial_threshold)


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    sigma: float
    response: float
    detector: str = "DoG"


@dataclass
class KeypointSet:
    """Columnar keypoints; ``octave``/``level`` index the pyramid they came from."""
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    response: np.ndarray
    octave: np.ndarray
    level: np.ndarray
    detector: str = "DoG"
    threshold: float = 0.0

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "KeypointSet":
        return KeypointSet(self.x[idx], self.y[idx], self.sigma[idx], self.response[idx],
                           self.octave[idx], self.level[idx], self.detector, self.threshold)

    def to_list(self) -> list:
        return [Keypoint(float(a), float(b), float(s), float(r), self.detector)
                for a, b, s, r in zip(self.x, self.y, self.sigma, self.response)]


# --- candidate extraction ---------------------------------------------------

def _response_stack(levels: list, sigmas_oct: np.ndarray, kind: str) -> np.ndarray:
    L = np.stack(levels)
    if kind == "DoG":
        return L[1:] - L[:-1]
    Lp = np.pad(L, ((0, 0), (1, 1), (1, 1)), mode="edge")
    c = Lp[:, 1:-1, 1:-1]
    lxx = Lp[:, 1:-1, 2:] - 2 * c + Lp[:, 1:-1, :-2]
    lyy = Lp[:, 2:, 1:-1] - 2 * c + Lp[:, :-2, 1:-1]
    lxy = 0.25 * (Lp[:, 2:, 2:] - Lp[:, 2:, :-2] - Lp[:, :-2, 2:] + Lp[:, :-2, :-2])
    return (sigmas_oct[:, None, None] ** 4) * (lxx * lyy - lxy**2)


def _derivs(R: np.ndarray, s, y, x):
    c = R[s, y, x]
    ds = 0.5 * (R[s + 1, y, x] - R[s - 1, y, x])
    dy = 0.5 * (R[s, y + 1, x] - R[s, y - 1, x])
    dx = 0.5 * (R[s, y, x + 1] - R[s, y, x - 1])
    dss = R[s + 1, y, x] - 2 * c + R[s - 1, y, x]
    dyy = R[s, y + 1, x] - 2 * c + R[s, y - 1, x]
    dxx = R[s, y, x + 1] - 2 * c + R[s, y, x - 1]
    dxy = 0.25 * (R[s, y + 1, x + 1] - R[s, y + 1, x - 1] - R[s, y - 1, x + 1] + R[s, y - 1, x - 1])
    dxs = 0.25 * (R[s + 1, y, x + 1] - R[s + 1, y, x - 1] - R[s - 1, y, x + 1] + R[s - 1, y, x - 1])
    dys = 0.25 * (R[s + 1, y + 1, x] - R[s + 1, y - 1, x] - R[s - 1, y + 1, x] + R[s - 1, y - 1, x])
    g = np.stack([dx, dy, ds], axis=1)
    H = np.stack([np.stack([dxx, dxy, dxs], 1), np.stack([dxy, dyy, dys], 1),
                  np.stack([dxs, dys, dss], 1)], axis=1)
    return c, g, H, dxx, dyy, dxy


def _refine(R: np.ndarray, s, y, x, n_iter: int = 5):
    """Quadratic sub-pixel / sub-scale refinement of integer extrema."""
    ns, h, w = R.shape
    s, y, x = s.copy(), y.copy(), x.copy()
    alive = np.ones(len(s), dtype=bool)
    done = np.zeros(len(s), dtype=bool)
    off = np.zeros((len(s), 3))
    for _ in range(n_iter):
        act = np.flatnonzero(alive & ~done)
        if len(act) == 0:
            break
        _, g, H, *_ = _derivs(R, s[act], y[act], x[act])
        det = np.linalg.det(H)
        ok = np.abs(det) > 1e-300
        o = np.zeros((len(act), 3))
        if ok.any():
            o[ok] = -np.linalg.solve(H[ok], g[ok][..., None])[..., 0]
        o[~ok] = 0.0
        off[act] = o
        conv = np.all(np.abs(o) < 0.5, axis=1)
        done[act[conv]] = True
        mv = act[~conv]
        step = np.round(off[mv]).astype(int)
        x[mv] += step[:, 0]
        y[mv] += step[:, 1]
        s[mv] += step[:, 2]
        bad = (s[mv] < 1) | (s[mv] > ns - 2) | (y[mv] < 1) | (y[mv] > h - 2) | (x[mv] < 1) | (x[mv] > w - 2)
        alive[mv[bad]] = False
    ok = alive & done
    idx = np.flatnonzero(ok)
    c, g, H, dxx, dyy, dxy = _derivs(R, s[idx], y[idx], x[idx])
    value = c + 0.5 * np.sum(g * off[idx], axis=1)
    return idx, s[idx], y[idx], x[idx], off[idx], value, dxx, dyy, dxy


@dataclass
class _Candidates:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    response: np.ndarray
    sample: np.ndarray  # |response| at the integer sample (pre-check)
    octave: np.ndarray
    level: np.ndarray


def _extract(pyr: GaussianPyramid, kind: str, cfg: DetectorConfig) -> _Candidates:
    S = pyr.scales_per_octave
    pre = 0.5 * cfg.threshold_floor
    parts = []
    for o, octv in enumerate(pyr.octaves):
        if cfg.octaves is not None and o >= cfg.octaves:
            break
        sig_oct = octv.sigmas / octv.step
        R = _response_stack(octv.levels, sig_oct, kind)
        if kind == "DoG":
            mx = ndimage.maximum_filter(R, size=3, mode="nearest")
            mn = ndimage.minimum_filter(R, size=3, mode="nearest")
            ext = ((R == mx) & (R > pre)) | ((R == mn) & (R < -pre))
        else:
            mx = ndimage.maximum_filter(R, size=3, mode="nearest")
            ext = (R == mx) & (R > pre)
        ext[0] = ext[-1] = False
        ext[:, 0] = ext[:, -1] = False
        ext[:, :, 0] = ext[:, :, -1] = False
        s, y, x = np.nonzero(ext)
        if len(s) == 0:
            continue
        sample = np.abs(R[s, y, x])
        idx, s2, y2, x2, off, val, dxx, dyy, dxy = _refine(R, s, y, x)
        sample = sample[idx]
        if kind == "DoG":
            tr = dxx + dyy
            det = dxx * dyy - dxy**2
            r = cfg.edge_ratio
            keep = (det > 0) & (tr**2 * r < (r + 1) ** 2 * det)
        else:
            keep = val > 0
        # several integer extrema may converge to one location: keep the first
        key = np.stack([s2, y2, x2], axis=1)[keep]
        _, first = np.unique(key, axis=0, return_index=True)
        sel = np.flatnonzero(keep)[np.sort(first)]
        sub = s2[sel] + off[sel, 2]
        parts.append(_Candidates(
            x=(x2[sel] + off[sel, 0]) * octv.step,
            y=(y2[sel] + off[sel, 1]) * octv.step,
            sigma=pyr.sigma0 * 2.0 ** (o + sub / S),
            response=val[sel],
            sample=sample[sel],
            octave=np.full(len(sel), o),
            level=sub,
        ))
    if not parts:
        z = np.zeros(0)
        return _Candidates(z, z, z, z, z, np.zeros(0, int), z)
    return _Candidates(*(np.concatenate([getattr(p, f) for p in parts])
                         for f in ("x", "y", "sigma", "response", "sample", "octave", "level")))


def _passes(c: _Candidates, t: float) -> np.ndarray:
    return (np.abs(c.response) >= t) & (c.sample >= 0.5 * t)


def adaptive_threshold(c: _Candidates, cfg: DetectorConfig) -> float:
    t = cfg.initial_threshold
    while True:
        n = int(np.count_nonzero(_passes(c, t)))
        if n >= cfg.min_features or t <= cfg.threshold_floor:
            return t
        t = max(t * cfg.decay_factor, cfg.threshold_floor)


def detect_keypoints(img, cfg: DetectorConfig | None = None, kind: str = "DoG",
                     pyramid: GaussianPyramid | None = None, border_distance=None,
                     border_factor: float = 3.0) -> tuple[KeypointSet, GaussianPyramid]:
    """Columnar detection; also returns the pyramid for orientation/patch sampling.

    ``border_distance`` (same shape as ``img``) drops candidates closer than
    ``border_factor * sigma`` to unsupported pixels before thresholding.
    """
    img = as_gray(img)
    if min(img.shape) < 32:
        raise DetectorError("image too small for detection (need at least 32x32)")
    if kind not in ("DoG", "Hessian"):
        raise DetectorError(f"unknown detector {kind!r}")
    cfg = cfg or DetectorConfig.default(kind)
    if pyramid is None:
        pyramid = build_pyramid(img, cfg.sigma0, cfg.scales_per_octave)
    c = _extract(pyramid, kind, cfg)
    h, w = img.shape
    if border_distance is not None and len(c.x):
        xi = np.clip(np.round(c.x).astype(int), 0, w - 1)
        yi = np.clip(np.round(c.y).astype(int), 0, h - 1)
        ok = border_distance[yi, xi] >= border_factor * c.sigma
    else:
        ok = ((c.x >= border_factor * c.sigma) & (c.x <= w - 1 - border_factor * c.sigma)
              & (c.y >= border_factor * c.sigma) & (c.y <= h - 1 - border_factor * c.sigma))
    c = _Candidates(*(getattr(c, f)[ok] for f in ("x", "y", "sigma", "response", "sample", "octave", "level")))
    t = adaptive_threshold(c, cfg)
    sel = np.flatnonzero(_passes(c, t))
    order = np.lexsort((c.x[sel], c.y[sel], -np.abs(c.response[sel])))
    sel = sel[order]
    if cfg.max_features is not None:
        sel = sel[: cfg.max_features]
    ks = KeypointSet(c.x[sel], c.y[sel], c.sigma[sel], c.response[sel], c.octave[sel], c.level[sel], kind, t)
    return ks, pyramid


def detect(img, cfg: DetectorConfig | None = None, kind: str = "DoG") -> list:
    """Keypoints sorted by |response| descending."""
    ks, _ = detect_keypoints(img, cfg, kind)
    return ks.to_list()


# --- orientation -------------------------------------------------------------

def _smooth_circular(h: np.ndarray) -> np.ndarray:
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    out = np.zeros_like(h)
    for i, kv in enumerate(k):
        out += kv * np.roll(h, i - 2, axis=-1)
    return out


def orientation_peaks(hist: np.ndarray, period: float):
    """Peaks >= 0.8 x max of smoothed circular histograms (N, B).

    Returns (row index, orientation) arrays; orientations are parabola-refined
    and lie in [0, period).
    """
    hist = _smooth_circular(np.atleast_2d(hist))
    B = hist.shape[1]
    left = np.roll(hist, 1, axis=1)
    right = np.roll(hist, -1, axis=1)
    mx = hist.max(axis=1, keepdims=True)
    peak = (hist > left) & (hist > right) & (hist >= ORI_PEAK_RATIO * mx) & (mx > 0)
    rows, bins = np.nonzero(peak)
    hl, hc, hr = left[rows, bins], hist[rows, bins], right[rows, bins]
    denom = hl - 2 * hc + hr
    off = np.where(np.abs(denom) > 1e-300, 0.5 * (hl - hr) / np.where(denom == 0, 1, denom), 0.0)
    ori = np.mod((bins + off) * (period / B), period)
    ori[ori >= period] = 0.0
    return rows, ori


def _histograms(mag, ori, weights, period: float) -> np.ndarray:
    """Linear-interpolated orientation histograms, one row per sample set."""
    n = mag.shape[0]
    a = np.mod(ori, period) * (N_ORI_BINS / period)
    b0 = np.floor(a).astype(int)
    f = a - b0
    b0 %= N_ORI_BINS
    b1 = (b0 + 1) % N_ORI_BINS
    wm = mag * weights
    row = np.arange(n)[:, None] * N_ORI_BINS
    hist = np.bincount((row + b0).ravel(), (wm * (1 - f)).ravel(), minlength=n * N_ORI_BINS)
    hist += np.bincount((row + b1).ravel(), (wm * f).ravel(), minlength=n * N_ORI_BINS)
    return hist.reshape(n, N_ORI_BINS)


def _window_hist(mag, ori, cx, cy, sigma, period):
    """Histograms for windows centred at (cx, cy) with Gaussian sigma 1.5*sigma (arrays)."""
    h, w = mag.shape
    sw = ORI_WINDOW * sigma
    rad = int(math.ceil(3.0 * sw.max()))
    d = np.arange(-rad, rad + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    xi = np.round(cx).astype(int)[:, None, None] + dx
    yi = np.round(cy).astype(int)[:, None, None] + dy
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    rx = xi - cx[:, None, None]
    ry = yi - cy[:, None, None]
    r2 = rx**2 + ry**2
    wts = np.exp(-0.5 * r2 / sw[:, None, None] ** 2) * (r2 <= (3.0 * sw[:, None, None]) ** 2) * inside
    xc = np.clip(xi, 0, w - 1)
    yc = np.clip(yi, 0, h - 1)
    n = len(cx)
    return _histograms(mag[yc, xc].reshape(n, -1), ori[yc, xc].reshape(n, -1), wts.reshape(n, -1), period)


def assign_orientations(img, k: Keypoint, half: bool = False) -> list:
    """Dominant orientation(s) of a single keypoint on ``img``.

    The image is smoothed to the keypoint scale first.  With ``half=True``
    opposite gradient directions are merged and orientations lie in [0, pi).
    """
    img = as_gray(img)
    h, w = img.shape
    m = 3.0 * k.sigma
    if k.x < m or k.y < m or k.x > w - 1 - m or k.y > h - 1 - m:
        return []
    extra = math.sqrt(max(k.sigma**2 - 0.25, 0.0))
    sm = gaussian_blur(img, extra) if extra > 1e-3 else img
    mag, ori = gradients(sm)
    period = math.pi if half else 2 * math.pi
    hist = _window_hist(mag, ori, np.array([k.x]), np.array([k.y]), np.array([k.sigma]), period)
    _, oris = orientation_peaks(hist, period)
    return [(k, float(t)) for t in oris]


@dataclass
class _GradCache:
    pyr: GaussianPyramid
    store: dict = field(default_factory=dict)

    def get(self, o: int, lv: int):
        key = (o, lv)
        if key not in self.store:
            self.store[key] = gradients(self.pyr.octaves[o].levels[lv])
        return self.store[key]


def orient_keypoints(ks: KeypointSet, pyr: GaussianPyramid, half: bool = False, grads: _GradCache | None = None):
    """Vectorised orientation assignment on pyramid levels.

    Returns (keypoint index, orientation) arrays; a keypoint may appear more
    than once (several dominant peaks) or not at all (no gradient).
    """
    period = math.pi if half else 2 * math.pi
    grads = grads or _GradCache(pyr)
    all_idx, all_ori = [], []
    if len(ks) == 0:
        return np.zeros(0, int), np.zeros(0)
    n_levels = len(pyr.octaves[0].levels)
    lv = np.clip(np.round(ks.level).astype(int), 0, n_levels - 1)
    groups = np.stack([ks.octave, lv], axis=1)
    for o, l in np.unique(groups, axis=0):
        sel = np.flatnonzero((ks.octave == o) & (lv == l))
        step = pyr.octaves[o].step
        mag, ori = grads.get(int(o), int(l))
        for chunk in np.array_split(sel, max(1, len(sel) // 512 + 1)):
            if len(chunk) == 0:
                continue
            hist = _window_hist(mag, ori, ks.x[chunk] / step, ks.y[chunk] / step, ks.sigma[chunk] / step, period)
            rows, oris = orientation_peaks(hist, period)
            all_idx.append(chunk[rows])
            all_ori.append(oris)
    idx = np.concatenate(all_idx)
    oris = np.concatenate(all_ori)
    order = np.lexsort((oris, idx))
    return idx[order], oris[order]


def keypoint_to_laf(k: Keypoint, orientation: float) -> Laf:
    c, s = math.cos(orientation), math.sin(orientation)
    return Laf((k.x, k.y), k.sigma * np.array([[c, -s], [s, c]]))


def keypoints_to_lafs(ks: KeypointSet, idx: np.ndarray, ori: np.ndarray) -> np.ndarray:
    """(N, 2, 3) LAFs with shape sigma * R(orientation)."""
    c, s = np.cos(ori), np.sin(ori)
    sig = ks.sigma[idx]
    out = np.empty((len(idx), 2, 3))
    out[:, 0, 0] = sig * c
    out[:, 0, 1] = -sig * s
    out[:, 1, 0] = sig * s
    out[:, 1, 1] = sig * c
    out[:, 0, 2] = ks.x[idx]
    out[:, 1, 2] = ks.y[idx]
    return out


def write_keypoints_csv(path, ks: KeypointSet, idx: np.ndarray, ori: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["x", "y", "sigma", "orientation", "response", "detector"])
        for i, t in zip(idx, ori):
            wr.writerow([f"{ks.x[i]:.6f}", f"{ks.y[i]:.6f}", f"{ks.sigma[i]:.6f}", f"{t:.6f}",
                         f"{ks.response[i]:.9g}", ks.detector])
