"""Robust two-view estimation: minimal solvers, LO-RANSAC with the DEGENSAC
dominant-plane test, and the LAF consistency filter."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import (EPS, GeometryError, TwoViewModel, enforce_rank2, laf_points,
                       normalize_homography, sym_epipolar_distances, sym_reprojection_errors)

log = logging.getLogger(__name__)


class VerificationError(RuntimeError):
    pass


class InsufficientTCs(VerificationError):
    def __init__(self, msg="insufficient TCs"):
        super().__init__(msg)


class VerificationFailed(VerificationError):
    def __init__(self, msg="verification failed"):
        super().__init__(msg)


class DegenerateSample(GeometryError):
    pass


WANT = {"F": "Fund", "Fund": "Fund", "H": "Hom", "Hom": "Hom", "auto": "Auto", "Auto": "Auto"}
SAMPLE_SIZE = {"Fund": 7, "Hom": 4}


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 2.0  # px, on the symmetric residual
    confidence: float = 0.99
    max_samples: int = 10000
    lo_iterations: int = 3
    seed: int = 42
    degensac: bool = True  # the dominant-plane branch; off only for comparisons
    auto_h_margin: float = 0.05

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("inlier threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.max_samples < 1 or self.lo_iterations < 0:
            raise ValueError("max_samples >= 1 and lo_iterations >= 0 required")


@dataclass
class VerificationResult:
    model: TwoViewModel
    inliers: np.ndarray  # indices into the TC list
    degenerate: bool = False
    samples_used: int = 0

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        d.update(inliers=[int(i) for i in self.inliers], degenerate=bool(self.degenerate),
                 samples_used=int(self.samples_used))
        return d


def min_inliers(kind: str) -> int:
    return max(10, 2 * SAMPLE_SIZE[kind])


# --- normalisation -----------------------------------------------------------

def hartley(x):
    """Similarity T moving the centroid to 0 and the mean distance to sqrt(2)."""
    x = np.asarray(x, dtype=float)
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > EPS else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return T, (x - c) * s


def _hom(x):
    return np.hstack([x, np.ones((len(x), 1))])


def _collinear(p, tol=1e-9) -> bool:
    """Any three of the points (nearly) collinear, relative to their spread."""
    n = len(p)
    scale = max(np.ptp(p, axis=0).max(), EPS) ** 2
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a, b = p[j] - p[i], p[k] - p[i]
                if abs(a[0] * b[1] - a[1] * b[0]) < tol * scale:
                    return True
    return False


# --- homography --------------------------------------------------------------

def _dlt(x1, x2):
    T1, a = hartley(x1)
    T2, b = hartley(x2)
    n = len(a)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = a
    A[0::2, 2] = 1
    A[0::2, 6:8] = -b[:, :1] * a
    A[0::2, 8] = -b[:, 0]
    A[1::2, 3:5] = a
    A[1::2, 5] = 1
    A[1::2, 6:8] = -b[:, 1:] * a
    A[1::2, 8] = -b[:, 1]
    Hn = np.linalg.svd(A)[2][-1].reshape(3, 3)
    H = np.linalg.solve(T2, Hn @ T1)
    if abs(H[2, 2]) < EPS or abs(np.linalg.det(H)) < EPS * np.abs(H).max() ** 3:
        raise DegenerateSample("degenerate homography")
    return normalize_homography(H)


def estimate_homography_4pt(x1, x2) -> np.ndarray:
    """Normalised DLT on exactly 4 correspondences."""
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if len(x1) != 4 or len(x2) != 4:
        raise ValueError("exactly 4 correspondences required")
    if _collinear(x1) or _collinear(x2):
        raise DegenerateSample("degenerate configuration: collinear triple")
    return _dlt(x1, x2)


def fit_homography(x1, x2) -> np.ndarray:
    """Least-squares (algebraic) homography on >= 4 correspondences."""
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if len(x1) < 4:
        raise DegenerateSample("need >= 4 correspondences")
    return _dlt(x1, x2)


# --- fundamental matrix --------------------------------------------------------

def _epipolar_rows(a, b):
    return np.column_stack([b[:, :1] * a, b[:, :1], b[:, 1:] * a, b[:, 1:], a, np.ones(len(a))])


def estimate_fundamental_7pt(x1, x2) -> list:
    """1-3 rank-2 solutions of the 7-point problem (unit Frobenius norm)."""
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if len(x1) != 7 or len(x2) != 7:
        raise ValueError("exactly 7 correspondences required")
    T1, a = hartley(x1)
    T2, b = hartley(x2)
    A = _epipolar_rows(a, b)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s[6] < 1e-10 * s[0]:
        raise DegenerateSample("degenerate sample")
    F1 = Vt[7].reshape(3, 3)
    F2 = Vt[8].reshape(3, 3)
    # det(t F1 + (1 - t) F2) is a cubic in t; four samples pin it down exactly
    stack = _CUBIC_T[:, None, None] * F1 + (1 - _CUBIC_T)[:, None, None] * F2
    coef = _CUBIC_FIT @ np.linalg.det(stack)
    out = []
    for r in np.roots(coef):
        if abs(r.imag) > 1e-8 * max(1.0, abs(r.real)):
            continue
        t = r.real
        # t F1 + (1 - t) F2 is singular by construction; denormalising keeps rank 2
        F = T2.T @ (t * F1 + (1 - t) * F2) @ T1
        nf = np.linalg.norm(F)
        if nf < EPS:
            continue
        out.append(F / nf)
    if not out and abs(coef[0]) < EPS:
        out.append(enforce_rank2(T2.T @ F1 @ T1))  # the root at infinity
    return out


_CUBIC_T = np.array([-1.0, 0.0, 1.0, 2.0])
_CUBIC_FIT = np.linalg.inv(np.vander(_CUBIC_T, 4))


def fit_fundamental(x1, x2, weights=None) -> np.ndarray:
    """Normalised (optionally weighted) 8-point least squares, rank 2 enforced."""
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if len(x1) < 8:
        raise DegenerateSample("need >= 8 correspondences")
    T1, a = hartley(x1)
    T2, b = hartley(x2)
    A = _epipolar_rows(a, b)
    if weights is not None:
        A = A * np.asarray(weights, dtype=float)[:, None]
    Fn = np.linalg.svd(A)[2][-1].reshape(3, 3)
    F = T2.T @ enforce_rank2(Fn) @ T1
    return enforce_rank2(F)


# --- DEGENSAC ---------------------------------------------------------------

# triplets of the 7-point sample; any 5 coplanar points contain one of them
_TRIPLETS = ((0, 1, 2), (3, 4, 5), (0, 1, 6), (3, 4, 6), (2, 5, 6))


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def epipole2(F) -> np.ndarray:
    """Left null vector e' of F (F^T e' = 0)."""
    return np.linalg.svd(F.T)[2][-1]


def _h_from_triplet(F, e2, x1h, x2h):
    """Homography compatible with F and mapping the three points (H = A - e' (M^-1 b)^T)."""
    A = _skew(e2) @ F
    b = np.empty(3)
    for i in range(3):
        p = np.cross(x2h[i], A @ x1h[i])
        q = np.cross(x2h[i], e2)
        qq = q @ q
        if qq < EPS:
            return None
        b[i] = p @ q / qq
    M = x1h
    if abs(np.linalg.det(M)) < EPS:
        return None
    return A - np.outer(e2, np.linalg.solve(M, b))


def check_sample_h_degeneracy(x1, x2, F, threshold: float):
    """Homography explaining >= 5 of the 7 sample points, refit on them, or None."""
    x1 = np.asarray(x1, dtype=float).reshape(7, 2)
    x2 = np.asarray(x2, dtype=float).reshape(7, 2)
    e2 = epipole2(F)
    x1h, x2h = _hom(x1), _hom(x2)
    for tri in _TRIPLETS:
        idx = list(tri)
        H = _h_from_triplet(F, e2, x1h[idx], x2h[idx])
        if H is None or not np.all(np.isfinite(H)) or abs(np.linalg.det(H)) < EPS * max(np.abs(H).max(), EPS) ** 3:
            continue
        ok = sym_reprojection_errors(H, x1, x2) < threshold
        if ok.sum() >= 5:
            try:
                return fit_homography(x1[ok], x2[ok])
            except DegenerateSample:
                return normalize_homography(H) if abs(H[2, 2]) > EPS else None
    return None


def f_from_h_and_parallax(H, x1, x2):
    """Plane-and-parallax F = [e']x H from two off-plane correspondences."""
    x1h, x2h = _hom(np.asarray(x1, dtype=float)), _hom(np.asarray(x2, dtype=float))
    l1 = np.cross(H @ x1h[0], x2h[0])
    l2 = np.cross(H @ x1h[1], x2h[1])
    e2 = np.cross(l1, l2)
    if np.linalg.norm(e2) < EPS:
        return None
    F = _skew(e2) @ H
    n = np.linalg.norm(F)
    if n < EPS:
        return None
    try:
        return enforce_rank2(F / n)
    except GeometryError:
        return None


# --- RANSAC -------------------------------------------------------------------

def _n_needed(n_in: int, n: int, m: int, conf: float) -> float:
    w = n_in / n
    p = w**m
    if p <= 0:
        return math.inf
    if p >= 1:
        return 0
    return math.log(1 - conf) / math.log(1 - p)


class _Scorer:
    def __init__(self, x1, x2, kind, thr):
        self.x1, self.x2, self.kind, self.thr = x1, x2, kind, thr

    def residuals(self, M):
        if self.kind == "Fund":
            return sym_epipolar_distances(M, self.x1, self.x2)
        return sym_reprojection_errors(M, self.x1, self.x2)

    def mask(self, M):
        return self.residuals(M) < self.thr


def _sampson_weights(F, x1, x2):
    x1h, x2h = _hom(x1), _hom(x2)
    l2 = x1h @ F.T
    l1 = x2h @ F
    g = l2[:, 0] ** 2 + l2[:, 1] ** 2 + l1[:, 0] ** 2 + l1[:, 1] ** 2
    return 1.0 / np.sqrt(np.maximum(g, EPS))


def _local_opt(sc: _Scorer, M, mask, rounds: int):
    """Iterated least squares on the inliers of a loosened threshold that
    shrinks back to the RANSAC one (F refits are Sampson weighted)."""
    best_M, best_mask = M, mask
    cur = M
    # shrinking schedule, then a few rounds at the final threshold
    mults = [2.0 - r / max(rounds - 1, 1) for r in range(rounds)] + [1.0] * rounds
    for mult in mults:
        loose = sc.residuals(cur) < sc.thr * mult
        if loose.sum() < 8:
            break
        try:
            if sc.kind == "Fund":
                w = _sampson_weights(cur, sc.x1[loose], sc.x2[loose])
                cur = fit_fundamental(sc.x1[loose], sc.x2[loose], w / w.max())
            else:
                cur = fit_homography(sc.x1[loose], sc.x2[loose])
        except (GeometryError, np.linalg.LinAlgError):
            break
        m2 = sc.mask(cur)
        if m2.sum() >= best_mask.sum():
            best_M, best_mask = cur, m2
    return best_M, best_mask


def _refit_plane(sc: _Scorer, H, rounds: int = 3):
    """Least-squares H over every correspondence it explains."""
    for _ in range(rounds):
        m = sym_reprojection_errors(H, sc.x1, sc.x2) < sc.thr
        if m.sum() < 4:
            break
        try:
            H2 = fit_homography(sc.x1[m], sc.x2[m])
        except (GeometryError, np.linalg.LinAlgError):
            break
        if (sym_reprojection_errors(H2, sc.x1, sc.x2) < sc.thr).sum() < m.sum():
            break
        H = H2
    return H


def _dominant_plane(sc: _Scorer, mask, rng, frac: float = 0.5, trials: int = 200):
    """Homography explaining at least ``frac`` of the inliers in ``mask``, or None."""
    idx = np.flatnonzero(mask)
    if len(idx) < 8:
        return None
    a, b = sc.x1[idx], sc.x2[idx]
    best, best_n = None, 0
    needed = trials
    t = 0
    while t < min(needed, trials):
        t += 1
        s = rng.choice(len(idx), 4, replace=False)
        try:
            H = estimate_homography_4pt(a[s], b[s])
        except (GeometryError, np.linalg.LinAlgError):
            continue
        n = int((sym_reprojection_errors(H, a, b) < sc.thr).sum())
        if n > best_n:
            best, best_n = H, n
            needed = _n_needed(n, len(idx), 4, 0.99)
    if best is None or best_n < frac * len(idx):
        return None
    return _refit_plane(sc, best)


def _parallax_refine(sc: _Scorer, H, F, mask, rounds: int = 5):
    """Refit only the epipole of F = [e']x H: least-squares intersection of
    the parallax lines (H x) x x' of every off-plane inlier."""
    x1h, x2h = _hom(sc.x1), _hom(sc.x2)
    on = sym_reprojection_errors(H, sc.x1, sc.x2) < sc.thr
    best, best_mask = F, mask
    for _ in range(rounds):
        off = mask & ~on
        if off.sum() < 3:
            break
        lines = np.cross(x1h[off] @ H.T, x2h[off])
        lines /= np.maximum(np.hypot(lines[:, 0], lines[:, 1]), EPS)[:, None]
        e2 = np.linalg.svd(lines)[2][-1]
        G = _skew(e2) @ H
        n = np.linalg.norm(G)
        if n < EPS:
            break
        G = G / n
        m2 = sc.mask(G)
        if m2.sum() < best_mask.sum():
            break
        best, best_mask, mask = G, m2, m2
    return best, best_mask


def _parallax_search(sc: _Scorer, H, rng, conf, max_trials=1000):
    """Best plane-and-parallax F from pairs of points off the plane H."""
    off = np.flatnonzero(sym_reprojection_errors(H, sc.x1, sc.x2) >= sc.thr)
    if len(off) < 2:
        return None, None
    best, best_mask, best_n = None, None, -1
    trials, needed = 0, max_trials
    while trials < min(needed, max_trials):
        trials += 1
        pair = rng.choice(off, 2, replace=False)
        F = f_from_h_and_parallax(H, sc.x1[pair], sc.x2[pair])
        if F is None:
            continue
        mask = sc.mask(F)
        n = int(mask.sum())
        if n > best_n:
            F, mask = _parallax_refine(sc, H, F, mask)
            n = int(mask.sum())
            best, best_mask, best_n = F, mask, n
            n_off = int(mask[off].sum())
            needed = _n_needed(n_off, len(off), 2, conf)
    return best, best_mask


def _hartley_batch(x):
    """Batched Hartley normalisation of (B, k, 2) point sets."""
    c = x.mean(axis=1, keepdims=True)
    d = np.sqrt(((x - c) ** 2).sum(axis=2)).mean(axis=1)
    s = np.where(d > EPS, math.sqrt(2.0) / np.maximum(d, EPS), 1.0)
    T = np.zeros((len(x), 3, 3))
    T[:, 0, 0] = T[:, 1, 1] = s
    T[:, 0, 2] = -s * c[:, 0, 0]
    T[:, 1, 2] = -s * c[:, 0, 1]
    T[:, 2, 2] = 1.0
    return T, (x - c) * s[:, None, None]


def _batch_f7(a, b):
    """7-point solutions for B samples; returns (models (M, 3, 3), sample index (M,))."""
    B = len(a)
    T1, an = _hartley_batch(a)
    T2, bn = _hartley_batch(b)
    A = np.concatenate([bn[:, :, :1] * an, bn[:, :, :1], bn[:, :, 1:] * an, bn[:, :, 1:], an,
                        np.ones((B, 7, 1))], axis=2)
    _, sv, Vt = np.linalg.svd(A, full_matrices=True)
    ok = sv[:, 6] >= 1e-10 * sv[:, 0]
    F1 = Vt[:, 7].reshape(B, 3, 3)
    F2 = Vt[:, 8].reshape(B, 3, 3)
    t = _CUBIC_T[None, :, None, None]
    dets = np.linalg.det(t * F1[:, None] + (1 - t) * F2[:, None])
    coef = dets @ _CUBIC_FIT.T  # (B, 4), highest power first
    lead = np.abs(coef[:, 0]) > EPS * np.abs(coef).max(axis=1)
    ok &= lead
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return np.zeros((0, 3, 3)), np.zeros(0, dtype=int)
    c = coef[idx] / coef[idx, :1]
    comp = np.zeros((len(idx), 3, 3))
    comp[:, 0, :] = -c[:, 1:]
    comp[:, 1, 0] = comp[:, 2, 1] = 1.0
    roots = np.linalg.eigvals(comp)  # (k, 3)
    real = np.abs(roots.imag) <= 1e-8 * np.maximum(1.0, np.abs(roots.real))
    ii, jj = np.nonzero(real)
    if len(ii) == 0:
        return np.zeros((0, 3, 3)), np.zeros(0, dtype=int)
    t = roots.real[ii, jj][:, None, None]
    o = idx[ii]
    F = np.swapaxes(T2[o], 1, 2) @ (t * F1[o] + (1 - t) * F2[o]) @ T1[o]
    nf = np.linalg.norm(F, axis=(1, 2))
    good = nf > EPS
    return F[good] / nf[good, None, None], o[good]


def _batch_h4(a, b):
    """4-point DLT for B samples, skipping collinear ones."""
    B = len(a)

    def collinear(p):
        bad = np.zeros(B, dtype=bool)
        scale = np.maximum(np.ptp(p, axis=1).max(axis=1), EPS) ** 2
        for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            u, v = p[:, j] - p[:, i], p[:, k] - p[:, i]
            bad |= np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) < 1e-9 * scale
        return bad

    keep = np.flatnonzero(~(collinear(a) | collinear(b)))
    if len(keep) == 0:
        return np.zeros((0, 3, 3)), keep
    a, b = a[keep], b[keep]
    T1, an = _hartley_batch(a)
    T2, bn = _hartley_batch(b)
    k = len(keep)
    A = np.zeros((k, 8, 9))
    A[:, 0::2, 0:2] = an
    A[:, 0::2, 2] = 1
    A[:, 0::2, 6:8] = -bn[:, :, :1] * an
    A[:, 0::2, 8] = -bn[:, :, 0]
    A[:, 1::2, 3:5] = an
    A[:, 1::2, 5] = 1
    A[:, 1::2, 6:8] = -bn[:, :, 1:] * an
    A[:, 1::2, 8] = -bn[:, :, 1]
    Hn = np.linalg.svd(A)[2][:, -1].reshape(k, 3, 3)
    H = np.linalg.solve(T2, Hn @ T1)
    h22 = H[:, 2, 2]
    good = (np.abs(h22) > EPS) & (np.abs(np.linalg.det(H)) > EPS * np.abs(H).max(axis=(1, 2)) ** 3)
    H = H[good] / h22[good, None, None]
    return H, keep[good]


def _batch_counts(kind, models, x1h, x2h, thr, chunk_elems=2_000_000):
    """Inlier counts of every model (vectorised residuals)."""
    out = np.empty(len(models), dtype=int)
    n = len(x1h)
    step = max(1, chunk_elems // max(n, 1))
    for s in range(0, len(models), step):
        M = models[s : s + step]
        if kind == "Fund":
            l2 = np.einsum("mij,nj->mni", M, x1h)
            l1 = np.einsum("mji,nj->mni", M, x2h)
            alg = np.abs(np.einsum("mni,ni->mn", l2, x2h))
            n2 = np.hypot(l2[..., 0], l2[..., 1])
            n1 = np.hypot(l1[..., 0], l1[..., 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                r = alg / n2 + alg / n1
        else:
            Minv = np.linalg.inv(M)
            with np.errstate(divide="ignore", invalid="ignore"):
                f = np.einsum("mij,nj->mni", M, x1h)
                f = f[..., :2] / f[..., 2:]
                g = np.einsum("mij,nj->mni", Minv, x2h)
                g = g[..., :2] / g[..., 2:]
                r = np.linalg.norm(f - x2h[None, :, :2], axis=2) + np.linalg.norm(g - x1h[None, :, :2], axis=2)
        out[s : s + step] = np.sum(r < thr, axis=1)  # nan/inf compare False
    return out


def _draw(rng, n, m, B):
    """B index samples of size m without repetition inside a sample."""
    S = rng.integers(0, n, size=(B, m))
    while True:
        srt = np.sort(S, axis=1)
        dup = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
        if not dup.any():
            return S
        S[dup] = rng.integers(0, n, size=(int(dup.sum()), m))


def _ransac(x1, x2, kind: str, cfg: RansacConfig, rng, aux_rng=None, batch: int = 64):
    n = len(x1)
    m = SAMPLE_SIZE[kind]
    aux_rng = aux_rng if aux_rng is not None else rng
    sc = _Scorer(x1, x2, kind, cfg.threshold)
    x1h, x2h = _hom(x1), _hom(x2)
    best_M, best_mask, best_n = None, None, -1
    best_H = None  # plane found by the degeneracy test for the current best
    needed = cfg.max_samples
    it = 0
    while it < min(needed, cfg.max_samples):
        B = int(min(batch, cfg.max_samples - it))
        S = _draw(rng, n, m, B)
        if kind == "Hom":
            models, owner = _batch_h4(x1[S], x2[S])
        else:
            models, owner = _batch_f7(x1[S], x2[S])
        counts = _batch_counts(kind, models, x1h, x2h, cfg.threshold) if len(models) else np.zeros(0, int)
        stop = False
        for j in range(B):
            if it >= min(needed, cfg.max_samples):
                stop = True
                break
            it += 1
            s = S[j]
            for M, cnt in zip(models[owner == j], counts[owner == j]):
                if cnt <= best_n:
                    continue
                mask = sc.mask(M)
                cnt = int(mask.sum())
                plane = None
                if kind == "Fund" and cfg.degensac:
                    plane = check_sample_h_degeneracy(x1[s], x2[s], M, cfg.threshold)
                    if plane is not None:
                        plane = _refit_plane(sc, plane)
                        Fp, mp = _parallax_search(sc, plane, aux_rng, cfg.confidence)
                        if Fp is not None and mp.sum() > cnt:
                            M, mask, cnt = Fp, mp, int(mp.sum())
                M, mask = _local_opt(sc, M, mask, cfg.lo_iterations)
                cnt = int(mask.sum())
                if kind == "Fund" and cfg.degensac and cnt > best_n:
                    # LO can drift into the plane family too: re-test the refined
                    # model, and again after every improvement it yields
                    for _ in range(4):
                        dom = _dominant_plane(sc, mask, aux_rng)
                        if dom is None:
                            break
                        plane = dom
                        Fp, mp = _parallax_search(sc, dom, aux_rng, cfg.confidence)
                        if Fp is None or mp.sum() <= cnt:
                            break
                        M, mask = _local_opt(sc, Fp, mp, cfg.lo_iterations)
                        cnt = int(mask.sum())
                if cnt > best_n:
                    best_M, best_mask, best_n = M, mask, cnt
                    best_H = plane
                    needed = _n_needed(cnt, n, m, cfg.confidence)
        if stop:
            break
    return best_M, best_mask, best_H, it


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError("expected (N, 2) point arrays")
    return x


def ransac_verify(x1, x2, want: str = "Fund", cfg: RansacConfig = RansacConfig()) -> VerificationResult:
    """Verify tentative correspondences given as point arrays (N, 2).

    ``want`` is Fund/F, Hom/H or Auto.  Raises InsufficientTCs or
    VerificationFailed.
    """
    want = WANT.get(want if isinstance(want, str) else getattr(want, "value", want))
    if want is None:
        raise ValueError("wantModel must be one of Fund, Hom, Auto")
    x1, x2 = _as_points(x1), _as_points(x2)
    if len(x1) != len(x2):
        raise ValueError("point arrays differ in length")
    n = len(x1)
    if n < SAMPLE_SIZE["Hom" if want == "Hom" else ("Fund" if want == "Fund" else "Hom")]:
        raise InsufficientTCs()

    results = {}
    kinds = ["Fund", "Hom"] if want == "Auto" else [want]
    if want == "Auto" and n < SAMPLE_SIZE["Fund"]:
        kinds = ["Hom"]
    for kind in kinds:
        if n < SAMPLE_SIZE[kind]:
            raise InsufficientTCs()
        rng = np.random.default_rng(cfg.seed)
        aux = np.random.default_rng([cfg.seed, 1])
        results[kind] = _ransac(x1, x2, kind, cfg, rng, aux)

    def ok(kind):
        M, mask, _, _ = results.get(kind, (None, None, None, 0))
        return M is not None and mask.sum() >= min_inliers(kind)

    samples = sum(r[3] for r in results.values())
    if want == "Auto":
        nF = results["Fund"][1].sum() if ok("Fund") else 0
        nH = results["Hom"][1].sum() if ok("Hom") else 0
        if nF == 0 and nH == 0:
            raise VerificationFailed()
        log.debug("auto: %d F inliers, %d H inliers", nF, nH)
        kind = "Hom" if nH > 0 and nH >= (1 - cfg.auto_h_margin) * nF else "Fund"
    else:
        kind = want
        if not ok(kind):
            raise VerificationFailed()
    M, mask, plane, _ = results[kind]
    if kind == "Hom":
        return VerificationResult(TwoViewModel.homography(M), np.flatnonzero(mask), False, samples)
    if plane is not None:
        # fall back to the plane when fewer than two off-plane inliers support F
        off = mask & (sym_reprojection_errors(plane, x1, x2) >= cfg.threshold)
        if off.sum() < 2:
            hm = sym_reprojection_errors(plane, x1, x2) < cfg.threshold
            if hm.sum() >= min_inliers("Hom"):
                return VerificationResult(TwoViewModel.homography(plane), np.flatnonzero(hm), True, samples)
    return VerificationResult(TwoViewModel.fundamental(M), np.flatnonzero(mask), plane is not None, samples)


def laf_consistency_mask(lafs1, lafs2, model: TwoViewModel, threshold: float) -> np.ndarray:
    """Keep a correspondence iff all three LAF points (center, two axis ends)
    pass the model residual."""
    p1 = laf_points(np.asarray(lafs1, dtype=float).reshape(-1, 2, 3))
    p2 = laf_points(np.asarray(lafs2, dtype=float).reshape(-1, 2, 3))
    n = len(p1)
    if n == 0:
        return np.zeros(0, dtype=bool)
    if math.isinf(threshold):
        return np.ones(n, dtype=bool)
    r = model.residuals(p1.reshape(-1, 2), p2.reshape(-1, 2)).reshape(n, 3)
    return np.all(r < threshold, axis=1)


def laf_consistency_filter(lafs1, lafs2, model: TwoViewModel, threshold: float) -> np.ndarray:
    """Indices of the correspondences passing the LAF check."""
    return np.flatnonzero(laf_consistency_mask(lafs1, lafs2, model, threshold))
