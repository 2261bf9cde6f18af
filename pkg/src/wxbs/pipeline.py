"""Iterative matcher: synthesize views, detect, describe, match, verify, and
repeat with a richer view set until enough verified correspondences exist."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .descr import DescKind, describe, gradient_histograms, finalize_root, finalize_sift, inv_sift_reorder_array
from .detect import DetectorConfig, detect_keypoints, keypoints_to_lafs, orient_keypoints
from .geometry import TwoViewModel
from .imgproc import MR_SCALE, PATCH_SIZE, as_gray, sample_patches
from .match import FeatureSet, MatchConfig, Matches, filter_duplicates, generate_tentative
from .verify import (SAMPLE_SIZE, WANT, RansacConfig, VerificationError, laf_consistency_mask,
                     ransac_verify)
from .viewsynth import SynthSchedule, SynthView, backproject, make_view, view_key

log = logging.getLogger(__name__)

DEFAULT_DESCRIPTORS = (DescKind.ROOT_SIFT.value, DescKind.HALF_ROOT_SIFT.value)


@dataclass
class MatcherConfig:
    schedule: SynthSchedule = field(default_factory=SynthSchedule.default)
    theta_m: int = 15
    s_max: int = 3
    detectors: dict = field(default_factory=lambda: {k: DetectorConfig.default(k) for k in ("DoG", "Hessian")})
    descriptors: tuple = DEFAULT_DESCRIPTORS
    match: MatchConfig = field(default_factory=MatchConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    want_model: str = "Auto"
    laf_threshold: float | None = None  # None: 3x the RANSAC threshold
    view_budget: bool = True  # scale the per-view feature quota and cap by view area
    threads: int = 1

    def __post_init__(self):
        self.want_model = WANT.get(self.want_model)
        if self.want_model is None:
            raise ValueError("want_model must be Fund, Hom or Auto")
        self.descriptors = tuple(DescKind(d).value for d in self.descriptors)
        if not self.descriptors:
            raise ValueError("at least one descriptor kind is required")
        if self.s_max < 1:
            raise ValueError("s_max must be >= 1")
        m = SAMPLE_SIZE["Hom" if self.want_model == "Hom" else "Fund" if self.want_model == "Fund" else "Hom"]
        if self.theta_m < m:
            raise ValueError("theta_m must be at least the minimal sample size")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def laf_thr(self) -> float:
        return 3.0 * self.ransac.threshold if self.laf_threshold is None else self.laf_threshold

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "theta_m": self.theta_m,
            "s_max": self.s_max,
            "detectors": {k: _dc_dict(v) for k, v in self.detectors.items()},
            "descriptors": list(self.descriptors),
            "match": _dc_dict(self.match),
            "ransac": _dc_dict(self.ransac),
            "want_model": self.want_model,
            "laf_threshold": self.laf_threshold,
            "view_budget": self.view_budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatcherConfig":
        known = {"schedule", "theta_m", "s_max", "detectors", "descriptors", "match", "ransac",
                 "want_model", "laf_threshold", "view_budget", "threads"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        kw = {}
        if "schedule" in d:
            kw["schedule"] = SynthSchedule.from_dict(d["schedule"])
        if "detectors" in d:
            kw["detectors"] = {k: replace(DetectorConfig.default(k), **v) for k, v in d["detectors"].items()}
        if "match" in d:
            kw["match"] = MatchConfig(**d["match"])
        if "ransac" in d:
            kw["ransac"] = RansacConfig(**d["ransac"])
        if "descriptors" in d:
            kw["descriptors"] = tuple(d["descriptors"])
        for k in ("theta_m", "s_max", "want_model", "laf_threshold", "view_budget", "threads"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "MatcherConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _dc_dict(obj) -> dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


@dataclass
class IterationStats:
    iteration: int
    view_count: tuple  # views per image
    feature_counts: dict  # channel -> (n1, n2)
    tc_count: int
    inlier_count: int
    elapsed: float = 0.0

    def to_dict(self, timings: bool = False) -> dict:
        d = {"iteration": self.iteration, "view_count": list(self.view_count),
             "feature_counts": {f"{a}/{b}": list(v) for (a, b), v in sorted(self.feature_counts.items())},
             "tc_count": self.tc_count, "inlier_count": self.inlier_count}
        if timings:
            d["elapsed"] = round(self.elapsed, 3)
        return d


@dataclass
class MatchReport:
    model: TwoViewModel | None
    correspondences: Matches
    per_iteration: list
    succeeded: bool
    degenerate: bool = False

    @property
    def inlier_count(self) -> int:
        return len(self.correspondences)

    def to_dict(self, timings: bool = False) -> dict:
        return {"succeeded": self.succeeded,
                "model": None if self.model is None else self.model.to_dict(),
                "degenerate": self.degenerate,
                "inlier_count": self.inlier_count,
                "iterations": [s.to_dict(timings) for s in self.per_iteration]}

    def to_json(self, timings: bool = False) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True) + "\n"


# --- description ------------------------------------------------------------

def fold_half(lafs: np.ndarray) -> np.ndarray:
    """Rotate frames by pi where needed so the first axis points into [0, pi)."""
    lafs = np.array(lafs, dtype=float).reshape(-1, 2, 3)
    th = np.arctan2(lafs[:, 1, 0], lafs[:, 0, 0])
    flip = (th < 0) | (th >= math.pi)
    lafs[flip, :, :2] *= -1
    return lafs


def _octave_choice(lafs, n_oct, mr_scale, size):
    # base pixels per patch pixel along the longer frame axis
    scale = np.sqrt(np.abs(np.linalg.det(lafs[:, :, :2])))
    axis = np.linalg.norm(lafs[:, :, :2], axis=1).max(axis=1)
    spacing = 2.0 * mr_scale * np.minimum(scale, axis) / (size - 1)
    o = np.floor(np.log2(np.maximum(spacing, 1.0))).astype(int)
    return np.clip(o, 0, n_oct - 1)


def sample_view_patches(image, lafs, pyramid=None, mr_scale: float = MR_SCALE, size: int = PATCH_SIZE):
    """Patches for view-frame LAFs, taken from the pyramid octave whose
    resolution matches the patch sampling step (avoids aliasing on large
    features); plain image sampling when no pyramid is given."""
    lafs = np.asarray(lafs, dtype=float).reshape(-1, 2, 3)
    if pyramid is None or len(lafs) == 0:
        return sample_patches(image, lafs, mr_scale, size)
    out = np.empty((len(lafs), size, size))
    o = _octave_choice(lafs, len(pyramid.octaves), mr_scale, size)
    for k in np.unique(o):
        sel = np.flatnonzero(o == k)
        oc = pyramid.octaves[k]
        out[sel] = sample_patches(oc.levels[0], lafs[sel] / oc.step, mr_scale, size)
    return out


def describe_lafs(patches, kinds) -> tuple[dict, np.ndarray]:
    """Descriptors of every kind for a patch stack; second value flags
    gradient-free (degenerate) patches."""
    out = {}
    full = half = None
    for kind in kinds:
        kind = DescKind(kind)
        if kind.half:
            if half is None:
                half = gradient_histograms(patches, half=True)
            h = half
        elif kind is not DescKind.RAW_PIXELS:
            if full is None:
                full = gradient_histograms(patches, half=False)
            h = full
        if kind is DescKind.RAW_PIXELS:
            out[kind.value] = describe(patches, kind)
        elif kind in (DescKind.ROOT_SIFT, DescKind.HALF_ROOT_SIFT):
            out[kind.value] = finalize_root(h)
        elif kind is DescKind.INV_SIFT:
            out[kind.value] = inv_sift_reorder_array(finalize_sift(h))
        else:
            out[kind.value] = finalize_sift(h)
    bad = np.zeros(len(patches), dtype=bool)
    for v in out.values():
        bad |= ~np.any(v, axis=1) | ~np.all(np.isfinite(v), axis=1)
    return out, bad


def describe_features(view: SynthView, lafs, kinds=DEFAULT_DESCRIPTORS, pyramid=None, detector: str = "DoG",
                      view_id: int = 0):
    """Describe view-frame LAFs with every requested kind.

    Half-orientation kinds use the pi-folded frame.  Returns
    ({kind: FeatureSet in original coordinates}, counters).
    """
    lafs = np.asarray(lafs, dtype=float).reshape(-1, 2, 3)
    kinds = tuple(DescKind(k).value for k in kinds)
    sets, stats = {}, {"input": len(lafs), "degenerate": 0, "border": 0}
    groups = {}
    for k in kinds:
        groups.setdefault(DescKind(k).half, []).append(k)
    for half, ks in sorted(groups.items()):
        fl = fold_half(lafs) if half else lafs
        orig, keep = backproject(view, fl, return_index=True)
        stats["border"] = len(lafs) - len(keep)
        patches = sample_view_patches(view.image, fl[keep], pyramid)
        desc, bad = describe_lafs(patches, ks)
        stats["degenerate"] = int(bad.sum())
        good = ~bad
        for k in ks:
            sets[k] = FeatureSet(orig[good], desc[k][good], np.full(int(good.sum()), view_id), detector, k)
    return sets, stats


# --- per-image state --------------------------------------------------------

class _ImageState:
    """Views and features of one image, accumulated over iterations."""

    def __init__(self, img):
        self.img = as_gray(img)
        self.views: dict = {}  # view key -> (id, SynthView)
        self.done: set = set()  # (view key, detector)
        self.parts: dict = {}  # channel -> list of FeatureSet

    def view(self, params):
        key = view_key(*params)
        if key not in self.views:
            self.views[key] = (len(self.views), make_view(self.img, *params))
        return self.views[key]

    def features(self) -> dict:
        return {ch: FeatureSet.concat(p) for ch, p in self.parts.items() if p}


def _budget(cfg: DetectorConfig, view: SynthView, enabled: bool) -> DetectorConfig:
    if not enabled:
        return cfg
    # the view holds scale^2 / tilt of the original image's content
    n = max(50, int(round(cfg.min_features * view.scale**2 / view.tilt)))
    return replace(cfg, min_features=n, max_features=n)


def _process_view(view: SynthView, view_id: int, detector: str, cfg: MatcherConfig):
    dcfg = _budget(cfg.detectors[detector], view, cfg.view_budget)
    if min(view.image.shape) < 32:
        return {}
    bd = None if (view.tilt == 1.0 and view.rotation == 0.0 and view.scale == 1.0) else view.border_distance
    ks, pyr = detect_keypoints(view.image, dcfg, detector, border_distance=bd)
    idx, ori = orient_keypoints(ks, pyr)
    lafs = keypoints_to_lafs(ks, idx, ori)
    sets, _ = describe_features(view, lafs, cfg.descriptors, pyr, detector, view_id)
    return sets


def _extend(states, entry, cfg: MatcherConfig, pool):
    jobs = []
    for si, st in enumerate(states):
        for params in entry.view_params():
            vid, view = st.view(params)
            for det in entry.detectors:
                if (view.key, det) in st.done:
                    continue
                st.done.add((view.key, det))
                jobs.append((si, view, vid, det))
    run = (lambda j: _process_view(j[1], j[2], j[3], cfg))
    results = list(pool.map(run, jobs)) if pool is not None else [run(j) for j in jobs]
    for (si, _, _, det), sets in zip(jobs, results):
        for kind, fs in sets.items():
            states[si].parts.setdefault((det, kind), []).append(fs)


def _verify(tcs: Matches, cfg: MatcherConfig):
    """RANSAC on the TCs, then the LAF check; returns (result or None, kept indices)."""
    try:
        res = ransac_verify(tcs.xy1, tcs.xy2, cfg.want_model, cfg.ransac)
    except VerificationError as e:
        log.info("verification: %s", e)
        return None, np.zeros(0, dtype=int)
    inl = res.inliers
    ok = laf_consistency_mask(tcs.lafs1[inl], tcs.lafs2[inl], res.model, cfg.laf_thr)
    return res, inl[ok]


def match_pair(img1, img2, cfg: MatcherConfig | None = None) -> MatchReport:
    """Match two grayscale images with the iterative view-synthesis scheme."""
    cfg = cfg or MatcherConfig()
    states = [_ImageState(img1), _ImageState(img2)]
    for st in states:
        if min(st.img.shape) < 32:
            raise ValueError("images must be at least 32x32")
    stats, best = [], (None, Matches(), False)
    n_iter = min(cfg.s_max, len(cfg.schedule.iterations))
    succeeded = False
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for it in range(n_iter):
            t0 = time.perf_counter()
            _extend(states, cfg.schedule.iterations[it], cfg, pool)
            f1, f2 = states[0].features(), states[1].features()
            tcs = filter_duplicates(generate_tentative(f1, f2, cfg.match), cfg.match.dedup_radius)
            res, kept = _verify(tcs, cfg) if len(tcs) else (None, np.zeros(0, dtype=int))
            n = len(kept)
            chans = sorted(set(f1) | set(f2))
            fc = {ch: (len(f1[ch]) if ch in f1 else 0, len(f2[ch]) if ch in f2 else 0) for ch in chans}
            stats.append(IterationStats(it + 1, (len(states[0].views), len(states[1].views)), fc, len(tcs), n,
                                        time.perf_counter() - t0))
            log.info("iteration %d: %d TCs, %d verified", it + 1, len(tcs), n)
            if res is not None and n >= len(best[1]):
                best = (res.model, tcs.subset(kept), res.degenerate)
            if n >= cfg.theta_m:
                succeeded = True
                best = (res.model, tcs.subset(kept), res.degenerate)
                break
    finally:
        if pool is not None:
            pool.shutdown()
    model, corr, deg = best
    return MatchReport(model, corr, stats, succeeded, deg)


def default_threads() -> int:
    env = os.environ.get("WXBS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1
