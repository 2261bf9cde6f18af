"""Affine view synthesis (scale / tilt / rotation) and reprojection of detections."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .geometry import transform_lafs
from .imgproc import as_gray, warp_affine

DETECTORS = ("DoG", "Hessian")


@dataclass(frozen=True)
class Tier:
    scale: float = 1.0
    tilts: tuple = (1.0,)
    rotation_step: float = 2.0 * math.pi / 5.0

    def __post_init__(self):
        object.__setattr__(self, "tilts", tuple(float(t) for t in self.tilts))
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not self.tilts or min(self.tilts) < 1.0:
            raise ValueError("tilts must be >= 1")
        if self.rotation_step <= 0:
            raise ValueError("rotation_step must be positive")

    def view_params(self):
        """(scale, tilt, rotation) triples; rotations spaced rotation_step / tilt over [0, pi)."""
        out = []
        for t in self.tilts:
            if t == 1.0:
                out.append((self.scale, 1.0, 0.0))
                continue
            step = self.rotation_step / t
            k = 0
            while k * step < math.pi - 1e-9:
                out.append((self.scale, t, k * step))
                k += 1
        return out


@dataclass(frozen=True)
class ScheduleEntry:
    detectors: tuple = ("DoG",)
    tiers: tuple = (Tier(),)

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "tiers", tuple(self.tiers))
        for d in self.detectors:
            if d not in DETECTORS:
                raise ValueError(f"unknown detector {d!r}")
        if not self.tiers:
            raise ValueError("schedule entry needs at least one tier")

    def view_params(self):
        seen, out = set(), []
        for tier in self.tiers:
            for p in tier.view_params():
                key = view_key(*p)
                if key not in seen:
                    seen.add(key)
                    out.append(p)
        return out


@dataclass(frozen=True)
class SynthSchedule:
    iterations: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "iterations", tuple(self.iterations))
        if not self.iterations:
            raise ValueError("schedule needs at least one iteration")

    @classmethod
    def default(cls) -> "SynthSchedule":
        r2 = math.sqrt(2.0)
        step = 2.0 * math.pi / 5.0
        return cls((
            ScheduleEntry(("DoG", "Hessian"), (Tier(1.0, (1.0,), step),)),
            ScheduleEntry(("DoG", "Hessian"), (Tier(1.0, (1.0, r2, 2.0), step),)),
            ScheduleEntry(("DoG", "Hessian"), (Tier(1.0, (1.0, r2, 2.0, 2 * r2, 4.0), step),
                                               Tier(0.25, (1.0, r2, 2.0, 2 * r2, 4.0), step))),
        ))

    def to_dict(self) -> dict:
        return {"iterations": [
            {"detectors": list(e.detectors),
             "tiers": [{"scale": t.scale, "tilts": list(t.tilts), "rotation_step": t.rotation_step}
                       for t in e.tiers]}
            for e in self.iterations]}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSchedule":
        its = []
        for e in d["iterations"]:
            tiers = tuple(Tier(float(t.get("scale", 1.0)), tuple(t.get("tilts", (1.0,))),
                               float(t.get("rotation_step", 2 * math.pi / 5)))
                          for t in e["tiers"])
            its.append(ScheduleEntry(tuple(e.get("detectors", ("DoG",))), tiers))
        return cls(tuple(its))


def view_key(scale, tilt, rotation):
    return (round(float(scale), 9), round(float(tilt), 9), round(float(rotation), 9))


def view_transform(shape, scale: float, tilt: float, rotation: float):
    """Affine map original -> view and the view size (w, h).

    Linear part is diag(scale, scale / tilt) @ R(rotation); the translation
    puts the warped image corners at the origin.
    """
    h, w = shape
    c, s = math.cos(rotation), math.sin(rotation)
    L = np.diag([scale, scale / tilt]) @ np.array([[c, -s], [s, c]])
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float) @ L.T
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    A = np.eye(3)
    A[:2, :2] = L
    A[:2, 2] = -lo
    size = np.ceil(hi - lo - 1e-9).astype(int) + 1
    return A, int(size[0]), int(size[1])


@dataclass(frozen=True, eq=False)
class SynthView:
    image: np.ndarray
    A: np.ndarray
    tilt: float
    rotation: float
    scale: float
    orig_shape: tuple

    @property
    def key(self):
        return view_key(self.scale, self.tilt, self.rotation)

    @cached_property
    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)

    @cached_property
    def border_distance(self) -> np.ndarray:
        """Distance (view pixels) from each view pixel to the nearest pixel without image support."""
        h, w = self.orig_shape
        if self.tilt == 1.0 and self.rotation == 0.0 and self.scale == 1.0:
            support = np.ones((h, w), dtype=bool)
        else:
            vh, vw = self.image.shape
            ys, xs = np.mgrid[0:vh, 0:vw].astype(float)
            Ai = self.A_inv
            sx = Ai[0, 0] * xs + Ai[0, 1] * ys + Ai[0, 2]
            sy = Ai[1, 0] * xs + Ai[1, 1] * ys + Ai[1, 2]
            support = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
        padded = np.pad(support, 1, constant_values=False)
        return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def make_view(img, scale: float, tilt: float, rotation: float) -> SynthView:
    img = as_gray(img)
    A, w, h = view_transform(img.shape, scale, tilt, rotation)
    if scale == 1.0 and tilt == 1.0 and rotation == 0.0:
        image = img.copy()
    else:
        image = warp_affine(img, A, w, h)
    image.flags.writeable = False
    return SynthView(image, A, float(tilt), float(rotation), float(scale), tuple(img.shape))


def synthesize_views(img, entry: ScheduleEntry, skip=frozenset()) -> list:
    """All views of one schedule entry, except those whose key is in ``skip``."""
    return [make_view(img, *p) for p in entry.view_params() if view_key(*p) not in skip]


def backproject(view: SynthView, lafs, return_index: bool = False):
    """Map view-frame LAFs (N, 2, 3) to the original image; drop centers outside it."""
    lafs = np.asarray(lafs, dtype=float).reshape(-1, 2, 3)
    out = transform_lafs(view.A_inv, lafs)
    h, w = view.orig_shape
    c = out[:, :, 2]
    eps = 1e-6  # round-off of A_inv at the image corners
    keep = (c[:, 0] >= -eps) & (c[:, 0] <= w - 1 + eps) & (c[:, 1] >= -eps) & (c[:, 1] <= h - 1 + eps)
    if return_index:
        return out[keep], np.flatnonzero(keep)
    return out[keep]
