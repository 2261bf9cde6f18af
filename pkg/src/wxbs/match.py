"""Tentative correspondences: exact k-NN, the first-geometrically-inconsistent
nearest neighbour (FGINN) ratio test, and duplicate filtering."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .descr import DescKind
from .geometry import Laf


class MatchError(ValueError):
    pass


@dataclass(frozen=True)
class MatchConfig:
    radius: float = 10.0  # FGINN inconsistency radius, px
    max_ratio: float = 0.8
    k: int = 50  # neighbour scan cap
    dedup_radius: float = 3.0
    backend: str = "brute"  # or "kdtree"; both exact

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0.0 < self.max_ratio < 1.0:
            raise ValueError("max_ratio must lie in (0, 1)")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.backend not in ("brute", "kdtree"):
            raise ValueError(f"unknown NN backend {self.backend!r}")


@dataclass
class FeatureSet:
    """Features of one channel (detector x descriptor) of one image.

    ``lafs`` are in original-image coordinates, ``views`` index the synthesized
    view each feature was detected in.
    """
    lafs: np.ndarray
    desc: np.ndarray
    views: np.ndarray
    detector: str = "DoG"
    kind: DescKind = DescKind.ROOT_SIFT

    def __post_init__(self):
        self.lafs = np.asarray(self.lafs, dtype=float).reshape(-1, 2, 3)
        self.desc = np.asarray(self.desc, dtype=float)
        if self.desc.ndim != 2:
            self.desc = self.desc.reshape(len(self.lafs), -1)
        self.views = np.asarray(self.views, dtype=int).reshape(-1)
        self.kind = DescKind(self.kind)
        if not (len(self.lafs) == len(self.desc) == len(self.views)):
            raise MatchError("lafs, descriptors and view ids must have equal length")

    @property
    def channel(self):
        return (self.detector, self.kind.value)

    @property
    def centers(self) -> np.ndarray:
        return self.lafs[:, :, 2]

    def __len__(self):
        return len(self.lafs)

    def record(self, i: int) -> "FeatureRecord":
        return FeatureRecord(Laf.from_array(self.lafs[i]), self.desc[i], self.channel, int(self.views[i]))

    @classmethod
    def concat(cls, sets: list) -> "FeatureSet":
        if not sets:
            raise MatchError("nothing to concatenate")
        if len({s.channel for s in sets}) != 1:
            raise MatchError("cannot mix channels in one feature set")
        return cls(np.concatenate([s.lafs for s in sets]), np.concatenate([s.desc for s in sets]),
                   np.concatenate([s.views for s in sets]), sets[0].detector, sets[0].kind)


@dataclass(frozen=True)
class FeatureRecord:
    laf: Laf
    descriptor: np.ndarray
    channel: tuple
    view_id: int = 0


@dataclass(frozen=True)
class Correspondence:
    a: FeatureRecord
    b: FeatureRecord
    distance: float
    ratio: float


# --- nearest neighbours ------------------------------------------------------

class NNIndex:
    """Exact k-NN under L2.  ``brute`` uses chunked BLAS distances with an exact
    re-ranking of the short list; ``kdtree`` uses scipy's cKDTree."""

    def __init__(self, data, backend: str = "brute"):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or len(data) == 0:
            raise MatchError("index needs at least one descriptor of uniform dimension")
        if not np.all(np.isfinite(data)):
            raise MatchError("descriptors must be finite")
        self.data = data
        self.backend = backend
        self._tree = cKDTree(data) if backend == "kdtree" else None
        self._data32 = data.astype(np.float32)
        self._sq32 = np.einsum("ij,ij->i", self._data32, self._data32)

    def __len__(self):
        return len(self.data)

    def knn(self, queries, k: int, chunk: int = 2048):
        """Distances and indices (Q, min(k, N)), sorted by (distance, index)."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        if q.shape[1] != self.data.shape[1]:
            raise MatchError("query dimension does not match the index")
        n = len(self.data)
        k = min(k, n)
        if self._tree is not None:
            d, i = self._tree.query(q, k=k)
            d, i = d.reshape(len(q), k), i.reshape(len(q), k)
            return self._rerank(q, i, k)
        m = min(n, k + 8)
        out_i = np.empty((len(q), m), dtype=int)
        q32 = q.astype(np.float32)
        for s in range(0, len(q), chunk):
            qc = q32[s : s + chunk]
            d2 = self._sq32[None, :] - 2.0 * (qc @ self._data32.T)
            if m < n:
                part = np.argpartition(d2, m - 1, axis=1)[:, :m]
            else:
                part = np.broadcast_to(np.arange(n), (len(qc), n))
            out_i[s : s + chunk] = part
        return self._rerank(q, out_i, k)

    def _rerank(self, q, cand, k):
        diff = self.data[cand] - q[:, None, :]
        d = np.sqrt(np.einsum("qkd,qkd->qk", diff, diff))
        order = _sort_rows(d, cand)[:, :k]
        rows = np.arange(len(q))[:, None]
        return d[rows, order], cand[rows, order]


def _sort_rows(d, idx):
    # ascending distance, ties by index
    order = np.argsort(idx, axis=1, kind="stable")
    d2 = np.take_along_axis(d, order, axis=1)
    o2 = np.argsort(d2, axis=1, kind="stable")
    return np.take_along_axis(order, o2, axis=1)


def build_index(features, backend: str = "brute") -> NNIndex:
    """Index over a FeatureSet, a list of FeatureRecords or a raw (N, D) array."""
    if isinstance(features, FeatureSet):
        return NNIndex(features.desc, backend)
    if len(features) and isinstance(features[0], FeatureRecord):
        dims = {np.asarray(f.descriptor).shape for f in features}
        if len(dims) != 1:
            raise MatchError("mixed descriptor dimensions")
        return NNIndex(np.stack([f.descriptor for f in features]), backend)
    return NNIndex(features, backend)


def fginn(queries, index: NNIndex, centers2, radius: float = 10.0, k: int = 50):
    """Vectorised FGINN.

    Returns (nn index, nn distance, distance to the first neighbour whose
    center is >= radius from the nearest one (inf if none in the top k),
    ratio).  ``centers2`` are the image-2 centers of the indexed features.
    """
    d, idx = index.knn(queries, k)
    c = np.asarray(centers2, dtype=float)[idx]
    far = np.linalg.norm(c - c[:, :1], axis=2) >= radius
    far[:, 0] = False
    has = far.any(axis=1)
    first = np.argmax(far, axis=1)
    rows = np.arange(len(d))
    dk = np.where(has, d[rows, first], np.inf)
    d1 = d[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.isinf(dk), 0.0, np.where(dk > 0, d1 / np.where(dk > 0, dk, 1.0), 1.0))
    return idx[:, 0], d1, dk, ratio


def fginn_match(q: FeatureRecord, index: NNIndex, records: list, radius: float = 10.0,
                max_ratio: float = 0.8, k: int = 50):
    """Single-query FGINN; returns a Correspondence or None."""
    centers = np.array([r.laf.center for r in records])
    nn, d1, _, ratio = fginn(np.asarray(q.descriptor)[None], index, centers, radius, k)
    if not ratio[0] < max_ratio:
        return None
    return Correspondence(q, records[int(nn[0])], float(d1[0]), float(ratio[0]))


# --- tentative correspondence sets ---------------------------------------------

@dataclass
class Matches:
    """Columnar list of tentative correspondences."""
    lafs1: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    lafs2: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    distance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ratio: np.ndarray = field(default_factory=lambda: np.zeros(0))
    detector: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    descriptor: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    view1: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    view2: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return len(self.ratio)

    @property
    def xy1(self) -> np.ndarray:
        return self.lafs1[:, :, 2]

    @property
    def xy2(self) -> np.ndarray:
        return self.lafs2[:, :, 2]

    def subset(self, idx) -> "Matches":
        return Matches(self.lafs1[idx], self.lafs2[idx], self.distance[idx], self.ratio[idx],
                       self.detector[idx], self.descriptor[idx], self.view1[idx], self.view2[idx])

    def __getitem__(self, i: int) -> Correspondence:
        ch = (self.detector[i], self.descriptor[i])
        a = FeatureRecord(Laf.from_array(self.lafs1[i]), None, ch, int(self.view1[i]))
        b = FeatureRecord(Laf.from_array(self.lafs2[i]), None, ch, int(self.view2[i]))
        return Correspondence(a, b, float(self.distance[i]), float(self.ratio[i]))

    @classmethod
    def concat(cls, parts: list) -> "Matches":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("lafs1", "lafs2", "distance", "ratio", "detector", "descriptor", "view1", "view2")))

    @classmethod
    def from_points(cls, x1, x2, ratio=None) -> "Matches":
        """Point-only correspondences (identity LAF shapes), handy for estimation."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        n = len(x1)
        l1 = np.zeros((n, 2, 3))
        l2 = np.zeros((n, 2, 3))
        l1[:, :, :2] = l2[:, :, :2] = np.eye(2)
        l1[:, :, 2] = x1
        l2[:, :, 2] = x2
        r = np.zeros(n) if ratio is None else np.asarray(ratio, dtype=float)
        return cls(l1, l2, np.zeros(n), r, np.full(n, "", dtype=object), np.full(n, "", dtype=object),
                   np.zeros(n, dtype=int), np.zeros(n, dtype=int))

    def sorted(self) -> "Matches":
        """Order by (detector, descriptor, ratio, x1, y1)."""
        if not len(self):
            return self
        keys = (self.xy1[:, 1], self.xy1[:, 0], self.ratio, self.descriptor.astype(str), self.detector.astype(str))
        return self.subset(np.lexsort(keys))


def generate_tentative(f1: dict, f2: dict, cfg: MatchConfig = MatchConfig()) -> Matches:
    """FGINN matching per channel; ``f1``/``f2`` map channel -> FeatureSet."""
    parts = []
    for ch in sorted(set(f1) & set(f2)):
        a, b = f1[ch], f2[ch]
        if len(a) == 0 or len(b) == 0:
            continue
        index = NNIndex(b.desc, cfg.backend)
        nn, d1, _, ratio = fginn(a.desc, index, b.centers, cfg.radius, cfg.k)
        ok = np.flatnonzero(ratio < cfg.max_ratio)
        n = len(ok)
        parts.append(Matches(a.lafs[ok], b.lafs[nn[ok]], d1[ok], ratio[ok],
                             np.full(n, a.detector, dtype=object), np.full(n, a.kind.value, dtype=object),
                             a.views[ok], b.views[nn[ok]]))
    return Matches.concat(parts).sorted()


def filter_duplicates(m: Matches, radius: float = 3.0) -> Matches:
    """Greedy duplicate removal in ascending-ratio order.

    A correspondence is dropped when an already kept one has both endpoints
    closer than ``radius``.
    """
    if radius <= 0:
        raise MatchError("radius must be positive")
    n = len(m)
    if n == 0:
        return m
    order = np.argsort(m.ratio, kind="stable")
    p1, p2 = m.xy1, m.xy2
    cells = np.floor(p1 / radius).astype(np.int64)
    grid: dict = {}
    keep = []
    r2 = radius * radius
    for i in order:
        cx, cy = cells[i]
        dup = False
        for gx in (cx - 1, cx, cx + 1):
            for gy in (cy - 1, cy, cy + 1):
                for j in grid.get((gx, gy), ()):
                    d1 = p1[i] - p1[j]
                    d2 = p2[i] - p2[j]
                    if d1 @ d1 < r2 and d2 @ d2 < r2:
                        dup = True
                        break
                if dup:
                    break
            if dup:
                break
        if not dup:
            keep.append(i)
            grid.setdefault((cx, cy), []).append(i)
    return m.subset(np.sort(np.array(keep, dtype=int)))


CSV_HEADER = ["x1", "y1", "x2", "y2", "distance", "ratio", "detector", "descriptor", "view1", "view2"]


def write_matches_csv(path, m: Matches) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for i in range(len(m)):
            wr.writerow([f"{m.xy1[i, 0]:.6f}", f"{m.xy1[i, 1]:.6f}", f"{m.xy2[i, 0]:.6f}", f"{m.xy2[i, 1]:.6f}",
                         f"{m.distance[i]:.8f}", f"{m.ratio[i]:.8f}", m.detector[i], m.descriptor[i],
                         int(m.view1[i]), int(m.view2[i])])


def read_matches_csv(path) -> Matches:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return Matches()
    x1 = np.array([[float(r["x1"]), float(r["y1"])] for r in rows])
    x2 = np.array([[float(r["x2"]), float(r["y2"])] for r in rows])
    m = Matches.from_points(x1, x2, [float(r["ratio"]) for r in rows])
    m.distance = np.array([float(r["distance"]) for r in rows])
    m.detector = np.array([r["detector"] for r in rows], dtype=object)
    m.descriptor = np.array([r["descriptor"] for r in rows], dtype=object)
    m.view1 = np.array([int(r["view1"]) for r in rows])
    m.view2 = np.array([int(r["view2"]) for r in rows])
    return m
