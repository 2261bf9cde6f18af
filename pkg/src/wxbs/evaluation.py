"""Evaluation protocols: matcher recall on annotated correspondences, and the
descriptor precision-recall harness on homography-related pairs."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .geometry import (EPS, GeometryError, ModelKind, TwoViewModel, homography_jacobian, model_residuals,
                       read_matrix)
from .match import NNIndex


class EvalError(ValueError):
    pass


def default_thresholds() -> np.ndarray:
    """0 to 20 px in 0.25 px steps."""
    return np.arange(81) * 0.25


def default_ratio_grid() -> np.ndarray:
    return np.round(np.arange(1, 21) * 0.05, 10)


# --- ground truth ---------------------------------------------------------------

@dataclass
class GroundTruthPair:
    id: str
    image1: str
    image2: str
    category: str
    model_kind: ModelKind
    x1: np.ndarray | None = None  # annotated correspondences, (N, 2) each
    x2: np.ndarray | None = None
    homography: np.ndarray | None = None

    def __post_init__(self):
        self.model_kind = ModelKind(self.model_kind)
        has_c = self.x1 is not None
        has_h = self.homography is not None
        if self.model_kind is ModelKind.FUND and (not has_c or has_h):
            raise EvalError(f"pair {self.id}: Fund pairs need correspondences and no homography")
        if self.model_kind is ModelKind.HOM and (not has_h or has_c):
            raise EvalError(f"pair {self.id}: Hom pairs need a homography and no correspondences")
        if has_c:
            self.x1 = np.asarray(self.x1, dtype=float).reshape(-1, 2)
            self.x2 = np.asarray(self.x2, dtype=float).reshape(-1, 2)
            if len(self.x1) != len(self.x2):
                raise EvalError(f"pair {self.id}: correspondence arrays differ in length")
        if has_h:
            self.homography = np.asarray(self.homography, dtype=float)

    def correspondences(self, shape1=None, step: float = 20.0):
        """Annotated points, or a grid pushed through the GT homography."""
        if self.model_kind is ModelKind.FUND:
            return self.x1, self.x2
        if shape1 is None:
            raise EvalError("image shape needed to build homography correspondences")
        return homography_grid(self.homography, shape1, step)


def homography_grid(H, shape1, step: float = 20.0, shape2=None):
    """Grid points of image 1 and their images under H (inside image 2 if ``shape2``)."""
    h, w = shape1
    ys, xs = np.mgrid[step / 2 : h : step, step / 2 : w : step]
    x1 = np.column_stack([xs.ravel(), ys.ravel()])
    q = np.column_stack([x1, np.ones(len(x1))]) @ np.asarray(H, dtype=float).T
    ok = np.abs(q[:, 2]) > EPS
    x2 = q[ok, :2] / q[ok, 2:]
    x1 = x1[ok]
    if shape2 is not None:
        h2, w2 = shape2
        inb = (x2[:, 0] >= 0) & (x2[:, 0] <= w2 - 1) & (x2[:, 1] >= 0) & (x2[:, 1] <= h2 - 1)
        x1, x2 = x1[inb], x2[inb]
    return x1, x2


def read_gt_csv(path):
    """``x1,y1,x2,y2`` rows, optional header."""
    rows = []
    with open(path, newline="") as f:
        for r in csv.reader(f):
            if not r or r[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in r[:4]])
            except ValueError:
                if rows:
                    raise EvalError(f"{path}: malformed row {r}")
                continue  # header
            if len(rows[-1]) != 4:
                raise EvalError(f"{path}: expected 4 columns")
    if not rows:
        raise EvalError(f"{path}: no correspondences")
    a = np.array(rows)
    return a[:, :2], a[:, 2:]


def load_manifest(path) -> list:
    """JSON array of pairs: id, image1, image2, category, model (Fund|Hom),
    gt (CSV for Fund, 3x3 matrix text file for Hom).  Relative paths resolve
    against the manifest directory."""
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise EvalError(f"{path}: malformed manifest ({e.msg})")
    if not isinstance(data, list) or not data:
        raise EvalError(f"{path}: manifest must be a non-empty JSON array")
    root = os.path.dirname(os.path.abspath(path))
    out = []
    for i, e in enumerate(data):
        try:
            kind = ModelKind(e["model"])
            gt = os.path.join(root, e["gt"])
            pid = str(e.get("id", i))
            im1 = os.path.join(root, e["image1"])
            im2 = os.path.join(root, e["image2"])
            cat = str(e.get("category", "default"))
        except (KeyError, TypeError, ValueError) as err:
            raise EvalError(f"{path}: entry {i} is malformed ({err})")
        if kind is ModelKind.FUND:
            x1, x2 = read_gt_csv(gt)
            out.append(GroundTruthPair(pid, im1, im2, cat, kind, x1, x2))
        else:
            out.append(GroundTruthPair(pid, im1, im2, cat, kind, homography=read_matrix(gt)))
    return out


# --- matcher recall ----------------------------------------------------------------

@dataclass
class RecallCurve:
    thresholds: np.ndarray
    recall: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self.recall = np.asarray(self.recall, dtype=float)
        if self.thresholds.shape != self.recall.shape or self.thresholds.ndim != 1:
            raise EvalError("thresholds and recall must be matching 1-D arrays")
        if np.any(np.diff(self.thresholds) <= 0):
            raise EvalError("thresholds must be strictly ascending")


def pair_recall(x1, x2, model: TwoViewModel | None, thresholds=None, kind=None) -> RecallCurve:
    """Fraction of GT correspondences with model residual strictly below each threshold.

    ``model=None`` (matching failed) gives zero recall.  ``kind``, when
    given, must agree with the model kind.
    """
    th = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=float)
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if len(x1) == 0:
        raise EvalError("empty ground-truth correspondence set")
    if model is None:
        return RecallCurve(th, np.zeros(len(th)))
    if kind is not None and ModelKind(kind) is not model.kind:
        raise EvalError("model kind does not match the ground-truth pair")
    e = model_residuals(model, x1, x2)
    # count of e < t for every t, via sorting
    cnt = np.searchsorted(np.sort(e), th, side="left")
    return RecallCurve(th, cnt / len(e))


def category_recall(curves: list) -> RecallCurve:
    """Per-threshold mean of the pair curves."""
    if not curves:
        raise EvalError("no curves to aggregate")
    th = curves[0].thresholds
    for c in curves[1:]:
        if c.thresholds.shape != th.shape or not np.array_equal(c.thresholds, th):
            raise EvalError("curves use different threshold grids")
    return RecallCurve(th, np.mean([c.recall for c in curves], axis=0))


# --- descriptor harness -------------------------------------------------------------

def desc_eval_prepare(H, lafs1, shape2, margin: float = 20.0):
    """Map image-1 LAFs through H with its local affine approximation and keep
    the ones whose mapped center lies inside image 2 (minus ``margin``).

    Returns (lafs1, lafs2) as (M, 2, 3) arrays.
    """
    H = np.asarray(H, dtype=float)
    lafs1 = np.asarray(lafs1, dtype=float).reshape(-1, 2, 3)
    h2, w2 = shape2
    keep, out = [], []
    for i, l in enumerate(lafs1):
        c = l[:, 2]
        q = H @ np.append(c, 1.0)
        if abs(q[2]) < EPS:
            continue
        c2 = q[:2] / q[2]
        if not (margin <= c2[0] <= w2 - 1 - margin and margin <= c2[1] <= h2 - 1 - margin):
            continue
        try:
            J = homography_jacobian(H, c)
        except GeometryError:
            continue
        m = np.empty((2, 3))
        m[:, :2] = J @ l[:, :2]
        m[:, 2] = c2
        keep.append(i)
        out.append(m)
    if not keep:
        return np.zeros((0, 2, 3)), np.zeros((0, 2, 3))
    return lafs1[keep], np.stack(out)


@dataclass
class PRCurve:
    ratio: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    mAP: float
    correct: frozenset = field(default_factory=frozenset)  # pair indices matched correctly at the loosest ratio


def pr_from_descriptors(d1, d2, ratio_grid=None) -> PRCurve:
    """NN matching of row i of ``d1`` into ``d2``; correct iff it hits row i.

    A match is accepted at ratio threshold r when its second-NN ratio is <= r.
    Precision of an empty acceptance set is 1 (nothing wrong yet).
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if len(d1) < 2 or len(d1) != len(d2):
        raise EvalError("need at least 2 paired descriptors")
    grid = default_ratio_grid() if ratio_grid is None else np.sort(np.asarray(ratio_grid, dtype=float))
    d, idx = NNIndex(d2).knn(d1, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d[:, 1] > 0, d[:, 0] / np.where(d[:, 1] > 0, d[:, 1], 1.0), 1.0)
    correct = idx[:, 0] == np.arange(len(d1))
    n = len(d1)
    prec, rec = [], []
    for r in grid:
        acc = ratio <= r
        na = int(acc.sum())
        nc = int((acc & correct).sum())
        prec.append(nc / na if na else 1.0)
        rec.append(nc / n)
    prec, rec = np.array(prec), np.array(rec)
    loosest = ratio <= grid[-1]
    return PRCurve(grid, prec, rec, average_precision(prec, rec),
                   frozenset(np.flatnonzero(correct & loosest).tolist()))


def average_precision(precision, recall) -> float:
    """Trapezoidal area under the PR points, anchored at recall 0 with the first precision."""
    p = np.asarray(precision, dtype=float)
    r = np.asarray(recall, dtype=float)
    if len(p) == 0:
        return 0.0
    o = np.lexsort((-p, r))
    r = np.concatenate([[0.0], r[o]])
    p = np.concatenate([[p[o][0]], p[o]])
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))


def desc_precision_recall(lafs1, lafs2, img1, img2, kind, ratio_grid=None) -> PRCurve:
    """Describe both sides of every GT pair with ``kind`` and build the PR curve."""
    from .descr import describe
    from .imgproc import sample_patches

    lafs1 = np.asarray(lafs1, dtype=float).reshape(-1, 2, 3)
    lafs2 = np.asarray(lafs2, dtype=float).reshape(-1, 2, 3)
    if len(lafs1) < 2:
        raise EvalError("need at least 2 GT pairs")
    d1 = describe(sample_patches(img1, lafs1), kind)
    d2 = describe(sample_patches(img2, lafs2), kind)
    ok = np.all(np.isfinite(d1), axis=1) & np.all(np.isfinite(d2), axis=1)
    d1[~ok] = 0.0
    d2[~ok] = 0.0
    return pr_from_descriptors(d1, d2, ratio_grid)


def complementarity_pairs(results: dict) -> list:
    """(name_a, name_b, union size) for every descriptor pair, best first."""
    if len(results) < 2:
        raise EvalError("need at least two descriptor result sets")
    out = [(a, b, len(set(results[a]) | set(results[b]))) for a, b in combinations(sorted(results), 2)]
    out.sort(key=lambda t: (-t[2], t[0], t[1]))
    return out


# --- output ---------------------------------------------------------------------------

def write_curves_csv(path, thresholds, columns: dict) -> None:
    """One row per threshold, one column per named curve."""
    names = list(columns)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["threshold"] + names)
        for i, t in enumerate(thresholds):
            wr.writerow([f"{t:.4f}"] + [f"{columns[n][i]:.6f}" for n in names])


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def svg_plot(curves: dict, xlabel: str, ylabel: str, title: str = "", xmax: float | None = None,
             width: int = 480, height: int = 360) -> str:
    """Minimal deterministic line chart; ``curves`` maps name -> (x, y)."""
    ml, mr, mt, mb = 56, 120, 28, 44
    pw, ph = width - ml - mr, height - mt - mb
    xs = [np.asarray(x, dtype=float) for x, _ in curves.values()]
    xmax = xmax if xmax is not None else max((float(x.max()) for x in xs if len(x)), default=1.0) or 1.0

    def px(x):
        return ml + pw * x / xmax

    def py(y):
        return mt + ph * (1.0 - y)

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(6):
        y = k / 5
        lines.append(f'<text x="{ml - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.1f}</text>')
        x = xmax * k / 5
        lines.append(f'<text x="{px(x):.1f}" y="{mt + ph + 16}" text-anchor="middle">{x:g}</text>')
    lines.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{_esc(xlabel)}</text>')
    lines.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>')
    if title:
        lines.append(f'<text x="{ml + pw / 2:.1f}" y="18" text-anchor="middle">{_esc(title)}</text>')
    for i, (name, (x, y)) in enumerate(curves.items()):
        col = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(np.asarray(x, float), np.asarray(y, float)))
        lines.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 14 + 16 * i
        lines.append(f'<line x1="{ml + pw + 8}" y1="{ly - 4}" x2="{ml + pw + 24}" y2="{ly - 4}" stroke="{col}" stroke-width="2"/>')
        lines.append(f'<text x="{ml + pw + 28}" y="{ly}">{_esc(name)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _esc(s) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
