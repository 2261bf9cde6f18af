"""Two-view geometry: models, residuals and local affine frame (LAF) algebra.

Conventions: image points are ``(x, y)`` with ``x`` along columns and ``y``
along rows; pixel centers sit on integer coordinates.  A LAF is a center plus
a 2x2 shape matrix whose columns are the frame's axis vectors.  Batches of
LAFs are stored as ``(N, 2, 3)`` arrays ``[A | c]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

EPS = 1e-12


class GeometryError(ValueError):
    pass


class ModelKind(str, Enum):
    HOM = "Hom"
    FUND = "Fund"


def _point(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(p)):
        raise GeometryError("point must be finite")
    return p


def homogenize(x: np.ndarray) -> np.ndarray:
    """(N, 2) -> (N, 3)."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def dehomogenize(xh: np.ndarray) -> np.ndarray:
    xh = np.asarray(xh, dtype=float)
    return xh[..., :2] / xh[..., 2:3]


def enforce_rank2(F: np.ndarray) -> np.ndarray:
    """Nearest rank-2 matrix in Frobenius norm, scaled to unit norm."""
    U, s, Vt = np.linalg.svd(np.asarray(F, dtype=float))
    if s[1] <= 1e-12 * s[0]:
        raise GeometryError("fundamental matrix has rank < 2")
    s[2] = 0.0
    F2 = U @ np.diag(s) @ Vt
    n = np.linalg.norm(F2)
    if n < EPS:
        raise GeometryError("fundamental matrix has rank < 2")
    return F2 / n


def normalize_homography(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if abs(H[2, 2]) > EPS:
        return H / H[2, 2]
    return H / np.linalg.norm(H)


@dataclass(frozen=True)
class TwoViewModel:
    kind: ModelKind
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise GeometryError("model matrix must be a finite 3x3 array")
        object.__setattr__(self, "kind", ModelKind(self.kind))
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def homography(cls, H) -> "TwoViewModel":
        H = np.asarray(H, dtype=float)
        if abs(np.linalg.det(H)) < EPS * max(1.0, np.abs(H).max() ** 3):
            raise GeometryError("homography is singular")
        return cls(ModelKind.HOM, normalize_homography(H))

    @classmethod
    def fundamental(cls, F) -> "TwoViewModel":
        return cls(ModelKind.FUND, enforce_rank2(F))

    def residuals(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        return model_residuals(self, x1, x2)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TwoViewModel":
        return cls(ModelKind(d["kind"]), np.array(d["matrix"], dtype=float))


# --- residuals -------------------------------------------------------------

def sym_epipolar_distance(F, u, v) -> float:
    """Sum of point-to-epipolar-line distances in both images."""
    F = np.asarray(F, dtype=float)
    uh = np.append(_point(u), 1.0)
    vh = np.append(_point(v), 1.0)
    l2 = F @ uh
    l1 = F.T @ vh
    n2 = np.hypot(l2[0], l2[1])
    n1 = np.hypot(l1[0], l1[1])
    if n1 < EPS or n2 < EPS:
        raise GeometryError("point at epipole")
    return float(abs(vh @ l2) / n2 + abs(uh @ l1) / n1)


def sym_epipolar_distances(F, x1, x2) -> np.ndarray:
    """Vectorised version; points at an epipole get ``inf``."""
    F = np.asarray(F, dtype=float)
    x1h = homogenize(x1)
    x2h = homogenize(x2)
    l2 = x1h @ F.T
    l1 = x2h @ F
    # each term uses its own side's algebraic residual so swapping the images is exact
    a2 = np.abs(np.sum(x2h * l2, axis=1))
    a1 = np.abs(np.sum(x1h * l1, axis=1))
    n2 = np.hypot(l2[:, 0], l2[:, 1])
    n1 = np.hypot(l1[:, 0], l1[:, 1])
    bad = (n1 < EPS) | (n2 < EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = a2 / np.where(bad, 1.0, n2) + a1 / np.where(bad, 1.0, n1)
    d[bad] = np.inf
    return d


def _transfer(H: np.ndarray, p: np.ndarray) -> np.ndarray:
    q = H @ np.append(p, 1.0)
    if abs(q[2]) < EPS:
        raise GeometryError("point at infinity")
    return q[:2] / q[2]


def sym_reprojection_error(H, u, v) -> float:
    """||v - H(u)|| + ||u - H^-1(v)|| in pixels."""
    H = np.asarray(H, dtype=float)
    u = _point(u)
    v = _point(v)
    Hinv = np.linalg.inv(H)
    return float(np.linalg.norm(v - _transfer(H, u)) + np.linalg.norm(u - _transfer(Hinv, v)))


def sym_reprojection_errors(H, x1, x2) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(len(x1), np.inf)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    f = homogenize(x1) @ H.T
    b = homogenize(x2) @ Hinv.T
    bad = (np.abs(f[:, 2]) < EPS) | (np.abs(b[:, 2]) < EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        ef = np.linalg.norm(x2 - f[:, :2] / f[:, 2:3], axis=1)
        eb = np.linalg.norm(x1 - b[:, :2] / b[:, 2:3], axis=1)
    e = ef + eb
    e[bad] = np.inf
    return e


def model_residual(model: TwoViewModel, u, v) -> float:
    if model.kind is ModelKind.HOM:
        return sym_reprojection_error(model.matrix, u, v)
    return sym_epipolar_distance(model.matrix, u, v)


def model_residuals(model: TwoViewModel, x1, x2) -> np.ndarray:
    if model.kind is ModelKind.HOM:
        return sym_reprojection_errors(model.matrix, x1, x2)
    return sym_epipolar_distances(model.matrix, x1, x2)


# --- local affine frames ---------------------------------------------------

@dataclass(frozen=True)
class Laf:
    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2).copy()
        A = np.asarray(self.shape, dtype=float).reshape(2, 2).copy()
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A))):
            raise GeometryError("LAF entries must be finite")
        if np.linalg.det(A) <= 0:
            raise GeometryError("LAF shape must have positive determinant")
        c.flags.writeable = False
        A.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", A)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.shape, self.center[:, None]], axis=1)

    @classmethod
    def from_array(cls, a) -> "Laf":
        a = np.asarray(a, dtype=float)
        return cls(a[:, 2], a[:, :2])


def lafs_to_array(lafs) -> np.ndarray:
    if len(lafs) == 0:
        return np.zeros((0, 2, 3))
    return np.stack([l.as_array() for l in lafs])


def laf_to_point_triple(laf: Laf):
    c = laf.center
    return c.copy(), c + laf.shape[:, 0], c + laf.shape[:, 1]


def laf_points(lafs: np.ndarray) -> np.ndarray:
    """(N, 2, 3) LAFs -> (N, 3, 2): center, center + axis1, center + axis2."""
    lafs = np.asarray(lafs, dtype=float)
    c = lafs[:, :, 2]
    return np.stack([c, c + lafs[:, :, 0], c + lafs[:, :, 1]], axis=1)


def _check_affine(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3) or not np.allclose(A[2], [0.0, 0.0, 1.0], atol=1e-12):
        raise GeometryError("expected a 3x3 affine matrix with last row (0, 0, 1)")
    return A


def transform_laf(A, laf: Laf) -> Laf:
    A = _check_affine(A)
    return Laf(A[:2, :2] @ laf.center + A[:2, 2], A[:2, :2] @ laf.shape)


def transform_lafs(A, lafs: np.ndarray) -> np.ndarray:
    """Apply an affine map to a batch of LAFs stored as (N, 2, 3)."""
    A = _check_affine(A)
    lafs = np.asarray(lafs, dtype=float)
    out = np.einsum("ij,njk->nik", A[:2, :2], lafs)
    out[:, :, 2] += A[:2, 2]
    return out


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def affine(linear, t=(0.0, 0.0)) -> np.ndarray:
    A = np.eye(3)
    A[:2, :2] = linear
    A[:2, 2] = t
    return A


def homography_jacobian(H, x) -> np.ndarray:
    """Jacobian of the projective map x -> pi(H x) at x (2x2)."""
    H = np.asarray(H, dtype=float)
    q = H @ np.append(np.asarray(x, dtype=float), 1.0)
    if abs(q[2]) < EPS:
        raise GeometryError("point at infinity")
    p = q[:2] / q[2]
    return (H[:2, :2] - np.outer(p, H[2, :2])) / q[2]


# --- text format -----------------------------------------------------------

def format_matrix(M) -> str:
    M = np.asarray(M, dtype=float).reshape(3, 3)
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in M) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    vals = text.split()
    if len(vals) != 9:
        raise GeometryError(f"expected 9 numbers, got {len(vals)}")
    return np.array([float(v) for v in vals]).reshape(3, 3)


def write_matrix(path, M) -> None:
    Path(path).write_text(format_matrix(M))


def read_matrix(path) -> np.ndarray:
    return parse_matrix(Path(path).read_text())
