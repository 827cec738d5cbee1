"""Model families, data points and their quasiconvex residuals.

Every residual handled by rfit is written in one fractional form

    r(x) = ||A x + b||_2 / (c . x + d0)

which is quasiconvex on the half-space ``c . x + d0 > 0``.  A line
residual is the special case ``m = 1, c = 0, d0 = 1``; reprojection and
transfer errors use ``m = 2`` with an affine denominator.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import (
    DomainError,
    IngestionError,
    IngestionWarning,
    SingularFitError,
    UsageError,
)
from .mask import SubsetMask, mask_indices


class ModelKind(enum.Enum):
    LINE2D = "line"
    TRIANGULATION = "triangulation"
    HOMOGRAPHY = "homography"

    @property
    def dim(self) -> int:
        """Number of model parameters d."""
        return _DIMS[self]

    @property
    def combinatorial_dim(self) -> int:
        """Basis size k = d + 1 for these continuously shrinking residuals."""
        return _DIMS[self] + 1

    @property
    def min_fit_points(self) -> int:
        """Smallest subset a least-squares refit accepts."""
        return _MIN_FIT[self]

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise UsageError(f"unknown model kind {value!r}; expected one of {names}") from None


_DIMS = {ModelKind.LINE2D: 2, ModelKind.TRIANGULATION: 3, ModelKind.HOMOGRAPHY: 8}
_MIN_FIT = {ModelKind.LINE2D: 2, ModelKind.TRIANGULATION: 2, ModelKind.HOMOGRAPHY: 4}

H33_MIN = 1e-6


@dataclass(frozen=True)
class LinePoint:
    a: float
    b: float

    kind = ModelKind.LINE2D


@dataclass(frozen=True, eq=False)
class TriangObs:
    """Pixel observation (u, v) of the scene point in a calibrated camera P."""

    P: np.ndarray
    u: float
    v: float

    kind = ModelKind.TRIANGULATION

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.shape != (3, 4):
            raise IngestionError(f"camera matrix must be 3x4, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise IngestionError("camera matrix has non-finite entries")
        if np.linalg.matrix_rank(P) < 3:
            raise IngestionError("camera matrix is rank deficient")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "u", float(self.u))
        object.__setattr__(self, "v", float(self.v))

    def __eq__(self, other):
        if not isinstance(other, TriangObs):
            return NotImplemented
        return self.u == other.u and self.v == other.v and np.array_equal(self.P, other.P)

    def __hash__(self):
        return hash((self.u, self.v, self.P.tobytes()))


@dataclass(frozen=True)
class HomogCorr:
    """Correspondence u (image 1) -> v (image 2)."""

    u: tuple
    v: tuple

    kind = ModelKind.HOMOGRAPHY

    def __post_init__(self):
        u = tuple(float(t) for t in self.u)
        v = tuple(float(t) for t in self.v)
        if len(u) != 2 or len(v) != 2:
            raise IngestionError("homography correspondences need 2-vectors u and v")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)


DataPoint = Union[LinePoint, TriangObs, HomogCorr]


@dataclass(frozen=True, eq=False)
class FractionalForm:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d0: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if A.shape[0] != b.shape[0] or A.shape[1] != c.shape[0]:
            raise UsageError(f"inconsistent form shapes A{A.shape} b{b.shape} c{c.shape}")
        if not np.any(c) and not self.d0 > 0:
            raise UsageError("a form with c = 0 needs d0 > 0")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d0", float(self.d0))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def is_linear(self) -> bool:
        """True when the denominator is a positive constant."""
        return not np.any(self.c) and self.d0 > 0


def to_fractional_form(p: DataPoint, kind: ModelKind) -> FractionalForm:
    """Rewrite a data point's residual as ||A x + b|| / (c.x + d0)."""
    kind = ModelKind.parse(kind)
    if getattr(p, "kind", None) is not kind:
        raise UsageError(f"{type(p).__name__} cannot be used with model kind {kind.value}")
    if kind is ModelKind.LINE2D:
        # |a x1 + x2 - b|
        return FractionalForm(np.array([[p.a, 1.0]]), np.array([-p.b]), np.zeros(2), 1.0)
    if kind is ModelKind.TRIANGULATION:
        P = p.P
        rows = np.vstack([P[0] - p.u * P[2], P[1] - p.v * P[2]])
        return FractionalForm(rows[:, :3], rows[:, 3], P[2, :3].copy(), P[2, 3])
    u1, u2 = p.u
    v1, v2 = p.v
    A = np.array([
        [u1, u2, 1.0, 0.0, 0.0, 0.0, -v1 * u1, -v1 * u2],
        [0.0, 0.0, 0.0, u1, u2, 1.0, -v2 * u1, -v2 * u2],
    ])
    c = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, u1, u2])
    return FractionalForm(A, np.array([-v1, -v2]), c, 1.0)


def denominator(form: FractionalForm, x) -> float:
    return float(form.c @ np.asarray(x, dtype=float) + form.d0)


def residual(form: FractionalForm, x) -> float:
    """Evaluate ||A x + b|| / (c.x + d0); raises DomainError off the region."""
    x = np.asarray(x, dtype=float)
    if x.shape != (form.dim,):
        raise UsageError(f"parameter vector must have length {form.dim}, got shape {x.shape}")
    den = float(form.c @ x + form.d0)
    if not den > 0:
        raise DomainError(den)
    return float(np.linalg.norm(form.A @ x + form.b)) / den


class Dataset:
    """Immutable collection of data points of one kind, with stacked forms.

    The stacked arrays let the minimax and consensus code evaluate every
    residual at once instead of looping over FractionalForm objects.
    """

    def __init__(self, kind, points: Sequence[DataPoint]):
        self.kind = ModelKind.parse(kind)
        self.points = tuple(points)
        if not self.points:
            raise UsageError("a dataset needs at least one point")
        self.forms = tuple(to_fractional_form(p, self.kind) for p in self.points)
        self.A = np.stack([f.A for f in self.forms])
        self.b = np.stack([f.b for f in self.forms])
        self.c = np.stack([f.c for f in self.forms])
        self.d0 = np.array([f.d0 for f in self.forms])
        for arr in (self.A, self.b, self.c, self.d0):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    def residuals(self, x, idx=None) -> np.ndarray:
        """All residuals at x; points outside the positive region get +inf."""
        x = np.asarray(x, dtype=float)
        sl = slice(None) if idx is None else np.asarray(idx, dtype=int)
        num = np.linalg.norm(np.einsum("nmd,d->nm", self.A[sl], x) + self.b[sl], axis=1)
        den = self.c[sl] @ x + self.d0[sl]
        out = np.full(num.shape, np.inf)
        ok = den > 0
        out[ok] = num[ok] / den[ok]
        return out

    def fingerprint(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.A, self.b, self.c, self.d0)) + self.kind.value.encode()

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.kind is other.kind and self.points == other.points

    def __hash__(self):
        return hash(self.fingerprint())


# ---------------------------------------------------------------------------
# homography helpers


def homography_to_params(H) -> np.ndarray:
    """Dehomogenise H by its bottom-right entry and return the 8 free entries."""
    H = np.asarray(H, dtype=float)
    scale = np.linalg.norm(H)
    if abs(H[2, 2]) < H33_MIN * scale:
        raise SingularFitError("homography bottom-right entry is ~0; cannot dehomogenise")
    return (H / H[2, 2]).ravel()[:8].copy()


def params_to_homography(x) -> np.ndarray:
    return np.append(np.asarray(x, dtype=float), 1.0).reshape(3, 3)


def check_homography_truth(H) -> bool:
    """Warn (and return False) when a ground-truth H has |H33| < 1e-6 after scaling."""
    H = np.asarray(H, dtype=float)
    if abs(H[2, 2]) / np.linalg.norm(H) < H33_MIN:
        warnings.warn("ground-truth homography has |H33| ~ 0; fixed-entry parametrisation breaks down",
                      IngestionWarning, stacklevel=2)
        return False
    return True


def hartley_normalise(pts: np.ndarray):
    """Centre points and scale them to mean distance sqrt(2); returns (pts_n, T)."""
    c = pts.mean(axis=0)
    dist = np.mean(np.linalg.norm(pts - c, axis=1))
    if dist < 1e-12:
        raise SingularFitError("coincident points")
    s = np.sqrt(2.0) / dist
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, T


def _fit_homography(points: Sequence[HomogCorr]) -> np.ndarray:
    U = np.array([p.u for p in points])
    V = np.array([p.v for p in points])
    Un, T1 = hartley_normalise(U)
    Vn, T2 = hartley_normalise(V)
    rows = []
    for (x, y), (xp, yp) in zip(Un, Vn):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, xp * x, xp * y, xp])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp])
    _, s, Vt = np.linalg.svd(np.asarray(rows))
    # 4 points in general position leave a 1-D null space; more points give s[8] > 0
    if len(s) >= 9 and s[7] < 1e-10 * s[0]:
        raise SingularFitError("degenerate correspondences (null space has dimension > 1)")
    Hn = Vt[-1].reshape(3, 3)
    if abs(np.linalg.det(Hn / np.linalg.norm(Hn))) < 1e-10:
        raise SingularFitError("degenerate correspondences (fitted homography is singular)")
    H = np.linalg.solve(T2, Hn @ T1)
    return homography_to_params(H)


# ---------------------------------------------------------------------------
# triangulation helpers


def project(P, X) -> np.ndarray:
    Xh = np.append(np.asarray(X, dtype=float), 1.0)
    q = np.asarray(P) @ Xh
    return q[:2] / q[2]


def _fit_triangulation(points: Sequence[TriangObs]) -> np.ndarray:
    rows = []
    for p in points:
        rows.append(p.u * p.P[2] - p.P[0])
        rows.append(p.v * p.P[2] - p.P[1])
    _, s, Vt = np.linalg.svd(np.asarray(rows))
    if s[2] < 1e-12 * s[0]:
        raise SingularFitError("degenerate triangulation (rays do not determine a point)")
    Xh = Vt[-1]
    if abs(Xh[3]) < 1e-12 * np.linalg.norm(Xh):
        raise SingularFitError("degenerate triangulation (point at infinity, parallel rays)")
    X = Xh[:3] / Xh[3]

    # one Gauss-Newton pass on the reprojection error
    r = []
    J = []
    for p in points:
        P = p.P
        q = P @ np.append(X, 1.0)
        w = q[2]
        r.extend([p.u - q[0] / w, p.v - q[1] / w])
        J.append(-(P[0, :3] * w - q[0] * P[2, :3]) / w**2)
        J.append(-(P[1, :3] * w - q[1] * P[2, :3]) / w**2)
    J = np.asarray(J)
    sj = np.linalg.svd(J, compute_uv=False)
    if sj[-1] < 1e-12 * sj[0]:
        raise SingularFitError("degenerate triangulation (rank-deficient Jacobian)")
    step, *_ = np.linalg.lstsq(J, -np.asarray(r), rcond=None)
    return X + step


def _fit_line(points: Sequence[LinePoint]) -> np.ndarray:
    a = np.array([p.a for p in points])
    b = np.array([p.b for p in points])
    M = np.column_stack([a, np.ones_like(a)])
    x, _, rank, _ = np.linalg.lstsq(M, b, rcond=None)
    if rank < 2:
        raise SingularFitError("all selected points share one abscissa")
    return x


def least_squares_fit(kind, data: Sequence[DataPoint], mask=None) -> np.ndarray:
    """Refit the model on the points selected by ``mask``.

    Parameters
    ----------
    kind : ModelKind or str
    data : sequence of data points (or a Dataset)
    mask : SubsetMask, boolean array, index list or None (all points)

    Returns
    -------
    ndarray of length ``kind.dim``
    """
    kind = ModelKind.parse(kind)
    points = data.points if isinstance(data, Dataset) else tuple(data)
    idx = range(len(points)) if mask is None else mask_indices(mask, len(points))
    chosen = [points[i] for i in idx]
    if any(getattr(p, "kind", None) is not kind for p in chosen):
        raise UsageError(f"data points do not match model kind {kind.value}")
    if len(chosen) < kind.min_fit_points:
        raise UsageError(
            f"{kind.value} refit needs at least {kind.min_fit_points} points, mask selects {len(chosen)}")
    if kind is ModelKind.LINE2D:
        return _fit_line(chosen)
    if kind is ModelKind.HOMOGRAPHY:
        return _fit_homography(chosen)
    return _fit_triangulation(chosen)


__all__ = [
    "ModelKind", "LinePoint", "TriangObs", "HomogCorr", "DataPoint", "FractionalForm",
    "Dataset", "to_fractional_form", "residual", "denominator", "least_squares_fit",
    "homography_to_params", "params_to_homography", "check_homography_truth", "project",
    "hartley_normalise", "SubsetMask",
]
