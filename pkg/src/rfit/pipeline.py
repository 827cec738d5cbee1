"""Synthetic instances, consensus scoring and the two-step robust fit."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalError, UsageError
from .geometry import (
    Dataset,
    HomogCorr,
    LinePoint,
    ModelKind,
    TriangObs,
    check_homography_truth,
    homography_to_params,
    least_squares_fit,
    project,
)
from .influence import (
    InfluenceVector,
    exact_influence_full,
    feasibility_table,
    normalize,
    sample_influence_classical,
)
from .quantum import build_oracle_table, bv_sample, fwht_spectrum

DEFAULT_GAMMA = 0.3
DEFAULT_SPREAD = {ModelKind.LINE2D: 10.0, ModelKind.HOMOGRAPHY: 500.0, ModelKind.TRIANGULATION: 500.0}
DEFAULT_SIGMA = {ModelKind.LINE2D: 0.1, ModelKind.HOMOGRAPHY: 1.0, ModelKind.TRIANGULATION: 0.25}
MAX_REDRAWS = 100


def default_eps(kind, sigma: float) -> float:
    """Inlier threshold used when an instance does not specify one."""
    kind = ModelKind.parse(kind)
    if kind is ModelKind.LINE2D:
        return round(3.0 * sigma, 12) if sigma > 0 else 0.3
    if kind is ModelKind.HOMOGRAPHY:
        return 4.0
    return 1.0


@dataclass(eq=False)
class Instance:
    kind: ModelKind
    points: tuple
    eps: float
    truth_x: Optional[np.ndarray] = None
    truth_labels: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        self.points = tuple(self.points)
        if not self.points:
            raise UsageError("an instance needs at least one point")
        if not self.eps > 0:
            raise UsageError("eps must be positive")
        if self.truth_x is not None:
            self.truth_x = np.asarray(self.truth_x, dtype=float)
        if self.truth_labels is not None:
            self.truth_labels = np.asarray(self.truth_labels, dtype=bool)
        self._dataset = None

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            self._dataset = Dataset(self.kind, self.points)
        return self._dataset

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (self.kind is other.kind and self.points == other.points and self.eps == other.eps
                and same(self.truth_x, other.truth_x) and same(self.truth_labels, other.truth_labels)
                and self.provenance == other.provenance)


# ---------------------------------------------------------------------------
# generators


def _outlier_margin(sigma, spread):
    return max(10.0 * sigma, 0.1 * spread if spread else 0.0)


def _gen_line(rng, n, n_in, sigma, spread):
    slope = rng.uniform(-1.0, 1.0)
    icpt = rng.uniform(-0.1, 0.1) * spread
    half = spread / 2.0
    margin = _outlier_margin(sigma, spread)
    pts = []
    for _ in range(n_in):
        a = rng.uniform(-half, half)
        pts.append((a, slope * a + icpt + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)))
    for _ in range(n - n_in):
        for _ in range(MAX_REDRAWS):
            a, b = rng.uniform(-half, half), rng.uniform(-half, half)
            if abs(b - slope * a - icpt) >= margin:
                break
        else:
            raise NumericalError("could not place an outlier outside the inlier band; increase spread")
        pts.append((a, b))
    return [LinePoint(float(a), float(b)) for a, b in pts], np.array([slope, icpt])


def _random_homography(rng, spread):
    # drawn in coordinates normalised to [-1, 1], then mapped back to pixels
    T = np.array([[2.0 / spread, 0.0, -1.0], [0.0, 2.0 / spread, -1.0], [0.0, 0.0, 1.0]])
    for _ in range(MAX_REDRAWS):
        Hn = np.eye(3) + rng.normal(0.0, 0.1, (3, 3))
        Hn /= np.linalg.norm(Hn)
        if abs(Hn[2, 2]) < 0.5 or np.linalg.cond(Hn) > 10.0:
            continue
        H = np.linalg.solve(T, Hn @ T)
        if not check_homography_truth(H):
            continue
        H /= H[2, 2]
        # every point of image 1 must map with a positive denominator
        corners = np.array([[0, 0, 1], [spread, 0, 1], [0, spread, 1], [spread, spread, 1]], dtype=float)
        if np.all(corners @ H[2] > 0):
            return H
    raise NumericalError("could not draw a well-conditioned homography in 100 attempts")


def _gen_homography(rng, n, n_in, sigma, spread):
    H = _random_homography(rng, spread)
    margin = _outlier_margin(sigma, spread)
    pts = []
    for i in range(n):
        u = rng.uniform(0.0, spread, 2)
        q = H @ np.append(u, 1.0)
        v_true = q[:2] / q[2]
        if i < n_in:
            v = v_true + (rng.normal(0.0, sigma, 2) if sigma > 0 else 0.0)
        else:
            for _ in range(MAX_REDRAWS):
                v = rng.uniform(0.0, spread, 2)
                if np.linalg.norm(v - v_true) >= margin:
                    break
            else:
                raise NumericalError("could not place an outlier away from the true transfer")
        pts.append(HomogCorr(tuple(u), tuple(v)))
    return pts, homography_to_params(H)


def _look_at(C, target, focal):
    z = target - C
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 0.0, 1.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    K = np.diag([focal, focal, 1.0])
    return K @ np.hstack([R, -(R @ C)[:, None]])


def _gen_triangulation(rng, n, n_in, sigma, spread):
    X0 = rng.normal(0.0, 0.5, 3)
    radius = 10.0
    half = spread / 2.0
    margin = _outlier_margin(sigma, spread)
    pts = []
    for i in range(n):
        theta = 2.0 * np.pi * i / n + rng.uniform(-0.1, 0.1)
        C = np.array([radius * np.cos(theta), radius * np.sin(theta), rng.uniform(-2.0, 2.0)])
        P = _look_at(C, np.zeros(3), focal=spread)
        uv = project(P, X0)
        if i < n_in:
            uv = uv + (rng.normal(0.0, sigma, 2) if sigma > 0 else 0.0)
        else:
            true_uv = uv
            for _ in range(MAX_REDRAWS):
                uv = rng.uniform(-half, half, 2)
                if np.linalg.norm(uv - true_uv) >= margin:
                    break
            else:
                raise NumericalError("could not place an outlier away from the true projection")
        pts.append(TriangObs(P, float(uv[0]), float(uv[1])))
    return pts, X0


_GENERATORS = {
    ModelKind.LINE2D: _gen_line,
    ModelKind.HOMOGRAPHY: _gen_homography,
    ModelKind.TRIANGULATION: _gen_triangulation,
}


def generate(kind, n: int, inlier_count: int, noise_sigma: Optional[float] = None,
             outlier_spread: Optional[float] = None, seed: int = 0, eps: Optional[float] = None) -> Instance:
    """Draw a synthetic instance with ground truth.

    Outliers are drawn uniformly in the data box (image, frame) and redrawn
    while they fall within ``max(10 sigma, 0.1 spread)`` of the true model,
    so every labelled outlier is a genuine one.  Points are shuffled.
    """
    kind = ModelKind.parse(kind)
    if n < 1:
        raise UsageError("n must be at least 1")
    if not 0 <= inlier_count <= n:
        raise UsageError(f"inlier count {inlier_count} must lie in [0, {n}]")
    sigma = DEFAULT_SIGMA[kind] if noise_sigma is None else float(noise_sigma)
    spread = DEFAULT_SPREAD[kind] if outlier_spread is None else float(outlier_spread)
    if sigma < 0 or spread <= 0:
        raise UsageError("sigma must be nonnegative and spread positive")
    rng = np.random.default_rng(seed)
    pts, x_true = _GENERATORS[kind](rng, n, inlier_count, sigma, spread)
    labels = np.arange(n) < inlier_count
    order = rng.permutation(n)
    pts = [pts[i] for i in order]
    labels = labels[order]
    return Instance(
        kind, pts, default_eps(kind, sigma) if eps is None else float(eps),
        truth_x=x_true, truth_labels=labels,
        provenance={"source": "generated", "seed": int(seed), "sigma": sigma, "spread": spread,
                    "outlier_fraction": (n - inlier_count) / n},
    )


# ---------------------------------------------------------------------------
# fitting


def consensus(data, x, eps: float) -> int:
    """Number of points with residual <= eps at x (off-region points disagree)."""
    data = data.dataset if isinstance(data, Instance) else data
    return int(np.count_nonzero(data.residuals(x) <= eps))


@dataclass
class FitReport:
    influences: np.ndarray
    normalized: np.ndarray
    inlier_mask: np.ndarray
    refit: np.ndarray
    consensus: int
    gamma: float
    eps: float
    estimator: dict
    timing: dict = field(default_factory=dict)
    truth_labels: Optional[np.ndarray] = None

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "kind": self.estimator.get("kind"),
            "eps": self.eps,
            "gamma": self.gamma,
            "influences": [float(v) for v in self.influences],
            "normalized": [float(v) for v in self.normalized],
            "inlier_mask": [int(v) for v in self.inlier_mask],
            "refit": [float(v) for v in self.refit],
            "consensus": int(self.consensus),
            "estimator": dict(self.estimator),
        }
        if self.truth_labels is not None:
            out["truth_labels"] = [int(v) for v in self.truth_labels]
        if include_timing:
            out["timing"] = dict(self.timing)
        return out


def estimate_influence(instance: Instance, method: str = "exact", M: int = 800, seed: int = 0,
                       eps: Optional[float] = None):
    """Run one of the three influence estimators; returns (InfluenceVector, metadata)."""
    data = instance.dataset
    eps = instance.eps if eps is None else float(eps)
    n = data.n
    meta = {"method": method, "kind": instance.kind.value, "N": n, "eps": eps}
    if method == "exact":
        infl = exact_influence_full(data, eps)
        _, stats = feasibility_table(data, eps)
        meta.update(table_entries=1 << n, solver_calls=int(stats["solver_calls"]))
    elif method == "classical":
        infl, trace = sample_influence_classical(data, eps, M=M, seed=seed)
        meta.update(M=M, seed=seed, k=data.kind.combinatorial_dim, logical_queries=trace.oracle_queries,
                    solver_calls=int(trace.solver_calls))
    elif method == "quantum":
        table = build_oracle_table(data, eps)
        infl, rec = bv_sample(fwht_spectrum(table), M, seed)
        meta.update(M=M, seed=seed, logical_queries=rec.queries, table_entries=1 << n,
                    solver_calls=int(table.stats.get("solver_calls", 0)))
    else:
        raise UsageError(f"unknown method {method!r}; expected exact, classical or quantum")
    return infl, meta


def threshold_mask(normalized, gamma: float) -> np.ndarray:
    """Inliers are the points whose normalised influence is at most gamma."""
    if not 0 < gamma <= 1:
        raise UsageError("gamma must lie in (0, 1]")
    return np.asarray(normalized) <= gamma


def robust_fit(instance: Instance, method: str = "exact", M: int = 800, gamma: float = DEFAULT_GAMMA,
               seed: int = 0, eps: Optional[float] = None) -> FitReport:
    """Compute influences, keep the low-influence points and refit by least squares."""
    if not 0 < gamma <= 1:
        raise UsageError("gamma must lie in (0, 1]")
    t0 = time.perf_counter()
    infl, meta = estimate_influence(instance, method, M, seed, eps)
    t1 = time.perf_counter()
    norm = normalize(infl.alphas)
    mask = threshold_mask(norm, gamma)
    need = instance.kind.min_fit_points
    if mask.sum() < need:
        raise UsageError(
            f"only {int(mask.sum())} points have normalised influence <= {gamma}; the refit needs "
            f"{need}. Try a larger gamma.")
    x = least_squares_fit(instance.kind, instance.points, mask)
    t2 = time.perf_counter()
    return FitReport(
        influences=infl.alphas, normalized=norm, inlier_mask=mask, refit=x,
        consensus=consensus(instance.dataset, x, infl.eps), gamma=gamma, eps=infl.eps,
        estimator=meta, timing={"influence_s": t1 - t0, "refit_s": t2 - t1},
        truth_labels=instance.truth_labels,
    )
