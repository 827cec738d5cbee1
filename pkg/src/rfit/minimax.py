"""Minimax fitting g(C) = min_x max_{i in C} r_i(x) and the feasibility test f.

Two routes are used:

* Residuals with a constant denominator and a scalar numerator (line
  fitting) form a linear Chebyshev problem.  For d = 2 it is solved in
  closed form from the equioscillation of every triple and pair of
  residuals; otherwise, or when the closed-form witness fails its check,
  by a linear program.
* General fractional residuals are handled by bisection on the level
  alpha.  Each level solves

      min_{x,t} t   s.t.  ||A_i x + b_i|| <= alpha (c_i.x + d_i) + t,

  whose optimal t is the feasibility margin min_x h_alpha(x).  The SOCP is
  solved with Clarabel; a projected Polyak subgradient method is available
  as an alternative backend.
"""

from __future__ import annotations

import enum
import itertools
import warnings
import weakref
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import clarabel
import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import (
    BoundaryAmbiguityWarning,
    SolverWarning,
    UnboundedError,
    UsageError,
)
from .geometry import Dataset, FractionalForm
from .mask import SubsetMask

TAU_G = 1e-6
SIGMA = 1e-8
SUBGRADIENT_ITERS = 2000
SUBGRADIENT_RESTARTS = 3
DEN_MIN = 1e-9
BALL_RADIUS = 1e6
ALPHA_CAP = 1e12
CLOSED_FORM_MAX = 24


class Status(enum.Enum):
    EXACT = "exact"
    BISECTION = "bisection"
    EMPTY = "empty"


@dataclass
class MinimaxResult:
    value: float
    witness: Optional[np.ndarray]
    status: Status
    iterations: int = 0
    warning: bool = False
    solver_calls: int = 0

    def max_residual(self, forms) -> float:
        if self.witness is None:
            return 0.0
        return float(_Problem.from_forms(forms).max_residual(self.witness))


# ---------------------------------------------------------------------------
# problem container


class _Problem:
    """Stacked residual data for one subset, plus an exactly equivalent
    rescaled copy for the conic solver (rows scaled to unit norm, columns
    equilibrated; neither changes any residual value)."""

    def __init__(self, A, b, c, d0, col_scale=None):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.d0 = np.asarray(d0, dtype=float)
        self.n, self.m, self.d = self.A.shape
        # the search ball ||x / ball_scale|| <= R must be the same for every
        # subset of a dataset, otherwise g can lose monotonicity at the ball
        self.ball_scale = _column_scale(self.A, self.b, self.c, self.d0) if col_scale is None else col_scale
        self._scaled = None

    @classmethod
    def from_forms(cls, forms: Sequence[FractionalForm]):
        forms = list(forms)
        if not forms:
            raise UsageError("no residual forms given")
        dims = {f.dim for f in forms}
        rows = {f.A.shape[0] for f in forms}
        if len(dims) != 1 or len(rows) != 1:
            raise UsageError("all forms must share the same shape")
        return cls(np.stack([f.A for f in forms]), np.stack([f.b for f in forms]),
                   np.stack([f.c for f in forms]), np.array([f.d0 for f in forms]))

    @classmethod
    def from_dataset(cls, data: Dataset, idx):
        idx = np.asarray(idx, dtype=int)
        D = _DATASET_SCALE.get(data)
        if D is None:
            D = _DATASET_SCALE[data] = _column_scale(data.A, data.b, data.c, data.d0)
        return cls(data.A[idx], data.b[idx], data.c[idx], data.d0[idx], col_scale=D)

    @property
    def is_linear(self) -> bool:
        return self.m == 1 and not np.any(self.c) and bool(np.all(self.d0 > 0))

    def residuals(self, x) -> np.ndarray:
        num = np.linalg.norm(np.einsum("nmd,d->nm", self.A, x) + self.b, axis=1)
        den = self.c @ x + self.d0
        out = np.full(self.n, np.inf)
        ok = den >= DEN_MIN
        out[ok] = num[ok] / den[ok]
        return out

    def max_residual(self, x) -> float:
        return float(np.max(self.residuals(x))) if self.n else 0.0

    def seeds(self):
        """Deterministic starting points: origin and algebraic least squares."""
        out = [np.zeros(self.d)]
        M = self.A.reshape(-1, self.d)
        x, *_ = np.linalg.lstsq(M, -self.b.ravel(), rcond=None)
        if np.all(np.isfinite(x)):
            out.append(x)
        return out

    @property
    def scaled(self):
        if self._scaled is None:
            self._scaled = self.scaling()
        return self._scaled

    def scaling(self, ref=None):
        """Solver data with rows divided by weights w_i.

        Without a reference the weights are row norms.  With a reference
        point of finite residual they are its denominators, so the margin
        t of a level problem reads as r_i - alpha near ref.  That keeps
        degenerate points (numerator and denominator both near zero) from
        looking almost feasible.
        """
        w = None
        x0 = np.zeros(self.d) if ref is None else np.asarray(ref, dtype=float)
        if ref is not None:
            den = self.c @ ref + self.d0
            if np.all(np.isfinite(den)) and np.all(den >= DEN_MIN):
                w = np.maximum(den, 1e-6 * np.max(den))
        if w is None:
            w = np.sqrt(np.sum(self.A**2, axis=(1, 2)) + np.sum(self.b**2, axis=1)
                        + np.sum(self.c**2, axis=1) + self.d0**2)
            w[w == 0] = 1.0
        # variables are centred at the reference and whitened: x = x0 + T y
        # with T from the SVD of the stacked rows, so a unit step in y moves
        # every row value by at most one (an affine change, residuals unchanged)
        A = self.A / w[:, None, None]
        b = (np.einsum("nmd,d->nm", self.A, x0) + self.b) / w[:, None]
        c = self.c / w[:, None]
        d0 = (self.c @ x0 + self.d0) / w
        M = np.concatenate([A.reshape(-1, self.d), c])
        _, sv, Vt = np.linalg.svd(M)
        sv = np.concatenate([sv, np.zeros(self.d - sv.size)])
        sv = np.maximum(sv, 1e-12 * sv[0]) if sv[0] > 0 else np.ones(self.d)
        T = Vt.T / sv
        Tinv = sv[:, None] * Vt
        return _Scaled(A @ T, b, c @ T, d0, T, Tinv, 2.0 * DEN_MIN / w, T / self.ball_scale[:, None],
                       x0 / self.ball_scale, x0, w)


class _Scaled(NamedTuple):
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d0: np.ndarray
    T: np.ndarray
    Tinv: np.ndarray
    dmin: np.ndarray
    ball: np.ndarray
    ball_center: np.ndarray
    x0: np.ndarray
    w: np.ndarray


_DATASET_SCALE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _column_scale(A, b, c, d0):
    """Column equilibration from norm-normalised rows."""
    rown = np.sqrt(np.sum(A**2, axis=(1, 2)) + np.sum(b**2, axis=1) + np.sum(c**2, axis=1) + d0**2)
    rown[rown == 0] = 1.0
    A = A / rown[:, None, None]
    c = c / rown[:, None]
    colmax = np.maximum(np.max(np.abs(A), axis=(0, 1)), np.max(np.abs(c), axis=0))
    colmax[colmax < np.finfo(float).tiny] = 1.0
    return 1.0 / colmax


# ---------------------------------------------------------------------------
# linear Chebyshev route


def _linear_data(prob: _Problem):
    W = prob.A[:, 0, :] / prob.d0[:, None]
    beta = prob.b[:, 0] / prob.d0
    return W, beta


def _pair_values(W1, W2, b1, b2):
    """Closed-form minimax of two linear residuals |w.x + beta| in R^2."""
    W1 = np.atleast_2d(W1)
    W2 = np.atleast_2d(W2)
    n1 = np.linalg.norm(W1, axis=-1)
    n2 = np.linalg.norm(W2, axis=-1)
    det = W1[..., 0] * W2[..., 1] - W1[..., 1] * W2[..., 0]
    dependent = np.abs(det) <= 1e-12 * np.maximum(n1 * n2, 1e-300)
    U = np.where((n1 >= n2)[..., None], W1, W2)
    lam1 = np.sum(W2 * U, axis=-1)
    lam2 = -np.sum(W1 * U, axis=-1)
    den = np.abs(lam1) + np.abs(lam2)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.abs(lam1 * b1 + lam2 * b2) / den
    both_zero = np.maximum(n1, n2) == 0
    val = np.where(both_zero, np.maximum(np.abs(b1), np.abs(b2)), val)
    return np.where(dependent, val, 0.0)


def _triple_values(W, beta):
    """Minimax of residual triples W (..., 3, 2), beta (..., 3).

    With lambda the linear dependency of the three coefficient rows, the
    value is |lambda.beta| / ||lambda||_1; rank-deficient triples return
    -inf (their value is carried by the pairs they contain).
    """
    lam = np.cross(W[..., :, 0], W[..., :, 1])
    den = np.sum(np.abs(lam), axis=-1)
    scale = np.max(np.abs(W), axis=(-2, -1)) ** 2
    degenerate = den <= 1e-12 * np.maximum(scale, 1e-300)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.abs(np.sum(lam * beta, axis=-1)) / den
    return np.where(degenerate, -np.inf, val), lam


def _single_values(W, beta):
    return np.where(np.linalg.norm(W, axis=-1) == 0, np.abs(beta), 0.0)


def _cheb2_value(W, beta) -> float:
    n = len(beta)
    if n == 0:
        return 0.0
    best = float(np.max(_single_values(W, beta)))
    if n >= 2:
        i, j = np.array(list(itertools.combinations(range(n), 2))).T
        best = max(best, float(np.max(_pair_values(W[i], W[j], beta[i], beta[j]))))
    if n >= 3:
        t = np.array(list(itertools.combinations(range(n), 3)))
        vals, _ = _triple_values(W[t], beta[t])
        best = max(best, float(np.max(vals)))
    return best


def _equioscillation_witness(W, beta, idx, g):
    """Solve w_i.x = g * s_i - beta_i on the basis rows idx."""
    Wb, bb = W[idx], beta[idx]
    if len(idx) == 3:
        lam = np.cross(Wb[:, 0], Wb[:, 1])
    elif len(idx) == 2:
        n1, n2 = np.linalg.norm(Wb, axis=1)
        U = Wb[0] if n1 >= n2 else Wb[1]
        lam = np.array([Wb[1] @ U, -(Wb[0] @ U)])
    else:
        lam = np.ones(1)
    S = float(lam @ bb)
    target = g * np.sign(lam) * np.sign(S) - bb
    use = lam != 0
    if not np.any(use):
        use[:] = True
    x, *_ = np.linalg.lstsq(Wb[use], target[use], rcond=None)
    return x


def _cheb2_solve(prob: _Problem) -> MinimaxResult:
    W, beta = _linear_data(prob)
    n = len(beta)
    # locate the subset attaining the maximum so its equioscillation gives x
    cands = []
    s = _single_values(W, beta)
    k = int(np.argmax(s))
    cands.append((float(s[k]), [k]))
    if n >= 2:
        pairs = np.array(list(itertools.combinations(range(n), 2)))
        pv = _pair_values(W[pairs[:, 0]], W[pairs[:, 1]], beta[pairs[:, 0]], beta[pairs[:, 1]])
        k = int(np.argmax(pv))
        cands.append((float(pv[k]), list(pairs[k])))
    if n >= 3:
        triples = np.array(list(itertools.combinations(range(n), 3)))
        tv, _ = _triple_values(W[triples], beta[triples])
        k = int(np.argmax(tv))
        if np.isfinite(tv[k]):
            cands.append((float(tv[k]), list(triples[k])))
    g, basis = max(cands, key=lambda t: t[0])
    x = _equioscillation_witness(W, beta, basis, g)
    # duality-gap check: the lower bound g must be attained by the witness
    if np.all(np.isfinite(x)) and prob.max_residual(x) <= g + 1e-9 * (1.0 + g):
        return MinimaxResult(g, x, Status.EXACT)
    return _lp_solve(prob)


def _lp_solve(prob: _Problem) -> MinimaxResult:
    W, beta = _linear_data(prob)
    n, d = W.shape
    # variables (x, t): +-(W x + beta) <= t
    A_ub = np.block([[W, -np.ones((n, 1))], [-W, -np.ones((n, 1))]])
    b_ub = np.concatenate([-beta, beta])
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * d + [(0, None)], method="highs")
    if not res.success:
        raise UnboundedError(f"linear minimax LP failed: {res.message}")
    x = res.x[:d]
    upper = prob.max_residual(x)
    gap_ok = upper - res.x[-1] <= 1e-9 * (1.0 + upper)
    return MinimaxResult(float(upper), x, Status.EXACT, warning=not gap_ok)


def _linear_solve(prob: _Problem) -> MinimaxResult:
    if prob.d == 2 and prob.n <= CLOSED_FORM_MAX:
        return _cheb2_solve(prob)
    return _lp_solve(prob)


def _linear_value(prob: _Problem) -> float:
    if prob.d == 2 and prob.n <= CLOSED_FORM_MAX:
        W, beta = _linear_data(prob)
        return _cheb2_value(W, beta)
    return _lp_solve(prob).value


# ---------------------------------------------------------------------------
# feasibility subproblem


_SETTINGS = {}


def _clarabel_settings(tight=True):
    if tight not in _SETTINGS:
        s = clarabel.DefaultSettings()
        s.verbose = False
        if tight:
            s.tol_gap_abs = 1e-11
            s.tol_gap_rel = 1e-11
            s.tol_feas = 1e-11
        s.max_iter = 200
        _SETTINGS[tight] = s
    return _SETTINGS[tight]


def _feasibility_socp(scaled, alpha: float, radius=None):
    """Return (t*, x*) with t* = min_x max_i ||num_i|| - alpha den_i (scaled units).

    radius, when given, adds the trust region ||y|| <= radius around the
    reference; the search ball is then dropped if it cannot be active.
    """
    A, b, c, d0, T, _, dmin, ball = scaled[:8]
    n, m, d = A.shape
    nv = d + 1
    has_den = np.any(c != 0, axis=1)
    n_lin = 1 + int(np.sum(has_den))
    use_ball = radius is None or (np.linalg.norm(scaled.ball_center)
                                  + radius * np.linalg.norm(ball, 2) > BALL_RADIUS)
    rows = n_lin + n * (m + 1) + (d + 1) * (int(use_ball) + int(radius is not None))
    G = np.zeros((rows, nv))
    h = np.zeros(rows)
    # t >= -1
    G[0, d] = -1.0
    h[0] = 1.0
    # c.y + d0 >= dmin, keeps witnesses inside the positive-denominator region
    r = 1
    for i in np.flatnonzero(has_den):
        G[r, :d] = -c[i]
        h[r] = d0[i] - dmin[i]
        r += 1
    cones = [clarabel.NonnegativeConeT(n_lin)]
    for i in range(n):
        G[r, :d] = -alpha * c[i]
        G[r, d] = -1.0
        h[r] = alpha * d0[i]
        G[r + 1:r + 1 + m, :d] = -A[i]
        h[r + 1:r + 1 + m] = b[i]
        cones.append(clarabel.SecondOrderConeT(m + 1))
        r += m + 1
    if use_ball:
        h[r] = BALL_RADIUS
        h[r + 1:r + 1 + d] = scaled.ball_center
        G[r + 1:r + 1 + d, :d] = -ball
        cones.append(clarabel.SecondOrderConeT(d + 1))
        r += d + 1
    if radius is not None:
        h[r] = radius
        G[r + 1:r + 1 + d, :d] = -np.eye(d)
        cones.append(clarabel.SecondOrderConeT(d + 1))
    q = np.zeros(nv)
    q[d] = 1.0
    P = sparse.csc_matrix((nv, nv))
    G = sparse.csc_matrix(G)
    fallback = None
    for tight in (True, False):
        sol = clarabel.DefaultSolver(P, q, G, h, cones, _clarabel_settings(tight)).solve()
        status = str(sol.status)
        if status == "Solved":
            z = np.asarray(sol.x)
            return float(z[d]), scaled.x0 + T @ z[:d], True
        if status == "AlmostSolved" and fallback is None:
            fallback = np.asarray(sol.x)
    if fallback is None:
        return np.inf, None, False
    return float(fallback[d]), scaled.x0 + T @ fallback[:d], False

def _h_value_grad(A, b, c, d0, dmin, alpha, y):
    num_v = np.einsum("nmd,d->nm", A, y) + b
    nrm = np.linalg.norm(num_v, axis=1)
    den = c @ y + d0
    terms = nrm - alpha * den
    guard = dmin - den
    i = int(np.argmax(terms))
    j = int(np.argmax(guard))
    if guard[j] > terms[i]:
        return float(guard[j]), -c[j]
    g = -alpha * c[i]
    if nrm[i] > 0:
        g = g + A[i].T @ (num_v[i] / nrm[i])
    return float(terms[i]), g


def _feasibility_subgradient(scaled, alpha: float, starts):
    """Projected Polyak subgradient descent on h_alpha, several restarts.

    Returns (best h, x at best, converged) where converged means h <= SIGMA
    was reached inside the iteration budget.
    """
    A, b, c, d0, T, Tinv, dmin, ball = scaled[:8]
    best_h, best_y = np.inf, None
    for x0 in list(starts)[:SUBGRADIENT_RESTARTS]:
        y = Tinv @ (np.asarray(x0, dtype=float) - scaled.x0)
        for _ in range(SUBGRADIENT_ITERS):
            hv, g = _h_value_grad(A, b, c, d0, dmin, alpha, y)
            if hv < best_h:
                best_h, best_y = hv, y.copy()
            if hv <= SIGMA:
                return hv, scaled.x0 + T @ y, True
            gg = float(g @ g)
            if gg == 0:
                break
            # Polyak step towards the level h = 0
            y = y - (hv / gg) * g
            xb = scaled.ball_center + ball @ y
            nrm = np.linalg.norm(xb)
            if nrm > BALL_RADIUS:
                y = Tinv @ ((scaled.x0 + T @ y) * (BALL_RADIUS / nrm) - scaled.x0)
    x = None if best_y is None else scaled.x0 + T @ best_y
    return best_h, x, False


def _residual_margin(prob, w, t, x):
    """Convert a margin in solver units into residual units at x.

    With row weights w_i, num_i - alpha den_i <= t w_i gives
    r_i - alpha <= t w_i / den_i(x), so a positive margin is scaled by the
    largest factor and a negative one by the smallest (the conservative
    reading either way).  Denominators are clamped at DEN_MIN, so a
    witness pressed against the region boundary reports a large margin.
    """
    if x is None or not np.isfinite(t):
        return t
    factor = w / np.maximum(prob.c @ x + prob.d0, DEN_MIN)
    return t * float(np.max(factor) if t > 0 else np.min(factor))


def _feasibility(prob, alpha, backend, starts, ref=None, radius=None):
    """(margin in residual units, witness, unclean) at level alpha.

    ref, when given, is a point of finite residual used to weight rows.
    """
    scaled = prob.scaled if ref is None else prob.scaling(ref)
    if backend == "socp":
        t, x, clean = _feasibility_socp(scaled, alpha, radius)
        return _residual_margin(prob, scaled.w, t, x), x, not clean
    if backend == "subgradient":
        hv, x, converged = _feasibility_subgradient(scaled, alpha, starts)
        return _residual_margin(prob, scaled.w, hv, x), x, not converged
    raise UsageError(f"unknown minimax backend {backend!r}")


# ---------------------------------------------------------------------------
# bisection


POLISH_STEPS = 30


def _bisect(prob: _Problem, tol: float, backend: str, seeds=()) -> MinimaxResult:
    starts = list(seeds) + prob.seeds()
    witness, hi = None, np.inf
    for x in starts:
        r = prob.max_residual(x)
        if r < hi:
            hi, witness = r, np.asarray(x, dtype=float)
    calls = 0
    warn = False

    t, x, w = _feasibility(prob, 0.0, backend, [witness] + starts if witness is not None else starts)
    calls += 1
    warn |= w
    if x is not None:
        r = prob.max_residual(x)
        if r < hi:
            hi, witness = r, x
        if t <= SIGMA and np.isfinite(r):
            return MinimaxResult(float(r), x, Status.BISECTION, 0, warn, calls)
    # hi is the max residual of the current witness (an attained upper
    # bound); level is the smallest alpha certified feasible up to slack.
    lo = 0.0
    level = hi
    if not np.isfinite(hi):
        alpha = 1.0
        while True:
            t, x, w = _feasibility(prob, alpha, backend, starts)
            calls += 1
            warn |= w
            r = prob.max_residual(x) if x is not None else np.inf
            if np.isfinite(r):
                hi, witness = r, x
                level = alpha if t <= SIGMA else r
                break
            lo = alpha
            alpha *= 2.0
            if alpha > ALPHA_CAP:
                raise UnboundedError(f"minimax value exceeds {ALPHA_CAP:g}; could not bracket")
    it = 0
    while min(hi, level) - lo > tol and it < 200:
        it += 1
        alpha = 0.5 * (lo + min(hi, level))
        t, x, w = _feasibility(prob, alpha, backend, [witness] + starts, ref=witness)
        calls += 1
        warn |= w
        r = prob.max_residual(x) if x is not None else np.inf
        if r < hi:
            hi, witness = r, x
        if t <= SIGMA or r <= alpha:
            level = alpha
        else:
            lo = alpha
    # polish: solve at alpha = hi with rows weighted at the witness, inside a
    # trust region; a negative margin yields a strictly better witness
    # (Dinkelbach-type step), otherwise the region shrinks
    if backend == "socp" and witness is not None:
        radius = max(1.0, hi)
        for _ in range(POLISH_STEPS):
            t, x, w = _feasibility(prob, hi, backend, (), ref=witness, radius=radius)
            calls += 1
            r = prob.max_residual(x) if x is not None else np.inf
            if r < hi - 1e-12 * max(1.0, hi):
                hi, witness = r, x
            else:
                radius *= 0.1
                if radius < 1e-9 * max(1.0, hi):
                    break
    return MinimaxResult(float(hi), witness, Status.BISECTION, it, warn, calls)


def _solve(prob: _Problem, tol=TAU_G, backend="socp", seeds=()) -> MinimaxResult:
    if prob.n == 0:
        return MinimaxResult(0.0, None, Status.EMPTY)
    if prob.is_linear:
        return _linear_solve(prob)
    res = _bisect(prob, tol, backend, seeds)
    if res.warning:
        warnings.warn("feasibility solver did not fully converge; minimax value is an upper bound",
                      SolverWarning, stacklevel=3)
    return res


def solve_minimax(forms: Sequence[FractionalForm], tol: float = TAU_G, backend: str = "socp",
                  seeds=()) -> MinimaxResult:
    """Compute g(C) = min_x max_i r_i(x) for the given residual forms.

    Parameters
    ----------
    forms : sequence of FractionalForm
        An empty sequence returns the ``EMPTY`` result with value 0.
    tol : float
        Bisection width; the returned value is within ``tol`` above g(C).
    backend : {"socp", "subgradient"}
        Solver for the per-level feasibility subproblem.
    seeds : iterable of parameter vectors
        Extra starting points (e.g. a previous witness).
    """
    if not tol > 0:
        raise UsageError("tol must be positive")
    forms = list(forms)
    if not forms:
        return MinimaxResult(0.0, None, Status.EMPTY)
    return _solve(_Problem.from_forms(forms), tol, backend, seeds)


def solve_subset(data: Dataset, mask, tol: float = TAU_G, backend: str = "socp", seeds=()) -> MinimaxResult:
    idx = _as_indices(mask, data.n)
    if not idx:
        return MinimaxResult(0.0, None, Status.EMPTY)
    return _solve(_Problem.from_dataset(data, idx), tol, backend, seeds)


def _as_indices(mask, n):
    if isinstance(mask, SubsetMask):
        if mask.n != n:
            raise UsageError(f"mask is over {mask.n} points but data has {n}")
        return mask.indices()
    if isinstance(mask, (int, np.integer)):
        return SubsetMask(int(mask), n).indices()
    return sorted(int(i) for i in mask)


# ---------------------------------------------------------------------------
# feasibility oracle


@dataclass
class FeasibilityOracle:
    """The Boolean test f(z) = [g(C_z) > eps] over a fixed dataset.

    ``solver_calls`` counts actual minimax/feasibility solves, which is
    simulation work; logical query counts are kept by the estimators.
    """

    data: Dataset
    eps: float
    tol: float = TAU_G
    backend: str = "socp"
    memo: bool = True
    solver_calls: int = 0
    boundary_hits: int = 0
    _cache: dict = field(default_factory=dict, repr=False)
    _witnesses: list = field(default_factory=list, repr=False)
    _flip_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.eps >= 0:
            raise UsageError("eps must be nonnegative")
        self._linear = self.data.kind.value == "line"

    def __call__(self, z) -> int:
        return self.evaluate(z)[0]

    def evaluate(self, z, witness: bool = False):
        """Return (f(z), x) where x, when not None, certifies feasibility.

        Linear problems skip witness construction unless ``witness`` is set.
        """
        bits = z.bits if isinstance(z, SubsetMask) else int(z)
        if self.memo and bits in self._cache:
            out = self._cache[bits]
            if not (witness and out[0] == 0 and out[1] is None and bits):
                return out
        out = self._evaluate(bits, witness)
        if self.memo:
            self._cache[bits] = out
        return out

    def _evaluate(self, bits, witness=False):
        idx = SubsetMask(bits, self.data.n).indices()
        if not idx:
            return 0, None
        prob = _Problem.from_dataset(self.data, idx)
        if prob.is_linear:
            self.solver_calls += 1
            if prob.d == 2 and prob.n <= CLOSED_FORM_MAX:
                W, beta = _linear_data(prob)
                if witness:
                    res = _cheb2_solve(prob)
                    return (0, res.witness) if res.value <= self.eps else (1, None)
                g = _cheb2_value(W, beta)
                return (0, None) if g <= self.eps else (1, None)
            res = _lp_solve(prob)
            return (0, res.witness) if res.value <= self.eps else (1, None)
        # cheap acceptance from known witnesses and algebraic seeds
        for x in self._witnesses[-4:] + prob.seeds():
            if prob.max_residual(x) <= self.eps:
                return 0, x
        self.solver_calls += 1
        t, x, unclean = _feasibility(prob, self.eps, self.backend, prob.seeds())
        if x is not None and t <= SIGMA and prob.max_residual(x) <= self.eps + self.tol:
            self._remember(x)
            return 0, x
        if abs(t) < 1e-6 or unclean:
            # too close to call from the margin: settle it on the minimax value
            res = _solve(prob, self.tol, self.backend, [x] if x is not None else ())
            self.solver_calls += res.solver_calls
            if abs(res.value - self.eps) < self.tol:
                self.boundary_hits += 1
                warnings.warn(f"minimax value {res.value:.9g} within {self.tol:g} of eps={self.eps:g}",
                              BoundaryAmbiguityWarning, stacklevel=3)
            if res.value <= self.eps:
                self._remember(res.witness)
                return 0, res.witness
        return 1, None

    def _remember(self, x):
        self._witnesses.append(np.asarray(x, dtype=float))
        if len(self._witnesses) > 16:
            del self._witnesses[0]

    def flips(self, z) -> np.ndarray:
        """f(z XOR e_i) for every i, as an int8 array."""
        z = z if isinstance(z, SubsetMask) else SubsetMask(int(z), self.data.n)
        if self.memo and z.bits in self._flip_cache:
            return self._flip_cache[z.bits].copy()
        if self._linear and self.data.kind.dim == 2 and z.popcount() <= 12:
            out = self._line_flips(z)
        else:
            out = np.array([self(z.flip(i)) for i in range(z.n)], dtype=np.int8)
        if self.memo:
            self._flip_cache[z.bits] = out.copy()
        return out

    def _line_flips(self, z: SubsetMask) -> np.ndarray:
        n = self.data.n
        W = self.data.A[:, 0, :] / self.data.d0[:, None]
        beta = self.data.b[:, 0] / self.data.d0
        inside = z.indices()
        out = np.zeros(n, dtype=np.int8)
        # removals: small sets, closed form directly
        for i in inside:
            rest = [j for j in inside if j != i]
            out[i] = _cheb2_value(W[rest], beta[rest]) > self.eps
        # additions: g(C + j) = max(g(C), every pair/triple involving j)
        outside = np.setdiff1d(np.arange(n), inside)
        if outside.size == 0:
            return out
        base = _cheb2_value(W[inside], beta[inside])
        g = np.full(outside.size, base)
        g = np.maximum(g, _single_values(W[outside], beta[outside]))
        for p in inside:
            pv = _pair_values(np.broadcast_to(W[p], (outside.size, 2)), W[outside], beta[p], beta[outside])
            g = np.maximum(g, pv)
        for p, q in itertools.combinations(inside, 2):
            Wt = np.stack([np.broadcast_to(W[p], (outside.size, 2)),
                           np.broadcast_to(W[q], (outside.size, 2)), W[outside]], axis=1)
            bt = np.stack([np.full(outside.size, beta[p]), np.full(outside.size, beta[q]), beta[outside]], axis=1)
            tv, _ = _triple_values(Wt, bt)
            g = np.maximum(g, tv)
        out[outside] = g > self.eps
        return out


def f_test(data: Dataset, z, eps: float, tol: float = TAU_G, backend: str = "socp") -> int:
    """Feasibility test: 0 iff the points selected by z fit within eps."""
    if not eps >= 0:
        raise UsageError("eps must be nonnegative")
    return FeasibilityOracle(data, eps, tol=tol, backend=backend, memo=False)(z)


def sample_k_subset(n: int, k: int, rng: np.random.Generator) -> SubsetMask:
    """Uniform k-of-n mask via a partial Fisher-Yates shuffle."""
    if not 0 <= k <= n:
        raise UsageError(f"cannot draw {k} of {n} points")
    pool = list(range(n))
    for j in range(k):
        r = int(rng.integers(j, n))
        pool[j], pool[r] = pool[r], pool[j]
    return SubsetMask.from_indices(pool[:k], n)
