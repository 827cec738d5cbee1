"""Influence of each data point on the feasibility test f.

alpha_i is the fraction of subsets z whose feasibility changes when point
i is toggled.  This module computes it exactly from a full truth table of
f (small N), exactly over the k-subset space the sampler draws from, and
approximately with the k-subset Monte Carlo sampler.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import UsageError
from .geometry import Dataset
from .mask import SubsetMask
from .minimax import TAU_G, FeasibilityOracle, sample_k_subset

DEFAULT_MAX_EXACT_N = 20


class Method(enum.Enum):
    EXACT_FULL = "exact-full"
    EXACT_FOURIER = "exact-full-via-fourier"
    EXACT_KSUBSET = "exact-ksubset"
    CLASSICAL = "classical-sampled"
    QUANTUM = "quantum-sampled"


@dataclass
class InfluenceVector:
    alphas: np.ndarray
    method: Method
    eps: float
    M: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        if np.any(self.alphas < 0) or np.any(self.alphas > 1):
            raise ValueError("influences must lie in [0, 1]")

    def __len__(self):
        return len(self.alphas)

    @property
    def n(self) -> int:
        return len(self.alphas)

    def normalized(self) -> np.ndarray:
        return normalize(self.alphas)


@dataclass
class EstimatorTrace:
    """Per-iteration record of the k-subset sampler.

    ``X[m, i]`` is 1 when toggling point i changed f at the m-th sample.
    ``oracle_queries`` counts logical calls of f; ``solver_calls`` counts
    the minimax solves actually run (fewer, thanks to memoisation).
    """

    masks: list
    X: np.ndarray
    oracle_queries: int
    solver_calls: int = 0
    seed: Optional[int] = None

    @property
    def M(self) -> int:
        return len(self.masks)

    @property
    def queries_per_iteration(self) -> int:
        return self.oracle_queries // max(self.M, 1)

    def estimate(self) -> np.ndarray:
        return self.X.mean(axis=0)


def max_exact_n() -> int:
    """Cap on N for 2^N enumeration; RFIT_MAX_EXACT_N overrides the default."""
    raw = os.environ.get("RFIT_MAX_EXACT_N")
    if raw is None:
        return DEFAULT_MAX_EXACT_N
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"RFIT_MAX_EXACT_N must be an integer, got {raw!r}") from None


def _check_cap(n, cap):
    cap = max_exact_n() if cap is None else cap
    if n > cap:
        raise UsageError(
            f"N={n} exceeds the exact-enumeration cap of {cap}; use the sampled estimator "
            f"(method 'classical' or raise RFIT_MAX_EXACT_N)")


# ---------------------------------------------------------------------------
# truth table with monotone pruning

_TABLE_CACHE: dict = {}
_TABLE_CACHE_SIZE = 32


def _popcounts(n):
    idx = np.arange(1 << n, dtype=np.int64)
    pc = np.zeros(1 << n, dtype=np.int8)
    for i in range(n):
        pc += ((idx >> i) & 1).astype(np.int8)
    return idx, pc


def feasibility_table(data: Dataset, eps: float, cap: Optional[int] = None, tol: float = TAU_G,
                      backend: str = "socp"):
    """Full truth table of f over all 2^N masks.

    Masks are visited level by level from the empty set.  A mask with an
    infeasible immediate subset is infeasible without a solve; a mask inside
    the consensus set of a known witness is feasible without a solve.

    Returns
    -------
    table : uint8 array of length 2^N (read-only, shared through a cache)
    stats : dict with ``solver_calls``, ``oracle_evaluations``,
        ``pruned_infeasible`` and ``certified_feasible``
    """
    n = data.n
    _check_cap(n, cap)
    if not eps >= 0:
        raise UsageError("eps must be nonnegative")
    key = (data.fingerprint(), float(eps), tol, backend)
    hit = _TABLE_CACHE.get(key)
    if hit is not None:
        return hit

    oracle = FeasibilityOracle(data, eps, tol=tol, backend=backend, memo=False)
    size = 1 << n
    table = np.full(size, -1, dtype=np.int8)
    table[0] = 0
    idx, pc = _popcounts(n)
    certs = np.zeros(0, dtype=np.int64)
    stats = {"oracle_evaluations": 0, "pruned_infeasible": 0, "certified_feasible": 0}

    for level in range(1, n + 1):
        masks = idx[pc == level]
        infeasible = np.zeros(masks.size, dtype=bool)
        for i in range(n):
            bit = np.int64(1) << i
            has = (masks & bit) != 0
            infeasible[has] |= table[masks[has] ^ bit] == 1
        table[masks[infeasible]] = 1
        stats["pruned_infeasible"] += int(infeasible.sum())
        rest = masks[~infeasible]
        if certs.size and rest.size:
            covered = np.zeros(rest.size, dtype=bool)
            for start in range(0, certs.size, 256):
                cs = certs[start:start + 256]
                covered |= np.any((rest[:, None] & cs[None, :]) == rest[:, None], axis=1)
            table[rest[covered]] = 0
            stats["certified_feasible"] += int(covered.sum())
            rest = rest[~covered]
        new_certs = []
        for z in rest.tolist():
            if any(z & c == z for c in new_certs):
                table[z] = 0
                stats["certified_feasible"] += 1
                continue
            f, x = oracle.evaluate(z, witness=True)
            stats["oracle_evaluations"] += 1
            table[z] = f
            if f == 0 and x is not None:
                agree = np.flatnonzero(data.residuals(x) <= eps)
                S = z
                for j in agree.tolist():
                    S |= 1 << j
                if S != z:
                    new_certs.append(S)
        if new_certs:
            certs = _maximal(np.concatenate([certs, np.array(new_certs, dtype=np.int64)]))

    stats["solver_calls"] = oracle.solver_calls
    stats["boundary_hits"] = oracle.boundary_hits
    out = table.astype(np.uint8)
    out.setflags(write=False)
    if len(_TABLE_CACHE) >= _TABLE_CACHE_SIZE:
        _TABLE_CACHE.pop(next(iter(_TABLE_CACHE)))
    _TABLE_CACHE[key] = (out, stats)
    return out, stats


def _maximal(certs):
    certs = np.unique(certs)
    keep = []
    for c in sorted(certs.tolist(), key=lambda v: -bin(v).count("1")):
        if not any(c & k == c for k in keep):
            keep.append(c)
    return np.array(keep, dtype=np.int64)


def influence_from_table(table) -> np.ndarray:
    """alpha_i = 2^-N |{z : T[z ^ e_i] != T[z]}|."""
    table = np.asarray(table)
    size = table.size
    n = size.bit_length() - 1
    if 1 << n != size:
        raise UsageError("truth table length must be a power of two")
    idx = np.arange(size, dtype=np.int64)
    return np.array([np.count_nonzero(table != table[idx ^ (1 << i)]) for i in range(n)]) / size


def exact_influence_full(data: Dataset, eps: float, cap: Optional[int] = None, **kw) -> InfluenceVector:
    """Influences by enumerating all 2^N subsets (N <= cap)."""
    table, _ = feasibility_table(data, eps, cap=cap, **kw)
    return InfluenceVector(influence_from_table(table), Method.EXACT_FULL, float(eps))


def exact_influence_ksubset(data: Dataset, eps: float, k: Optional[int] = None,
                            oracle: Optional[FeasibilityOracle] = None) -> InfluenceVector:
    """Expectation of the sampler's indicators over every k-subset.

    This is what the k-subset sampler converges to; it is generally not the
    same number as the 2^N influence.
    """
    n = data.n
    k = data.kind.combinatorial_dim if k is None else k
    if not 0 <= k <= n:
        raise UsageError(f"k={k} must lie in [0, N={n}]")
    oracle = oracle or FeasibilityOracle(data, eps)
    total = np.zeros(n)
    count = 0
    for combo in combinations(range(n), k):
        z = SubsetMask.from_indices(combo, n)
        total += oracle.flips(z) != oracle(z)
        count += 1
    return InfluenceVector(total / count, Method.EXACT_KSUBSET, float(eps))


# ---------------------------------------------------------------------------
# sampler


def iteration_rng(seed: int, m: int) -> np.random.Generator:
    """Independent stream for iteration m, derived from (seed, m) only."""
    return np.random.default_rng([int(seed), int(m)])


def _iteration(oracle, n, k, seed, m):
    z = sample_k_subset(n, k, iteration_rng(seed, m))
    fz = oracle(z)
    row = (oracle.flips(z) != fz).astype(np.uint8)
    return z, row, n + 1


def sample_influence_classical(data: Dataset, eps: float, k: Optional[int] = None, M: int = 800,
                               seed: int = 0, executor=None, oracle: Optional[FeasibilityOracle] = None):
    """Monte Carlo influence estimate over random k-subsets.

    Each iteration draws a k-subset z, evaluates f(z) once and compares it
    against f(z XOR e_i) for every i; the estimate is the per-point mean of
    those disagreement indicators.  f(z) is reused across the inner loop, so
    each iteration costs exactly N + 1 logical queries.

    Parameters
    ----------
    k : int, optional
        Subset size; defaults to the model's combinatorial dimension d + 1.
    executor : concurrent.futures.Executor, optional
        Runs iterations concurrently.  Output is identical to the serial run
        because every iteration seeds its own stream from (seed, m).

    Returns
    -------
    (InfluenceVector, EstimatorTrace)
    """
    n = data.n
    k = data.kind.combinatorial_dim if k is None else int(k)
    if M < 1:
        raise UsageError("M must be at least 1")
    if not 0 <= k <= n:
        raise UsageError(f"k={k} must lie in [0, N={n}]")
    oracle = oracle or FeasibilityOracle(data, eps)
    calls_before = oracle.solver_calls
    if executor is None:
        results = [_iteration(oracle, n, k, seed, m) for m in range(M)]
    else:
        results = list(executor.map(lambda m: _iteration(oracle, n, k, seed, m), range(M)))
    masks = [r[0] for r in results]
    X = np.vstack([r[1] for r in results])
    queries = sum(r[2] for r in results)
    trace = EstimatorTrace(masks, X, queries, oracle.solver_calls - calls_before, seed)
    est = InfluenceVector(trace.estimate(), Method.CLASSICAL, float(eps), M=M, seed=seed)
    return est, trace


# ---------------------------------------------------------------------------
# accuracy


def hoeffding_bound(M: int, delta: float) -> float:
    """Lower bound 1 - 2 exp(-2 M delta^2) on P(|alpha_hat - alpha| < delta), clamped to [0, 1]."""
    if delta <= 0:
        raise UsageError("delta must be positive")
    return min(1.0, max(0.0, 1.0 - 2.0 * math.exp(-2.0 * M * delta * delta)))


def hoeffding_bound_raw(M: int, delta: float) -> float:
    """Unclamped 1 - 2 exp(-2 M delta^2); may be negative for small M."""
    return 1.0 - 2.0 * math.exp(-2.0 * M * delta * delta)


def within_delta_fraction(est, exact, delta: float = 0.05) -> float:
    """Fraction of points whose estimate lies strictly within delta of the reference."""
    a = est.alphas if isinstance(est, InfluenceVector) else np.asarray(est, dtype=float)
    b = exact.alphas if isinstance(exact, InfluenceVector) else np.asarray(exact, dtype=float)
    if a.shape != b.shape:
        raise UsageError(f"influence vectors differ in length ({a.size} vs {b.size})")
    if isinstance(est, InfluenceVector) and isinstance(exact, InfluenceVector) and est.eps != exact.eps:
        raise UsageError(f"influence vectors use different eps ({est.eps} vs {exact.eps})")
    if a.size == 0:
        return 1.0
    return float(np.mean(np.abs(a - b) < delta))


def normalize(alphas) -> np.ndarray:
    """Scale influences so the largest is 1; an all-zero vector is returned as is."""
    a = np.asarray(alphas.alphas if isinstance(alphas, InfluenceVector) else alphas, dtype=float)
    top = float(np.max(a)) if a.size else 0.0
    if top <= 0:
        return a.copy()
    return a / top
