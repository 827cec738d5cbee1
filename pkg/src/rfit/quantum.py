"""Exact simulation of the Bernstein-Vazirani influence estimator.

After the Hadamard / phase-oracle / Hadamard sequence the top N qubits
hold the amplitudes

    I(s) = 2^-N sum_t (-1)^(f(t) + s.t),

the normalised Walsh-Hadamard spectrum of (-1)^f.  Measuring gives s with
probability I(s)^2, and P(s_i = 1) is the influence of point i.  The
simulation therefore computes the spectrum with a fast transform and
samples measurements from it; the ancilla qubit factors out and is not
materialised.

Simulation cost and logical query cost are reported separately: the
table costs up to 2^N minimax solves to build, while the modelled circuit
invokes the oracle once per measurement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InternalConsistencyError, SchemaError, UsageError
from .geometry import Dataset
from .influence import EstimatorTrace, InfluenceVector, Method, feasibility_table

PARSEVAL_TOL = 1e-9


@dataclass
class OracleTable:
    bits: np.ndarray
    n: int
    eps: float
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.size != 1 << self.n:
            raise UsageError(f"table has {self.bits.size} entries, expected 2^{self.n}")

    def __getitem__(self, t) -> int:
        return int(self.bits[t])

    def is_monotone(self) -> bool:
        """t <= t' bitwise implies table[t] <= table[t']; checked on covering pairs."""
        idx = np.arange(self.bits.size, dtype=np.int64)
        for i in range(self.n):
            up = idx[(idx >> i) & 1 == 0]
            if np.any(self.bits[up] > self.bits[up | (1 << i)]):
                return False
        return True


@dataclass
class FourierSpectrum:
    coeffs: np.ndarray
    n: int
    eps: Optional[float] = None

    def parseval(self) -> float:
        return float(np.sum(self.coeffs**2))

    def probabilities(self) -> np.ndarray:
        return self.coeffs**2


@dataclass
class MeasurementRecord:
    samples: np.ndarray
    queries: int
    seed: int

    @property
    def M(self) -> int:
        return int(self.samples.size)


def build_oracle_table(data: Dataset, eps: float, cap: Optional[int] = None, **kw) -> OracleTable:
    """Truth table of f over every subset, shared with the exact enumerator."""
    bits, stats = feasibility_table(data, eps, cap=cap, **kw)
    return OracleTable(bits, data.n, float(eps), dict(stats))


def fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform, in place, O(n log n).

    ``a`` must be a contiguous float array whose length is a power of two.
    """
    size = a.size
    if size & (size - 1):
        raise UsageError("transform length must be a power of two")
    h = 1
    while h < size:
        v = a.reshape(-1, 2, h)
        x = v[:, 0, :].copy()
        v[:, 0, :] += v[:, 1, :]
        v[:, 1, :] *= -1.0
        v[:, 1, :] += x
        h *= 2
    return a


def fwht_spectrum(table) -> FourierSpectrum:
    """Normalised spectrum 2^-N WHT((-1)^f) of an oracle table."""
    if isinstance(table, OracleTable):
        bits, n, eps = table.bits, table.n, table.eps
    else:
        bits = np.asarray(table, dtype=np.uint8)
        n, eps = bits.size.bit_length() - 1, None
    a = 1.0 - 2.0 * bits.astype(np.float64)
    fwht(a)
    a /= float(bits.size)
    return FourierSpectrum(a, n, eps)


def influence_from_spectrum(spec: FourierSpectrum) -> InfluenceVector:
    """alpha_i = sum of I(s)^2 over every s with bit i set."""
    p = spec.probabilities()
    total = float(p.sum())
    if abs(total - 1.0) > PARSEVAL_TOL:
        raise InternalConsistencyError(f"Parseval violated: sum I(s)^2 = {total!r}")
    idx = np.arange(p.size, dtype=np.int64)
    alphas = np.array([p[(idx >> i) & 1 == 1].sum() for i in range(spec.n)])
    return InfluenceVector(np.clip(alphas, 0.0, 1.0), Method.EXACT_FOURIER,
                           float(spec.eps) if spec.eps is not None else float("nan"))


def measurement_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniform draws start .. start+count-1 of a counter-based stream.

    Draw m depends only on (seed, m), so any partition of the M draws into
    batches reproduces the same samples.
    """
    if seed < 0:
        raise UsageError("seed must be nonnegative")
    block, lane = divmod(int(start), 4)
    gen = np.random.Generator(np.random.Philox(key=int(seed), counter=[block, 0, 0, 0]))
    return gen.random(count + lane)[lane:]


def sample_measurements(spec: FourierSpectrum, seed: int, start: int, count: int) -> np.ndarray:
    cdf = np.cumsum(spec.probabilities())
    u = measurement_uniforms(seed, start, count) * cdf[-1]
    # first index whose cumulative mass exceeds u: zero-probability states are never drawn
    s = np.searchsorted(cdf, u, side="right")
    return np.minimum(s, cdf.size - 1).astype(np.int64)


def bv_sample(spec: FourierSpectrum, M: int, seed: int = 0):
    """Simulate M independent BV runs and average the measured bits.

    Returns
    -------
    (InfluenceVector, MeasurementRecord)
    """
    if M < 1:
        raise UsageError("M must be at least 1")
    samples = sample_measurements(spec, seed, 0, M)
    bits = (samples[:, None] >> np.arange(spec.n)[None, :]) & 1
    alphas = bits.mean(axis=0)
    eps = float(spec.eps) if spec.eps is not None else float("nan")
    return (InfluenceVector(alphas, Method.QUANTUM, eps, M=M, seed=seed),
            MeasurementRecord(samples, M, seed))


def query_report(classical: EstimatorTrace, quantum: MeasurementRecord, n: int) -> dict:
    """Logical oracle queries of both estimators and their ratio."""
    cm, qm = classical.M, quantum.M
    return {
        "N": n,
        "classical_iterations": cm,
        "quantum_iterations": qm,
        "classical_queries_per_iteration": classical.queries_per_iteration,
        "quantum_queries_per_iteration": 1,
        "classical_queries": classical.oracle_queries,
        "quantum_queries": quantum.queries,
        "ratio": classical.oracle_queries / quantum.queries if cm == qm else None,
        "classical_queries_nm": n * cm,
        "ratio_nm": n * cm / quantum.queries if cm == qm else None,
        "classical_solver_calls": classical.solver_calls,
    }


def accounting(n: int, M: int) -> dict:
    """Query counts implied by the two estimators' definitions for N, M."""
    return {
        "N": n,
        "M": M,
        "classical_queries": M * (n + 1),
        "quantum_queries": M,
        "ratio": n + 1,
        "classical_queries_nm": M * n,
        "ratio_nm": n,
    }


# ---------------------------------------------------------------------------
# binary export


def _write(path: Path, array: np.ndarray, dtype: str, header: dict):
    path = Path(path)
    np.asarray(array).astype(dtype).tofile(path.with_suffix(".bin"))
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def export_table(table: OracleTable, path) -> None:
    """Write ``<path>.bin`` (uint8 per entry) and ``<path>.json`` header."""
    _write(path, table.bits, "<u1", {"N": table.n, "eps": table.eps, "dtype": "uint8",
                                     "content": "oracle-table"})


def export_spectrum(spec: FourierSpectrum, path) -> None:
    """Write ``<path>.bin`` (little-endian float64) and ``<path>.json`` header."""
    _write(path, spec.coeffs, "<f8", {"N": spec.n, "eps": spec.eps, "norm": "2^-N", "dtype": "float64",
                                      "content": "fourier-spectrum"})


def _read(path):
    path = Path(path)
    try:
        header = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read header: {exc}") from None
    if "N" not in header:
        raise SchemaError("missing key", field="N")
    dtype = {"uint8": "<u1", "float64": "<f8"}.get(header.get("dtype"))
    if dtype is None:
        raise SchemaError("unknown dtype", field="dtype")
    data = np.fromfile(path.with_suffix(".bin"), dtype=dtype)
    if data.size != 1 << int(header["N"]):
        raise SchemaError(f"payload has {data.size} entries, header says N={header['N']}")
    return header, data


def load_table(path) -> OracleTable:
    header, data = _read(path)
    return OracleTable(data.astype(np.uint8), int(header["N"]), header.get("eps"))


def load_spectrum(path) -> FourierSpectrum:
    header, data = _read(path)
    if header.get("norm") != "2^-N":
        raise SchemaError("unsupported normalisation", field="norm")
    return FourierSpectrum(data.astype(np.float64), int(header["N"]), header.get("eps"))
