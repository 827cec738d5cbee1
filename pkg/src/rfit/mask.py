"""N-bit subset selection vectors.

Bit ``i`` of the integer encoding corresponds to data point ``i`` (bit 0 is
the first point), the same convention used for oracle-table indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class SubsetMask:
    bits: int
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise UsageError("mask population size must be nonnegative")
        if self.bits < 0 or self.bits >> self.n:
            raise UsageError(f"mask bits {self.bits:#x} do not fit in {self.n} points")

    @classmethod
    def empty(cls, n: int) -> "SubsetMask":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "SubsetMask":
        return cls((1 << n) - 1, n)

    @classmethod
    def from_indices(cls, indices: Iterable[int], n: int) -> "SubsetMask":
        bits = 0
        for i in indices:
            if not 0 <= i < n:
                raise UsageError(f"index {i} out of range for {n} points")
            bits |= 1 << int(i)
        return cls(bits, n)

    @classmethod
    def from_bools(cls, flags) -> "SubsetMask":
        flags = np.asarray(flags, dtype=bool)
        return cls.from_indices(np.flatnonzero(flags).tolist(), len(flags))

    def flip(self, i: int) -> "SubsetMask":
        """z XOR e_i."""
        if not 0 <= i < self.n:
            raise UsageError(f"index {i} out of range for {self.n} points")
        return SubsetMask(self.bits ^ (1 << i), self.n)

    def popcount(self) -> int:
        return bin(self.bits).count("1")

    def __len__(self):
        return self.popcount()

    def __contains__(self, i: int) -> bool:
        return bool(self.bits >> i & 1)

    def indices(self) -> list:
        bits, out, i = self.bits, [], 0
        while bits:
            if bits & 1:
                out.append(i)
            bits >>= 1
            i += 1
        return out

    def to_bools(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=bool)
        out[self.indices()] = True
        return out

    def issubset(self, other: "SubsetMask") -> bool:
        return self.bits & ~other.bits == 0

    def __str__(self):
        # most significant point first, like a written bitstring z_N ... z_1
        return format(self.bits, f"0{self.n}b") if self.n else ""


def mask_indices(mask, n: int) -> list:
    """Normalise a SubsetMask / bool array / index list to sorted indices."""
    if isinstance(mask, SubsetMask):
        if mask.n != n:
            raise UsageError(f"mask is over {mask.n} points but data has {n}")
        return mask.indices()
    arr = np.asarray(mask)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise UsageError(f"boolean mask must have length {n}")
        return np.flatnonzero(arr).tolist()
    idx = sorted(int(i) for i in arr.ravel())
    if idx and not (0 <= idx[0] and idx[-1] < n):
        raise UsageError("mask index out of range")
    return idx
