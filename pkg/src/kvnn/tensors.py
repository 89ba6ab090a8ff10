"""Dense tensor utilities: multi-index enumeration, multinomial arithmetic,
and the KVT1 binary tensor file format.

All arrays are numpy float64 in row-major (C) order. Multi-indices over d
variables with total degree r are enumerated in one canonical order used
everywhere: descending lexicographic on the exponent tuple, so the pure
power of the first coordinate comes first. For d=2, r=2 the order is
(2,0), (1,1), (0,2).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

# Exact integer factorials stay cheap and exactly representable well past
# this, but degree 20 bounds the cost of every enumeration-based oracle.
MAX_MULTINOMIAL_DEGREE = 20

KVT_MAGIC = b"KVT1"


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector alpha with its total degree."""

    alpha: tuple[int, ...]

    def __post_init__(self):
        if any(a < 0 for a in self.alpha):
            raise ValueError(f"multi-index components must be >= 0, got {self.alpha}")

    @property
    def degree(self) -> int:
        return sum(self.alpha)

    def __len__(self) -> int:
        return len(self.alpha)


def _descending_compositions(d: int, r: int) -> Iterator[tuple[int, ...]]:
    if d == 1:
        yield (r,)
        return
    for k in range(r, -1, -1):
        for rest in _descending_compositions(d - 1, r - k):
            yield (k,) + rest


def enumerate_multi_indices(d: int, r: int) -> list[MultiIndex]:
    """All multi-indices over d variables with total degree r.

    Returns exactly C(d+r-1, r) indices in descending lexicographic order.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if r < 0:
        raise ValueError(f"degree must be >= 0, got {r}")
    return [MultiIndex(alpha) for alpha in _descending_compositions(d, r)]


def multi_index_count(d: int, r: int) -> int:
    """C(d+r-1, r): the number of degree-r monomials in d variables."""
    if d < 1 or r < 0:
        raise ValueError(f"need d >= 1 and r >= 0, got d={d}, r={r}")
    return math.comb(d + r - 1, r)


def multinomial_coefficient(m: MultiIndex | Sequence[int]) -> int:
    """r! / (alpha_1! ... alpha_d!) in exact integer arithmetic."""
    alpha = m.alpha if isinstance(m, MultiIndex) else tuple(m)
    degree = sum(alpha)
    if degree > MAX_MULTINOMIAL_DEGREE:
        raise OverflowError(
            f"multinomial degree {degree} exceeds the exact-arithmetic guard "
            f"({MAX_MULTINOMIAL_DEGREE})"
        )
    out = math.factorial(degree)
    for a in alpha:
        out //= math.factorial(a)
    return out


def monomial_eval(x: np.ndarray, m: MultiIndex | Sequence[int]) -> float:
    """x^alpha = prod_j x_j^alpha_j."""
    alpha = m.alpha if isinstance(m, MultiIndex) else tuple(m)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != len(alpha):
        raise ValueError(f"vector of length {x.shape} does not match alpha of length {len(alpha)}")
    out = 1.0
    for xj, aj in zip(x, alpha):
        if aj:
            out *= xj ** aj
    return float(out)


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Reject NaN/Inf; every public value carrier must stay finite."""
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


def write_kvt(path, arr: np.ndarray) -> None:
    """Write a tensor in the KVT1 format.

    Layout: magic "KVT1", u32 rank, u32 per shape entry, then the row-major
    float64 payload. All integers and floats little-endian.
    """
    arr = check_finite(arr, "KVT payload")
    with open(path, "wb") as fh:
        fh.write(KVT_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for extent in arr.shape:
            fh.write(struct.pack("<I", extent))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_kvt(path) -> np.ndarray:
    """Read a KVT1 tensor file; inverse of write_kvt."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != KVT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {KVT_MAGIC!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise ValueError(f"{path}: truncated payload ({len(payload)} of {8 * count} bytes)")
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return check_finite(arr, f"KVT file {path}")
