"""GF(2) linear algebra on int bitsets, Gray-code enumeration and Walsh-Hadamard transforms.

Bit ``j`` of an integer is coordinate ``j`` of the corresponding binary
string.  State vectors follow the same little-endian convention: qubit ``q``
of basis index ``i`` is ``(i >> q) & 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "BitVector",
    "BitMatrix",
    "gf2_matvec",
    "gf2_rank",
    "GrayCodeIterator",
    "gray_next",
    "gray_flip_positions",
    "gray_codes",
    "TernaryGrayIterator",
    "ternary_gray_next",
    "fwht_inplace",
    "walsh_hadamard",
    "parity",
]


@dataclass(frozen=True)
class BitVector:
    length: int
    bits: int

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("negative length")
        if self.bits < 0 or self.bits >> self.length:
            raise ValueError("bits outside declared length")

    @classmethod
    def from_string(cls, s: str) -> "BitVector":
        """Parse ``"101"``; character ``j`` is coordinate ``j``."""
        return cls(len(s), sum(1 << j for j, c in enumerate(s) if c == "1"))

    def to_string(self) -> str:
        return "".join("1" if (self.bits >> j) & 1 else "0" for j in range(self.length))

    def __getitem__(self, j: int) -> int:
        return (self.bits >> j) & 1

    def __xor__(self, other: "BitVector") -> "BitVector":
        if other.length != self.length:
            raise ValueError("length mismatch")
        return BitVector(self.length, self.bits ^ other.bits)

    def dot(self, other: "BitVector") -> int:
        return bin(self.bits & other.bits).count("1") & 1


@dataclass(frozen=True)
class BitMatrix:
    """Row-major bit matrix; ``rows[i]`` packs row ``i`` with bit ``j`` = column ``j``."""

    nrows: int
    ncols: int
    rows: Tuple[int, ...]

    def __post_init__(self):
        if self.nrows < 0 or self.ncols < 0 or len(self.rows) != self.nrows:
            raise ValueError("inconsistent shape")
        for r in self.rows:
            if r < 0 or r >> self.ncols:
                raise ValueError("row has bits beyond ncols")

    @classmethod
    def from_array(cls, a) -> "BitMatrix":
        a = np.asarray(a, dtype=np.int64) & 1
        nrows, ncols = a.shape
        rows = tuple(int(sum(int(a[i, j]) << j for j in range(ncols))) for i in range(nrows))
        return cls(nrows, ncols, rows)

    @classmethod
    def identity(cls, k: int) -> "BitMatrix":
        return cls(k, k, tuple(1 << i for i in range(k)))

    @classmethod
    def random(cls, nrows: int, ncols: int, rng: np.random.Generator) -> "BitMatrix":
        rows = tuple(int(r) for r in rng.integers(0, 1 << ncols, size=nrows, dtype=np.uint64)) if ncols else (0,) * nrows
        return cls(nrows, ncols, rows)

    def to_array(self) -> np.ndarray:
        return np.array([[(r >> j) & 1 for j in range(self.ncols)] for r in self.rows], dtype=np.uint8).reshape(
            self.nrows, self.ncols
        )

    def columns(self) -> Tuple[int, ...]:
        """Columns packed as ints, bit ``i`` = row ``i``."""
        return tuple(
            sum(((r >> j) & 1) << i for i, r in enumerate(self.rows)) for j in range(self.ncols)
        )

    def transpose(self) -> "BitMatrix":
        return BitMatrix(self.ncols, self.nrows, self.columns())

    def __matmul__(self, other: "BitMatrix") -> "BitMatrix":
        if self.ncols != other.nrows:
            raise ValueError("dimension mismatch")
        rows = []
        for r in self.rows:
            acc = 0
            j = 0
            while r:
                if r & 1:
                    acc ^= other.rows[j]
                r >>= 1
                j += 1
            rows.append(acc)
        return BitMatrix(self.nrows, other.ncols, tuple(rows))


def gf2_matvec(a: BitMatrix, x: BitVector) -> BitVector:
    if a.ncols != x.length:
        raise ValueError(f"matrix has {a.ncols} columns, vector has length {x.length}")
    out = 0
    for i, r in enumerate(a.rows):
        out |= (bin(r & x.bits).count("1") & 1) << i
    return BitVector(a.nrows, out)


def gf2_rank(a: BitMatrix) -> int:
    work = list(a.rows)
    rank = 0
    for col in range(a.ncols):
        bit = 1 << col
        pivot = next((i for i in range(rank, len(work)) if work[i] & bit), None)
        if pivot is None:
            continue
        work[rank], work[pivot] = work[pivot], work[rank]
        for i in range(len(work)):
            if i != rank and work[i] & bit:
                work[i] ^= work[rank]
        rank += 1
        if rank == len(work):
            break
    return rank


class GrayCodeIterator:
    """Reflected binary Gray code of a given width.

    Yields ``(BitVector, flipped)``; ``flipped`` is ``None`` for the first
    string and the single changed coordinate afterwards.
    """

    def __init__(self, width: int):
        if width < 0:
            raise ValueError("negative width")
        self.width = width
        self.step = 0
        self.state = 0

    def __iter__(self) -> Iterator[Tuple[BitVector, Optional[int]]]:
        return self

    def __next__(self) -> Tuple[BitVector, Optional[int]]:
        if self.step >= 1 << self.width:
            raise StopIteration
        if self.step == 0:
            flipped = None
        else:
            flipped = (self.step & -self.step).bit_length() - 1
            self.state ^= 1 << flipped
        self.step += 1
        return BitVector(self.width, self.state), flipped


def gray_next(it: GrayCodeIterator) -> Optional[Tuple[BitVector, Optional[int]]]:
    """Advance ``it``; returns ``None`` once all strings have been emitted."""
    return next(it, None)


def gray_flip_positions(width: int) -> np.ndarray:
    """Flipped coordinate at steps 1..2^width-1 (trailing-zero count of the step)."""
    steps = np.arange(1, 1 << width, dtype=np.int64)
    return np.bitwise_count(steps ^ (steps - 1)).astype(np.int64) - 1


def gray_codes(width: int) -> np.ndarray:
    i = np.arange(1 << width, dtype=np.int64)
    return i ^ (i >> 1)


class TernaryGrayIterator:
    """Reflected Gray code over ``{-1, 0, +1}^width``.

    Yields ``(trits, changed)`` with ``trits`` a tuple; consecutive tuples
    differ in exactly one position, by one step.
    """

    def __init__(self, width: int):
        if width < 0:
            raise ValueError("negative width")
        self.width = width
        self.step = 0
        self.prev: Optional[Tuple[int, ...]] = None

    def __iter__(self):
        return self

    def _code(self, i: int) -> Tuple[int, ...]:
        digits = []
        for _ in range(self.width):
            digits.append(i % 3)
            i //= 3
        out = [0] * self.width
        higher = 0
        for j in range(self.width - 1, -1, -1):
            d = digits[j]
            out[j] = (2 - d if higher & 1 else d) - 1
            higher += d
        return tuple(out)

    def __next__(self) -> Tuple[Tuple[int, ...], Optional[int]]:
        if self.step >= 3**self.width:
            raise StopIteration
        cur = self._code(self.step)
        changed = None
        if self.prev is not None:
            changed = next(j for j in range(self.width) if cur[j] != self.prev[j])
        self.prev = cur
        self.step += 1
        return cur, changed


def ternary_gray_next(it: TernaryGrayIterator):
    return next(it, None)


def _num_qubits(length: int) -> int:
    n = length.bit_length() - 1
    if length < 1 or 1 << n != length:
        raise ValueError(f"length {length} is not a power of two")
    return n


def fwht_inplace(v: np.ndarray, qubit: int, total_qubits: int) -> np.ndarray:
    """Apply a normalized Hadamard to one qubit of ``v`` in place."""
    if _num_qubits(v.shape[-1]) != total_qubits:
        raise ValueError("vector length does not match total_qubits")
    if not 0 <= qubit < total_qubits:
        raise ValueError("qubit out of range")
    view = v.reshape(v.shape[:-1] + (1 << (total_qubits - qubit - 1), 2, 1 << qubit))
    a = view[..., 0, :].copy()
    b = view[..., 1, :]
    view[..., 0, :] += b
    view[..., 0, :] *= np.sqrt(0.5)
    b -= a
    b *= -np.sqrt(0.5)
    return v


def walsh_hadamard(v: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Hadamard on every qubit of the last axis; returns a new array."""
    n = _num_qubits(v.shape[-1])
    out = np.array(v, dtype=np.result_type(v.dtype, np.float64), copy=True)
    shape = out.shape
    for q in range(n):
        view = out.reshape(shape[:-1] + (1 << (n - q - 1), 2, 1 << q))
        a = view[..., 0, :].copy()
        view[..., 0, :] += view[..., 1, :]
        view[..., 1, :] *= -1
        view[..., 1, :] += a
    if normalize:
        out *= 2.0 ** (-n / 2)
    return out


def parity(values: Sequence[int] | np.ndarray) -> np.ndarray:
    """Popcount parity of nonnegative integers."""
    return (np.bitwise_count(np.asarray(values, dtype=np.uint64)) & 1).astype(np.int64)
