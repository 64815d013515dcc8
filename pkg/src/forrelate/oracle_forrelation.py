"""Forrelation of two Boolean oracles: exact value, affine-subspace estimator and the naive sample estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bitkit import BitMatrix, BitVector, gf2_rank, gray_codes, gray_flip_positions, parity, walsh_hadamard
from .streams import as_rng

__all__ = [
    "BooleanOracle",
    "AffineSubspace",
    "ForrelationEstimate",
    "phi_exact",
    "sample_affine_subspace",
    "mu_affine",
    "choose_k",
    "phi_estimate",
    "phi_naive_sample",
    "EXACT_CAP",
]

EXACT_CAP = 24

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


class BooleanOracle:
    """A ±1-valued function on n-bit strings with a query counter.

    ``table_fn`` maps an int64 array of inputs to an array of ±1 values.
    Inputs are integers whose bit ``j`` is coordinate ``j``.
    """

    def __init__(self, n: int, table_fn: Callable[[np.ndarray], np.ndarray], label: str = ""):
        if n < 0:
            raise ValueError("negative n")
        self.n = n
        self._fn = table_fn
        self.label = label
        self.queries = 0

    def evaluate(self, x: int) -> int:
        self.queries += 1
        return int(self._fn(np.array([x], dtype=np.int64))[0])

    def evaluate_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        self.queries += xs.size
        return self._fn(xs).astype(np.int8)

    def reset_queries(self) -> None:
        self.queries = 0

    def __repr__(self) -> str:
        return f"BooleanOracle(n={self.n}, {self.label or 'custom'})"

    @classmethod
    def from_table(cls, table, label: str = "table") -> "BooleanOracle":
        t = np.asarray(table, dtype=np.int8)
        n = int(t.size).bit_length() - 1
        if t.ndim != 1 or 1 << n != t.size:
            raise ValueError("table length must be a power of two")
        if not np.all(np.abs(t) == 1):
            raise ValueError("table entries must be +1 or -1")
        t = t.copy()
        t.setflags(write=False)
        return cls(n, lambda xs: t[xs], label)

    @classmethod
    def constant(cls, n: int, value: int = 1) -> "BooleanOracle":
        if value not in (1, -1):
            raise ValueError("constant must be +1 or -1")
        return cls(n, lambda xs: np.full(xs.shape, value, dtype=np.int8), f"const:{value:+d}")

    @classmethod
    def parity(cls, n: int, mask: int) -> "BooleanOracle":
        """f(x) = (-1)^{mask.x}."""
        return cls(n, lambda xs: (1 - 2 * parity(xs & mask)).astype(np.int8), f"parity:{mask:x}")

    @classmethod
    def random(cls, n: int, seed: int) -> "BooleanOracle":
        """Pseudorandom function, a pure function of (seed, x)."""
        key = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]

        def fn(xs):
            h = _splitmix64(xs.astype(np.uint64) ^ key)
            return (1 - 2 * (h >> np.uint64(63)).astype(np.int8)).astype(np.int8)

        return cls(n, fn, f"rand:{seed}")

    def truth_table(self) -> np.ndarray:
        """All 2^n values (counts 2^n queries)."""
        return self.evaluate_many(np.arange(1 << self.n, dtype=np.int64))


@dataclass(frozen=True)
class AffineSubspace:
    """The coset {Ax + b : x in F_2^k} of F_2^n."""

    n: int
    k: int
    A: BitMatrix
    b: BitVector

    def __post_init__(self):
        if self.A.nrows != self.n or self.A.ncols != self.k or self.b.length != self.n:
            raise ValueError("shape mismatch")
        if gf2_rank(self.A) != self.k:
            raise ValueError("A must have full column rank")

    def points_gray(self) -> np.ndarray:
        """Ax+b for x in reflected Gray order, built by one column xor per step."""
        cols = np.array(self.A.columns(), dtype=np.int64)
        steps = np.concatenate(([self.b.bits], cols[gray_flip_positions(self.k)]))
        return np.bitwise_xor.accumulate(steps)

    def elements(self) -> np.ndarray:
        """Ax+b for x = 0, 1, ..., 2^k - 1."""
        out = np.empty(1 << self.k, dtype=np.int64)
        out[gray_codes(self.k)] = self.points_gray()
        return out


@dataclass(frozen=True)
class ForrelationEstimate:
    value: float
    epsilon: float
    queries_used: int
    method: str
    k: Optional[int] = None


def phi_exact(f: BooleanOracle, g: BooleanOracle) -> float:
    """<0|H U_f H U_g H|0> by a Walsh-Hadamard transform between two diagonal layers."""
    if f.n != g.n:
        raise ValueError("oracles act on different n")
    n = f.n
    if n > EXACT_CAP:
        raise ValueError(f"n={n} exceeds the exact cap {EXACT_CAP}")
    xs = np.arange(1 << n, dtype=np.int64)
    # outer Hadamard layers act on |0> and <0| and reduce to uniform vectors
    v = g.evaluate_many(xs) * 2.0 ** (-n / 2)
    w = walsh_hadamard(v)
    return float(np.dot(f.evaluate_many(xs), w) * 2.0 ** (-n / 2))


def sample_affine_subspace(n: int, k: int, rng) -> AffineSubspace:
    """Uniform element of A_{n,k}: rejection-sample a full-rank basis, uniform offset."""
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    rng = as_rng(rng)
    while True:
        a = BitMatrix.random(n, k, rng)
        if gf2_rank(a) == k:
            break
    b = int(rng.integers(0, 1 << n, dtype=np.uint64)) if n else 0
    return AffineSubspace(n, k, a, BitVector(n, b))


def mu_affine(f: BooleanOracle, g: BooleanOracle, s: AffineSubspace, t: AffineSubspace) -> float:
    """2^{n-k} <S| U_f H U_g |T> with 2^k queries to each oracle."""
    n, k = s.n, s.k
    if t.k != k or t.n != n or f.n != n or g.n != n:
        raise ValueError("dimension mismatch")
    b, d = s.b.bits, t.b.bits
    codes = gray_codes(k)

    # psi1 over x, written at Gray-order positions: f(Ax+b) (-1)^{(Ax).d}
    s_pts = s.points_gray()
    psi1 = f.evaluate_many(s_pts) * (1 - 2 * parity((s_pts ^ b) & d))

    # psi2: scatter through z = C^T A x
    ax = s_pts ^ b
    z = np.zeros(1 << k, dtype=np.int64)
    for j, c in enumerate(t.A.columns()):
        z |= parity(ax & c) << j
    psi2 = np.zeros(1 << k)
    np.add.at(psi2, z, psi1)

    psi3 = walsh_hadamard(psi2)

    # psi4 weights over y: g(Cy+d) (-1)^{b.(Cy) + b.d}
    t_pts = t.points_gray()
    weights = g.evaluate_many(t_pts) * (1 - 2 * parity((t_pts ^ d) & b))
    sign_bd = 1 - 2 * (bin(b & d).count("1") & 1)
    total = np.dot(psi3[codes], weights)
    return float(sign_bd * 2.0 ** (n / 2 - 1.5 * k) * total)


def choose_k(n: int, epsilon: float) -> int:
    """Smallest k with 2^{2k} >= 2^16 2^n / epsilon^2."""
    target = 16 + n + 2 * math.log2(1 / epsilon)
    k = max(0, math.ceil(target / 2) - 1)
    while 2 * k < target - 1e-12:
        k += 1
    return k


def phi_estimate(
    f: BooleanOracle, g: BooleanOracle, epsilon: float, rng, k: Optional[int] = None
) -> ForrelationEstimate:
    """Estimate Phi(f, g) to additive error epsilon with probability >= 0.99.

    ``k`` forces the affine branch with that subspace dimension (used to
    probe the estimator's variance where the default k would reach n).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if f.n != g.n:
        raise ValueError("oracles act on different n")
    n = f.n
    q0 = f.queries + g.queries
    if k is None:
        if epsilon <= 2.0 ** (-n / 2) or choose_k(n, epsilon) >= n:
            value = phi_exact(f, g)
            return ForrelationEstimate(value, epsilon, f.queries + g.queries - q0, "exact")
        k = choose_k(n, epsilon)
    elif not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    rng = as_rng(rng)
    s = sample_affine_subspace(n, k, rng)
    t = sample_affine_subspace(n, k, rng)
    value = mu_affine(f, g, s, t)
    return ForrelationEstimate(value, epsilon, f.queries + g.queries - q0, "affine", k)


def phi_naive_sample(
    f: BooleanOracle,
    g: BooleanOracle,
    L: int,
    rng=None,
    xs: Optional[np.ndarray] = None,
    ys: Optional[np.ndarray] = None,
) -> float:
    """Sample forrelation L^{-2} 2^{n/2} sum_{i,j} f(x_i) g(y_j) (-1)^{x_i.y_j}.

    ``xs``/``ys`` override the uniform draws.
    """
    if L < 1:
        raise ValueError("L must be positive")
    n = f.n
    rng = as_rng(rng)
    if xs is None:
        xs = rng.integers(0, 1 << n, size=L, dtype=np.int64)
    if ys is None:
        ys = rng.integers(0, 1 << n, size=L, dtype=np.int64)
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.size != L or ys.size != L:
        raise ValueError("sample arrays must have length L")
    fx = f.evaluate_many(xs).astype(np.float64)
    gy = g.evaluate_many(ys).astype(np.float64)
    if n <= 20 and L * L > n << n:
        hist = np.bincount(ys, weights=gy, minlength=1 << n)
        total = np.dot(fx, walsh_hadamard(hist, normalize=False)[xs])
    else:
        total = 0.0
        chunk = max(1, (1 << 22) // L)
        for i in range(0, L, chunk):
            signs = 1 - 2 * parity(xs[i : i + chunk, None] & ys[None, :])
            total += fx[i : i + chunk] @ (signs @ gy)
    return float(total * 2.0 ** (n / 2) / L**2)
