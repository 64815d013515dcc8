"""Monte Carlo simulation of k-query amplitudes <0|M_1 U_1 M_2 ... U_k M_{k+1}|0>.

Oracle ``U_j`` multiplies basis state ``|x>|y>`` by ``f_j(x)``; the oracle
register is the low ``n`` bits of the basis index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .bitkit import walsh_hadamard
from .oracle_forrelation import BooleanOracle
from .streams import as_rng

__all__ = [
    "IdentityOp",
    "HadamardAll",
    "SingleQubitGate",
    "DenseOp",
    "QueryCircuit",
    "KfoldEstimate",
    "amplitude_exact",
    "projection_probabilities",
    "sample_projection",
    "query_budget",
    "second_moment_bound",
    "amplitude_estimate",
    "kfold_circuit",
    "kfold_phi",
    "output_probability_circuit",
]

NORM_TOL = 1e-9


class IdentityOp:
    def apply(self, v):
        return v.copy()

    apply_adjoint = apply

    def dense(self, m: int) -> np.ndarray:
        return np.eye(1 << m, dtype=complex)

    def norm(self) -> float:
        return 1.0


class HadamardAll:
    """H on every qubit."""

    def apply(self, v):
        return walsh_hadamard(v)

    apply_adjoint = apply

    def dense(self, m: int) -> np.ndarray:
        return walsh_hadamard(np.eye(1 << m, dtype=complex))

    def norm(self) -> float:
        return 1.0


class SingleQubitGate:
    def __init__(self, qubit: int, matrix):
        self.qubit = qubit
        self.matrix = np.asarray(matrix, dtype=complex)
        if self.matrix.shape != (2, 2):
            raise ValueError("single-qubit gate must be 2x2")

    def _act(self, v, mat):
        m = v.size.bit_length() - 1
        view = v.reshape(1 << (m - self.qubit - 1), 2, 1 << self.qubit)
        return np.einsum("ab,ibj->iaj", mat, view).reshape(-1)

    def apply(self, v):
        return self._act(v, self.matrix)

    def apply_adjoint(self, v):
        return self._act(v, self.matrix.conj().T)

    def dense(self, m: int) -> np.ndarray:
        return np.stack([self.apply(e) for e in np.eye(1 << m, dtype=complex)], axis=1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


class DenseOp:
    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=complex)

    def apply(self, v):
        return self.matrix @ v

    def apply_adjoint(self, v):
        return self.matrix.conj().T @ v

    def dense(self, m: int) -> np.ndarray:
        return self.matrix.copy()

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


@dataclass
class QueryCircuit:
    m: int
    n: int
    operators: List[object]
    oracles: List[BooleanOracle]

    def __post_init__(self):
        if not 0 <= self.n <= self.m:
            raise ValueError("need 0 <= n <= m")
        if len(self.operators) != len(self.oracles) + 1:
            raise ValueError("need k+1 operators for k oracles")
        for f in self.oracles:
            if f.n != self.n:
                raise ValueError("oracle width differs from n")
        for op in self.operators:
            if isinstance(op, DenseOp) and op.matrix.shape != (1 << self.m, 1 << self.m):
                raise ValueError("dense operator has wrong shape")
            if op.norm() > 1 + NORM_TOL:
                raise ValueError("operator norm exceeds 1")

    @property
    def k(self) -> int:
        return len(self.oracles)

    def zero_state(self) -> np.ndarray:
        v = np.zeros(1 << self.m, dtype=complex)
        v[0] = 1.0
        return v


@dataclass
class KfoldEstimate:
    value: complex
    epsilon: float
    L: int
    queries_used: int
    method: str
    annihilated: bool = False
    level_norms: List[float] = field(default_factory=list)


def _check_caps(c: QueryCircuit) -> None:
    dense = any(isinstance(op, DenseOp) for op in c.operators)
    cap = 12 if dense else 24
    if c.m > cap:
        raise ValueError(f"m={c.m} exceeds cap {cap}")


def amplitude_exact(c: QueryCircuit) -> complex:
    """Sequential state-vector evaluation; queries every oracle on all 2^n inputs."""
    _check_caps(c)
    v = c.operators[-1].apply(c.zero_state())
    for j in range(c.k - 1, -1, -1):
        fv = c.oracles[j].truth_table()
        v = (v.reshape(-1, 1 << c.n) * fv).reshape(-1)
        v = c.operators[j].apply(v)
    return complex(v[0])


def projection_probabilities(alpha: np.ndarray, n: int) -> np.ndarray:
    """p(z) = ||Pi(z) alpha||^2 / ||alpha||^2 over the low n bits."""
    w = (np.abs(alpha) ** 2).reshape(-1, 1 << n).sum(axis=0)
    total = w.sum()
    if total <= 1e-24:
        raise ValueError("zero vector has no projection distribution")
    return w / total


def sample_projection(alpha: np.ndarray, n: int, rng, size: Optional[int] = None):
    rng = as_rng(rng)
    p = projection_probabilities(alpha, n)
    return rng.choice(p.size, size=size, p=p)


def query_budget(n: int, k: int, epsilon: float) -> int:
    """B = 2k ceil(2^{n(1-1/k)} (eps^2/400)^{-1/k})."""
    return 2 * k * math.ceil(2.0 ** (n * (1 - 1 / k)) * (epsilon**2 / 400) ** (-1 / k))


def second_moment_bound(n: int, k: int, L: int) -> float:
    """Upper bound on E|X_k|^2 - |q|^2 for L samples per level."""
    return 2.0 ** (n * (k - 1)) * L ** (-k) * (1 + L / 2.0**n) ** k


def amplitude_estimate(
    c: QueryCircuit, epsilon: float, rng, samples_per_level: Optional[int] = None
) -> KfoldEstimate:
    """Estimate q to within epsilon with probability >= 0.99.

    ``samples_per_level`` forces the sampling branch with that L.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_caps(c)
    k, n = c.k, c.n
    q0 = sum(f.queries for f in c.oracles)
    if samples_per_level is None:
        budget = query_budget(n, k, epsilon)
        if budget >= k << n:
            value = amplitude_exact(c)
            used = sum(f.queries for f in c.oracles) - q0
            return KfoldEstimate(value, epsilon, 1 << n, used, "exact")
        L = budget // k
    else:
        L = int(samples_per_level)
        if L < 1:
            raise ValueError("samples_per_level must be positive")
    rng = as_rng(rng)
    phi = c.zero_state()
    norms = []
    for j in range(k):
        a = c.operators[j].apply_adjoint(phi).reshape(-1, 1 << n)
        w = (np.abs(a) ** 2).sum(axis=0)
        total = w.sum()
        if total <= 1e-300:
            used = sum(f.queries for f in c.oracles) - q0
            return KfoldEstimate(0j, epsilon, L, used, "sample", annihilated=True, level_norms=norms)
        p = w / total
        z = rng.choice(p.size, size=L, p=p)
        fz = c.oracles[j].evaluate_many(z)
        weight = np.bincount(z, weights=fz, minlength=p.size)
        nz = weight != 0
        scale = np.zeros(p.size)
        scale[nz] = weight[nz] / (L * p[nz])
        phi = (a * scale).reshape(-1)
        norms.append(float(np.vdot(phi, phi).real))
    tail = c.operators[k].apply(c.zero_state())
    value = complex(np.vdot(phi, tail))
    used = sum(f.queries for f in c.oracles) - q0
    return KfoldEstimate(value, epsilon, L, used, "sample", level_norms=norms)


def kfold_circuit(oracles: Sequence[BooleanOracle]) -> QueryCircuit:
    """<0|H U_1 H U_2 ... H U_k H|0> on n = m qubits."""
    oracles = list(oracles)
    if not oracles:
        raise ValueError("need at least one oracle")
    n = oracles[0].n
    return QueryCircuit(n, n, [HadamardAll() for _ in range(len(oracles) + 1)], oracles)


def kfold_phi(
    oracles: Sequence[BooleanOracle], epsilon: float, rng, samples_per_level: Optional[int] = None
) -> KfoldEstimate:
    return amplitude_estimate(kfold_circuit(oracles), epsilon, rng, samples_per_level)


def output_probability_circuit(unitaries: Sequence[np.ndarray], oracle: BooleanOracle, output_qubit: int, m: int) -> QueryCircuit:
    """Acceptance probability of V_t U V_{t-1} ... U V_0 |0> as a 2t-query amplitude."""
    vs = [np.asarray(v, dtype=complex) for v in unitaries]
    t = len(vs) - 1
    if t < 1:
        raise ValueError("need at least one query")
    idx = np.arange(1 << m)
    proj = np.diag(((idx >> output_qubit) & 1).astype(complex))
    ops = [DenseOp(v.conj().T) for v in vs[:-1]]
    ops.append(DenseOp(vs[-1].conj().T @ proj @ vs[-1]))
    ops.extend(DenseOp(v) for v in reversed(vs[:-1]))
    return QueryCircuit(m, oracle.n, ops, [oracle] * (2 * t))
