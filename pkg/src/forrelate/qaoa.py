"""Level-2 QAOA mean values for Ising cost functions and recursive QAOA.

Cost function: C(z) = sum_{pq} J_pq z_p z_q + sum_p h_p z_p + offset with
z = (-1)^x.  The variational state is

    |psi> = e^{-i b2 B} e^{-i g2 C} e^{-i b1 B} e^{-i g1 C} |+^n>,   B = sum_p X_p,

and every method here computes <psi|Z_s Z_t|psi> for one edge.  Four routes:

* ``zz_mean_statevector``: dense simulation of the lightcone N_2(s, t).
* ``zz_mean_Aprime``: two Heisenberg-evolved states on N_2(s), N_2(t) and an overlap.
* ``zz_mean_Adoubleprime``: reduced density matrix on N_1(s, t) from a cosine product.
* ``zz_mean_forrelation``: Monte Carlo over graph-forrelation instances.

The last two split the mean as Re sum_v w_v <v1 v2|U|v3 v4> eta(v) over
bit strings v grouped into classes by the symmetries of the mean.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .graph_core import Graph, contract_edge, generate_grid
from .graph_forrelation import GraphForrelationInstance, phi_graph_estimate
from .streams import as_rng, derive_rng
from .two_local import TwoLocalFunction

__all__ = [
    "IsingInstance",
    "QAOAAngles",
    "ConstraintRecord",
    "ConstraintStack",
    "EdgeMeanReport",
    "LightCone",
    "MethodCounter",
    "lightcone",
    "symmetry_classes",
    "two_qubit_kernel",
    "local_operators",
    "edge_means",
    "predicted_seconds",
    "zz_mean_statevector",
    "z_mean_statevector",
    "zz_mean_Aprime",
    "z_mean_Aprime",
    "zz_mean_Adoubleprime",
    "reduced_state",
    "zz_mean_forrelation",
    "zz_mean_auto",
    "calibrate",
    "energy",
    "energy_statevector",
    "level1_zz_mean",
    "level1_energy_grid",
    "optimize_level1",
    "optimize_beta2",
    "exact_maxcut",
    "contract_ising",
    "rqaoa",
    "RQAOAStep",
    "RQAOAResult",
]

log = logging.getLogger(__name__)

Edge = Tuple[int, int]
STATEVECTOR_CAP = 26
APRIME_CAP = 24
ADOUBLEPRIME_CAP = 13
EXACT_CAP = 26
DEFAULT_CUTOFF = 0.1
ZERO_COUPLING = 1e-12


def _edge(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class IsingInstance:
    """Couplings on the edges of ``graph``, optional vertex fields and a constant offset."""

    graph: Graph
    J: Mapping[Edge, float]
    energy_offset: float = 0.0
    fields: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        J = {_edge(int(u), int(v)): float(c) for (u, v), c in self.J.items()}
        if set(J) != set(self.graph.edges):
            raise ValueError("couplings must be given exactly on the graph's edges")
        if any(abs(c) <= ZERO_COUPLING for c in J.values()):
            raise ValueError("zero couplings must be removed from the graph")
        h = {int(p): float(c) for p, c in self.fields.items() if c != 0}
        if any(not 0 <= p < self.graph.n for p in h):
            raise ValueError("field on a vertex outside the graph")
        for c in list(J.values()) + list(h.values()) + [self.energy_offset]:
            if not math.isfinite(c):
                raise ValueError("couplings and fields must be finite")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "fields", h)

    @classmethod
    def create(cls, graph: Graph, J: Mapping[Edge, float], energy_offset: float = 0.0, fields=None) -> "IsingInstance":
        """Like the constructor but drops zero couplings (and their edges) first."""
        J = {_edge(int(u), int(v)): float(c) for (u, v), c in J.items()}
        zero = [e for e in graph.edges if abs(J.get(e, 0.0)) <= ZERO_COUPLING]
        if zero:
            graph = graph.without_edges(zero)
        return cls(graph, {e: J[e] for e in graph.edges}, energy_offset, fields or {})

    @classmethod
    def random_pm1(cls, graph: Graph, rng) -> "IsingInstance":
        rng = as_rng(rng)
        signs = rng.choice([-1.0, 1.0], size=len(graph.edge_list()))
        return cls(graph, dict(zip(graph.edge_list(), signs)))

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def has_fields(self) -> bool:
        return bool(self.fields)

    def cost(self, z) -> np.ndarray:
        """C(z) for spins z in {-1, +1}; leading axes are batch axes."""
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape[:-1], self.energy_offset)
        for (u, v), c in self.J.items():
            out = out + c * z[..., u] * z[..., v]
        for p, c in self.fields.items():
            out = out + c * z[..., p]
        return out

    def cost_table(self) -> np.ndarray:
        """C over all 2^n bit strings, index sum_j x_j 2^j, without the offset."""
        return _diag_cost(self.n, self.J, self.fields)

    def induced(self, vertices: Iterable[int], keep_edge=None) -> Tuple["IsingInstance", List[int]]:
        """Sub-instance on ``vertices`` (sorted, relabelled) with internal couplings; no offset."""
        sub, verts = self.graph.induced_subgraph(vertices)
        index = {v: i for i, v in enumerate(verts)}
        J = {}
        drop = []
        for (u, v) in sub.edges:
            e = _edge(verts[u], verts[v])
            if keep_edge is not None and not keep_edge(*e):
                drop.append((u, v))
            else:
                J[(u, v)] = self.J[e]
        if drop:
            sub = sub.without_edges(drop)
        h = {index[p]: c for p, c in self.fields.items() if p in index}
        return IsingInstance(sub, J, 0.0, h), verts


def _spins(n: int) -> np.ndarray:
    """(2^n, n) spins, row x holds (-1)^{x_j}."""
    idx = np.arange(1 << n, dtype=np.int64)
    return 1 - 2 * ((idx[:, None] >> np.arange(n)) & 1).astype(np.int8)


def _diag_cost(n: int, J: Mapping[Edge, float], fields: Mapping[int, float]) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    z = [(1 - 2 * ((idx >> j) & 1)).astype(np.float64) for j in range(n)]
    out = np.zeros(1 << n)
    for (u, v), c in J.items():
        out += c * z[u] * z[v]
    for p, c in fields.items():
        out += c * z[p]
    return out


@dataclass(frozen=True)
class QAOAAngles:
    beta1: float
    beta2: float
    gamma1: float
    gamma2: float

    def __post_init__(self):
        for name in ("beta1", "beta2", "gamma1", "gamma2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @classmethod
    def parse(cls, text: str) -> "QAOAAngles":
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 4:
            raise ValueError("angles must be four numbers b1,b2,g1,g2")
        return cls(*(float(p) for p in parts))

    def with_beta2(self, beta2: float) -> "QAOAAngles":
        return QAOAAngles(self.beta1, beta2, self.gamma1, self.gamma2)


@dataclass(frozen=True)
class ConstraintRecord:
    eliminated: int
    survivor: int
    sign: int


class ConstraintStack:
    """Ordered constraints z_p = sign * z_q in original vertex labels."""

    def __init__(self):
        self.records: List[ConstraintRecord] = []
        self._gone: Set[int] = set()

    def push(self, eliminated: int, survivor: int, sign: int) -> None:
        if eliminated in self._gone:
            raise ValueError(f"vertex {eliminated} already eliminated")
        if survivor in self._gone or survivor == eliminated:
            raise ValueError(f"survivor {survivor} is not alive")
        if sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        self._gone.add(eliminated)
        self.records.append(ConstraintRecord(eliminated, survivor, sign))

    def __len__(self) -> int:
        return len(self.records)

    def back_substitute(self, z: np.ndarray) -> np.ndarray:
        """Fill eliminated spins from the survivors, latest constraint first."""
        z = np.array(z, dtype=np.int64)
        for r in reversed(self.records):
            z[r.eliminated] = r.sign * z[r.survivor]
        return z


@dataclass
class EdgeMeanReport:
    edge: Edge
    value: float
    method: str
    epsilon: float = 0.0
    samples: int = 0
    forrelation_calls: int = 0
    seconds: float = 0.0


class MethodCounter:
    """Tallies of methods and graph-forrelation instances used."""

    def __init__(self):
        self.methods: Dict[str, int] = {}
        self.forrelation_calls = 0

    def add(self, report: EdgeMeanReport) -> None:
        self.methods[report.method] = self.methods.get(report.method, 0) + 1
        self.forrelation_calls += report.forrelation_calls


# ---------------------------------------------------------------- lightcones


@dataclass
class LightCone:
    """Sub-instance on N_r(s, t) plus the neighbourhood sets (original labels)."""

    instance: IsingInstance
    vertices: List[int]
    s: int
    t: int
    n1: Set[int]
    n2: Set[int]
    n2_s: Set[int]
    n2_t: Set[int]


def _ball(g: Graph, sources: Iterable[int], r: int) -> Set[int]:
    return set(g.bfs_distances(sources, r))


def lightcone(inst: IsingInstance, edge: Edge, radius: int = 2) -> LightCone:
    s, t = int(edge[0]), int(edge[1])
    if not inst.graph.has_edge(s, t):
        raise ValueError(f"({s},{t}) is not an edge")
    g = inst.graph
    region = _ball(g, (s, t), radius)
    sub, verts = inst.induced(region)
    index = {v: i for i, v in enumerate(verts)}
    return LightCone(
        sub,
        verts,
        index[s],
        index[t],
        _ball(g, (s, t), 1),
        _ball(g, (s, t), 2),
        _ball(g, (s,), 2),
        _ball(g, (t,), 2),
    )


# ---------------------------------------------------------------- state vectors


def _rx_all(psi: np.ndarray, n: int, beta: float) -> np.ndarray:
    """Apply e^{-i beta X} to every qubit of a 2^n vector."""
    c, s = math.cos(beta), -1j * math.sin(beta)
    t = psi.reshape((2,) * n)
    for ax in range(n):
        t = c * t + s * np.flip(t, axis=ax)
    return t.reshape(-1)


def _evolve(n: int, cost: np.ndarray, angles: QAOAAngles, psi: Optional[np.ndarray] = None) -> np.ndarray:
    if psi is None:
        psi = np.full(1 << n, 2.0 ** (-n / 2), dtype=complex)
    psi = psi * np.exp(-1j * angles.gamma1 * cost)
    psi = _rx_all(psi, n, angles.beta1)
    psi = psi * np.exp(-1j * angles.gamma2 * cost)
    return _rx_all(psi, n, angles.beta2)


def _unevolve(n: int, cost: np.ndarray, angles: QAOAAngles, psi: np.ndarray) -> np.ndarray:
    psi = _rx_all(psi, n, -angles.beta2)
    psi = psi * np.exp(1j * angles.gamma2 * cost)
    psi = _rx_all(psi, n, -angles.beta1)
    return psi * np.exp(1j * angles.gamma1 * cost)


def _check_cap(size: int, cap: int, what: str) -> None:
    if size > cap:
        raise ValueError(f"{what} has {size} vertices, above the cap {cap}")


def zz_mean_statevector(inst: IsingInstance, edge: Edge, angles: QAOAAngles, cap: int = STATEVECTOR_CAP) -> float:
    lc = lightcone(inst, edge)
    sub = lc.instance
    _check_cap(sub.n, cap, "N_2(s,t)")
    psi = _evolve(sub.n, sub.cost_table(), angles)
    z = _spins(sub.n)
    return float(np.sum(np.abs(psi) ** 2 * z[:, lc.s] * z[:, lc.t]))


def z_mean_statevector(inst: IsingInstance, p: int, angles: QAOAAngles, cap: int = STATEVECTOR_CAP) -> float:
    verts = sorted(_ball(inst.graph, (p,), 2))
    _check_cap(len(verts), cap, "N_2(p)")
    sub, verts = inst.induced(verts)
    psi = _evolve(sub.n, sub.cost_table(), angles)
    return float(np.sum(np.abs(psi) ** 2 * _spins(sub.n)[:, verts.index(p)]))


def energy_statevector(inst: IsingInstance, angles: QAOAAngles, cap: int = 22) -> float:
    """<psi|C|psi> from one dense simulation of the whole instance."""
    _check_cap(inst.n, cap, "instance")
    table = inst.cost_table()
    psi = _evolve(inst.n, table, angles)
    return float(np.dot(np.abs(psi) ** 2, table) + inst.energy_offset)


def _heisenberg_state(inst: IsingInstance, j: int, angles: QAOAAngles) -> Tuple[np.ndarray, List[int]]:
    """W_loc^dag Z_j W_loc |+> on N_2(j); returns the vector and its original labels."""
    sub, verts = inst.induced(_ball(inst.graph, (j,), 2))
    cost = sub.cost_table()
    psi = _evolve(sub.n, cost, angles)
    psi = psi * _spins(sub.n)[:, verts.index(j)]
    return _unevolve(sub.n, cost, angles, psi), verts


def _project_plus(psi: np.ndarray, labels: Sequence[int], keep: Set[int]) -> Tuple[np.ndarray, List[int]]:
    """Project qubits outside ``keep`` onto |+> and drop them."""
    n = len(labels)
    t = psi.reshape((2,) * n)
    # axis a holds qubit n-1-a
    drop = tuple(n - 1 - i for i, v in enumerate(labels) if v not in keep)
    if drop:
        t = t.sum(axis=drop) * 2.0 ** (-len(drop) / 2)
    kept = [v for v in labels if v in keep]
    return t.reshape(-1), kept


def zz_mean_Aprime(inst: IsingInstance, edge: Edge, angles: QAOAAngles, cap: int = APRIME_CAP) -> float:
    s, t = int(edge[0]), int(edge[1])
    if not inst.graph.has_edge(s, t):
        raise ValueError(f"({s},{t}) is not an edge")
    g = inst.graph
    _check_cap(len(_ball(g, (s,), 2)), cap, "N_2(s)")
    _check_cap(len(_ball(g, (t,), 2)), cap, "N_2(t)")
    psi_s, lab_s = _heisenberg_state(inst, s, angles)
    psi_t, lab_t = _heisenberg_state(inst, t, angles)
    common = set(lab_s) & set(lab_t)
    a, ka = _project_plus(psi_s, lab_s, common)
    b, kb = _project_plus(psi_t, lab_t, common)
    assert ka == kb
    return float(np.real(np.vdot(a, b)))


def z_mean_Aprime(inst: IsingInstance, p: int, angles: QAOAAngles, cap: int = APRIME_CAP) -> float:
    """<psi|Z_p|psi> = <+|W^dag Z_p W|+>."""
    _check_cap(len(_ball(inst.graph, (p,), 2)), cap, "N_2(p)")
    psi, lab = _heisenberg_state(inst, p, angles)
    a, _ = _project_plus(psi, lab, set())
    return float(np.real(a[0]))


# ---------------------------------------------------------------- bit-string decomposition


def symmetry_classes(with_fields: bool = False) -> List[Tuple[Tuple[int, int, int, int], int]]:
    """Representatives v = (v1, v2, v3, v4) and orbit sizes.

    Orbits of swapping (v1 v2) with (v3 v4), which conjugates the term, and,
    without fields, of complementing all four bits.
    """
    seen = set()
    out = []
    for code in range(16):
        v = tuple((code >> (3 - i)) & 1 for i in range(4))
        if v in seen:
            continue
        orbit = {v, v[2:] + v[:2]}
        if not with_fields:
            orbit |= {tuple(1 - b for b in w) for w in orbit}
        seen |= orbit
        out.append((v, len(orbit)))
    return out


def _rx(beta: float) -> np.ndarray:
    """e^{i beta X}."""
    return np.array([[math.cos(beta), 1j * math.sin(beta)], [1j * math.sin(beta), math.cos(beta)]])


def two_qubit_kernel(J_st: float, h_s: float, h_t: float, beta2: float, gamma2: float) -> np.ndarray:
    """U = e^{i g2 D} e^{i b2 (XI+IX)} ZZ e^{-i b2 (XI+IX)} e^{-i g2 D}, D = J ZZ + h_s ZI + h_t IZ.

    Index 2 a + b with a the bit of s.
    """
    z = np.array([1.0, -1.0])
    d = J_st * np.kron(z, z) + h_s * np.kron(z, np.ones(2)) + h_t * np.kron(np.ones(2), z)
    r = np.kron(_rx(beta2), _rx(beta2))
    zz = np.diag(np.kron(z, z)).astype(complex)
    core = r @ zz @ r.conj().T
    ph = np.exp(1j * gamma2 * d)
    return ph[:, None] * core * ph.conj()[None, :]


def local_operators(
    J_s: Mapping[int, float], J_t: Mapping[int, float], s: int, t: int, v: Sequence[int], beta1: float, gamma2: float
) -> Dict[int, np.ndarray]:
    """Single-qubit operators O_p(v) for s, t and every p coupled to s or t."""
    rx = _rx(beta1)
    out = {}
    for q, a, b in ((s, v[0], v[2]), (t, v[1], v[3])):
        m = np.zeros((2, 2), dtype=complex)
        m[a, b] = 1.0
        out[q] = rx @ m @ rx.conj().T
    zs = [1 - 2 * b for b in v]
    for p in set(J_s) | set(J_t):
        if p in (s, t):
            continue
        js, jt = J_s.get(p, 0.0), J_t.get(p, 0.0)
        theta = gamma2 * (js * zs[0] + jt * zs[1] - js * zs[2] - jt * zs[3])
        ph = np.diag([np.exp(1j * theta), np.exp(-1j * theta)])
        out[p] = rx @ ph @ rx.conj().T
    return out


def _couplings_of(inst: IsingInstance, s: int) -> Dict[int, float]:
    return {(v if u == s else u): c for (u, v), c in inst.J.items() if s in (u, v)}


def _combine(inst: IsingInstance, edge: Edge, angles: QAOAAngles, etas: Mapping[Tuple[int, ...], complex]) -> float:
    s, t = edge
    U = two_qubit_kernel(inst.J[_edge(s, t)], inst.fields.get(s, 0.0), inst.fields.get(t, 0.0), angles.beta2, angles.gamma2)
    total = 0j
    for v, w in symmetry_classes(inst.has_fields):
        total += w * U[2 * v[0] + v[1], 2 * v[2] + v[3]] * etas[v]
    return float(total.real)


# ---------------------------------------------------------------- A''


def reduced_state(inst: IsingInstance, edge: Edge, gamma1: float, gray: str = "ternary") -> Tuple[np.ndarray, List[int]]:
    """Matrix of e^{-i g1 C} |+><+| e^{i g1 C} reduced to N_1(s, t), with its vertex labels (sorted).

    ``gray="ternary"`` tabulates the cosine product once per difference
    vector in {-1, 0, 1}^{n1}; ``"binary"`` evaluates it for every pair of bit strings.
    """
    s, t = edge
    g = inst.graph
    n1 = sorted(_ball(g, (s, t), 1))
    outer = sorted(_ball(g, (s, t), 2) - set(n1))
    k = len(n1)
    pos = {v: i for i, v in enumerate(n1)}
    cross = np.zeros((k, len(outer)))
    for j, p in enumerate(outer):
        for q, c in _couplings_of(inst, p).items():
            if q in pos:
                cross[pos[q], j] = c
    bits = ((np.arange(1 << k)[:, None] >> np.arange(k)) & 1).astype(np.float64)
    if gray == "ternary":
        idx = np.arange(3**k)
        diffs = np.stack([(idx // 3**q) % 3 - 1 for q in range(k)], axis=1).astype(np.float64)
        table = np.prod(np.cos(2 * gamma1 * (diffs @ cross)), axis=1) * 2.0**-k
        tern = (bits @ (3.0 ** np.arange(k))).astype(np.int64)
        rho = table[tern[:, None] - tern[None, :] + (3**k - 1) // 2]
    elif gray == "binary":
        lin = bits @ cross
        rho = np.full((1 << k, 1 << k), 2.0**-k)
        for j in range(len(outer)):
            rho *= np.cos(2 * gamma1 * (lin[:, j, None] - lin[None, :, j]))
    else:
        raise ValueError("gray must be 'ternary' or 'binary'")
    loc, _ = inst.induced(n1)
    c = loc.cost_table()
    ph = np.exp(-1j * gamma1 * c)
    return rho * ph[:, None] * ph.conj()[None, :], n1


def _trace_product(rho: np.ndarray, ops: Sequence[np.ndarray]) -> complex:
    """Tr((O_0 x ... x O_{k-1}) rho), qubit q = bit q of the row index."""
    k = len(ops)
    t = rho.reshape((2,) * (2 * k))
    # axes: x_{k-1} .. x_0, y_{k-1} .. y_0; contract qubit 0 (the last axis of each half) first
    for q in range(k):
        m = k - q
        t = np.tensordot(t, ops[q], axes=([m - 1, 2 * m - 1], [1, 0]))
    return complex(t)


def _etas_adoubleprime(inst: IsingInstance, edge: Edge, beta1: float, gamma1: float, gamma2: float, gray: str):
    s, t = edge
    rho, n1 = reduced_state(inst, edge, gamma1, gray)
    J_s, J_t = _couplings_of(inst, s), _couplings_of(inst, t)
    etas = {}
    eye = np.eye(2, dtype=complex)
    for v, _ in symmetry_classes(inst.has_fields):
        ops = local_operators(J_s, J_t, s, t, v, beta1, gamma2)
        etas[v] = _trace_product(rho, [ops.get(p, eye) for p in n1])
    return etas


def zz_mean_Adoubleprime(
    inst: IsingInstance, edge: Edge, angles: QAOAAngles, cap: int = ADOUBLEPRIME_CAP, gray: str = "ternary"
) -> float:
    s, t = int(edge[0]), int(edge[1])
    if not inst.graph.has_edge(s, t):
        raise ValueError(f"({s},{t}) is not an edge")
    _check_cap(len(_ball(inst.graph, (s, t), 1)), cap, "N_1(s,t)")
    etas = _etas_adoubleprime(inst, (s, t), angles.beta1, angles.gamma1, angles.gamma2, gray)
    return _combine(inst, (s, t), angles, etas)


# ---------------------------------------------------------------- forrelation route


def _phase_function(sub: IsingInstance, gamma: float) -> TwoLocalFunction:
    """x -> e^{-i gamma C(x)} as a two-local function."""
    zz = np.array([[1.0, -1.0], [-1.0, 1.0]])
    z = np.array([1.0, -1.0])
    et = {e: np.exp(-1j * gamma * c * zz) for e, c in sub.J.items()}
    vt = {p: np.exp(-1j * gamma * c * z) for p, c in sub.fields.items()}
    return TwoLocalFunction(sub.graph, et, vt)


def _forrelation_sub(inst: IsingInstance, edge: Edge) -> Tuple[IsingInstance, List[int]]:
    """N_2(s, t) without couplings that lie entirely outside N_1(s, t) (they cancel)."""
    s, t = edge
    n1 = _ball(inst.graph, (s, t), 1)
    return inst.induced(_ball(inst.graph, (s, t), 2), keep_edge=lambda u, v: u in n1 or v in n1)


def zz_mean_forrelation(
    inst: IsingInstance,
    edge: Edge,
    angles: QAOAAngles,
    epsilon: float,
    rng,
    sample_rule: str = "chebyshev",
    samples: Optional[int] = None,
    sampler: str = "marginal",
    _eta_cache: Optional[dict] = None,
) -> EdgeMeanReport:
    """Estimate of <Z_s Z_t> from one graph-forrelation estimate per symmetry class.

    ``sample_rule="chebyshev"`` sizes each class's sample count so that the
    combined estimate is within ``epsilon`` with probability >= 0.99;
    ``"per-instance"`` draws ceil(epsilon^-2) samples for each class.
    ``samples`` overrides both.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if sample_rule not in ("chebyshev", "per-instance"):
        raise ValueError("sample_rule must be 'chebyshev' or 'per-instance'")
    s, t = int(edge[0]), int(edge[1])
    if not inst.graph.has_edge(s, t):
        raise ValueError(f"({s},{t}) is not an edge")
    start = time.perf_counter()
    rng = as_rng(rng)
    classes = symmetry_classes(inst.has_fields)
    U = two_qubit_kernel(inst.J[_edge(s, t)], inst.fields.get(s, 0.0), inst.fields.get(t, 0.0), angles.beta2, angles.gamma2)
    weight = {v: w * abs(U[2 * v[0] + v[1], 2 * v[2] + v[3]]) for v, w in classes}
    key = (s, t, angles.beta1, angles.gamma1, angles.gamma2)
    cached = _eta_cache.get(key) if _eta_cache is not None else None
    etas: Dict[Tuple[int, ...], complex] = {}
    total_samples = 0
    calls = 0
    if cached is not None:
        etas = dict(cached)
    else:
        sub, verts = _forrelation_sub(inst, (s, t))
        index = {v: i for i, v in enumerate(verts)}
        f = _phase_function(sub, angles.gamma1)
        g = f.conj()
        J_s, J_t = _couplings_of(inst, s), _couplings_of(inst, t)
        base = None
        wsum = sum(weight.values())
        for v, _ in classes:
            if weight[v] == 0.0 and _eta_cache is None:
                etas[v] = 0j
                continue
            ops = np.broadcast_to(np.eye(2, dtype=complex), (sub.n, 2, 2)).copy()
            for p, o in local_operators(J_s, J_t, s, t, v, angles.beta1, angles.gamma2).items():
                ops[index[p]] = o
            base = GraphForrelationInstance(sub.graph, f, g, ops) if base is None else base.with_ops(ops)
            if samples is not None:
                S = int(samples)
            elif sample_rule == "per-instance":
                S = math.ceil(epsilon**-2)
            else:
                # Chebyshev on the weighted sum: sum_v weight_v^2 / S_v <= epsilon^2 / 100
                S = max(1, math.ceil(100 * max(weight[v], 1e-3) * max(wsum, 1e-3) / epsilon**2))
            est = phi_graph_estimate(base, epsilon, rng, sampler=sampler, samples=S)
            etas[v] = est.value
            total_samples += est.samples
            calls += 1
        if _eta_cache is not None:
            _eta_cache[key] = dict(etas)
    total = 0j
    for v, w in classes:
        total += w * U[2 * v[0] + v[1], 2 * v[2] + v[3]] * etas[v]
    return EdgeMeanReport(
        (s, t), float(total.real), "forrelation", epsilon, total_samples, calls, time.perf_counter() - start
    )


# ---------------------------------------------------------------- method selection

_CALIBRATION: Dict[str, float] = {}


def _cost_aprime(n2s: int, n2t: int) -> float:
    return n2s * 2.0**n2s + n2t * 2.0**n2t


def _cost_adoubleprime(n1: int, n2: int) -> float:
    return n1 * 4.0**n1 + n2 * 3.0**n1


def calibrate(force: bool = False) -> Dict[str, float]:
    """Seconds per unit of the A' and A'' runtime formulas, timed once on a fixed grid edge."""
    if _CALIBRATION and not force:
        return _CALIBRATION
    g = generate_grid(6, 6)
    inst = IsingInstance(g, {e: (1.0 if (e[0] + e[1]) % 3 else -1.0) for e in g.edges})
    edge = (14, 15)
    angles = QAOAAngles(0.3, 0.2, 0.4, 0.5)
    lc = lightcone(inst, edge)
    best = {}
    for name, fn, units in (
        ("Aprime", zz_mean_Aprime, _cost_aprime(len(lc.n2_s), len(lc.n2_t))),
        ("Adoubleprime", zz_mean_Adoubleprime, _cost_adoubleprime(len(lc.n1), len(lc.n2))),
    ):
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            fn(inst, edge, angles)
            times.append(time.perf_counter() - t0)
        best[name] = min(times) / units
    _CALIBRATION.update(best)
    return _CALIBRATION


def predicted_seconds(inst: IsingInstance, edge: Edge) -> Dict[str, float]:
    cal = calibrate()
    lc_n1 = len(_ball(inst.graph, edge, 1))
    lc_n2 = len(_ball(inst.graph, edge, 2))
    n2s, n2t = len(_ball(inst.graph, (edge[0],), 2)), len(_ball(inst.graph, (edge[1],), 2))
    out = {
        "Aprime": cal["Aprime"] * _cost_aprime(n2s, n2t) if max(n2s, n2t) <= APRIME_CAP else math.inf,
        "Adoubleprime": cal["Adoubleprime"] * _cost_adoubleprime(lc_n1, lc_n2) if lc_n1 <= ADOUBLEPRIME_CAP else math.inf,
    }
    return out


def zz_mean_auto(
    inst: IsingInstance,
    edge: Edge,
    angles: QAOAAngles,
    epsilon: float,
    rng,
    cutoff: float = DEFAULT_CUTOFF,
    sample_rule: str = "chebyshev",
    samples: Optional[int] = None,
    _eta_cache: Optional[dict] = None,
) -> EdgeMeanReport:
    """The cheaper of A' and A'' if its predicted time is under ``cutoff`` seconds, else the forrelation estimate."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    s, t = int(edge[0]), int(edge[1])
    pred = predicted_seconds(inst, (s, t))
    name = min(pred, key=pred.get)
    if pred[name] <= cutoff:
        start = time.perf_counter()
        if name == "Aprime":
            value = zz_mean_Aprime(inst, (s, t), angles)
        else:
            key = ("A''", s, t, angles.beta1, angles.gamma1, angles.gamma2)
            etas = _eta_cache.get(key) if _eta_cache is not None else None
            if etas is None:
                etas = _etas_adoubleprime(inst, (s, t), angles.beta1, angles.gamma1, angles.gamma2, "ternary")
                if _eta_cache is not None:
                    _eta_cache[key] = etas
            value = _combine(inst, (s, t), angles, etas)
        return EdgeMeanReport((s, t), value, name, 0.0, seconds=time.perf_counter() - start)
    return zz_mean_forrelation(inst, (s, t), angles, epsilon, rng, sample_rule, samples, _eta_cache=_eta_cache)


_METHODS = ("auto", "statevector", "Aprime", "Adoubleprime", "forrelation")


def _edge_mean(inst, edge, angles, eps, rng, method, cutoff, sample_rule, samples, eta_cache) -> EdgeMeanReport:
    if method == "auto":
        return zz_mean_auto(inst, edge, angles, eps, rng, cutoff, sample_rule, samples, eta_cache)
    if method == "forrelation":
        return zz_mean_forrelation(inst, edge, angles, eps, rng, sample_rule, samples, _eta_cache=eta_cache)
    start = time.perf_counter()
    fn = {"statevector": zz_mean_statevector, "Aprime": zz_mean_Aprime, "Adoubleprime": zz_mean_Adoubleprime}[method]
    return EdgeMeanReport(tuple(edge), fn(inst, edge, angles), method, seconds=time.perf_counter() - start)


def edge_means(
    inst: IsingInstance,
    angles: QAOAAngles,
    epsilon: float,
    rng,
    method: str = "auto",
    cutoff: float = DEFAULT_CUTOFF,
    sample_rule: str = "chebyshev",
    budget: str = "per-term",
    samples: Optional[int] = None,
    counter: Optional[MethodCounter] = None,
    eta_cache: Optional[dict] = None,
) -> List[EdgeMeanReport]:
    """<Z_p Z_q> for every edge (sorted).  ``budget="weighted"`` gives edge e the error eps |J_e| / sum |J|."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if method not in _METHODS:
        raise ValueError(f"method must be one of {_METHODS}")
    if budget not in ("per-term", "weighted"):
        raise ValueError("budget must be 'per-term' or 'weighted'")
    rng = as_rng(rng)
    total = sum(abs(c) for c in inst.J.values())
    out = []
    for e in inst.graph.edge_list():
        eps = epsilon * abs(inst.J[e]) / total if budget == "weighted" else epsilon
        rep = _edge_mean(inst, e, angles, eps, rng, method, cutoff, sample_rule, samples, eta_cache)
        if counter is not None:
            counter.add(rep)
        out.append(rep)
    return out


def energy(
    inst: IsingInstance,
    angles: QAOAAngles,
    epsilon: float,
    rng,
    method: str = "auto",
    cutoff: float = DEFAULT_CUTOFF,
    sample_rule: str = "chebyshev",
    budget: str = "weighted",
    samples: Optional[int] = None,
    counter: Optional[MethodCounter] = None,
    eta_cache: Optional[dict] = None,
) -> float:
    """<psi|C|psi> = sum_e J_e <Z Z>_e + sum_p h_p <Z_p> + offset.

    Field terms use the exact single-site Heisenberg evaluation.
    """
    reps = edge_means(inst, angles, epsilon, rng, method, cutoff, sample_rule, budget, samples, counter, eta_cache)
    total = inst.energy_offset + sum(inst.J[r.edge] * r.value for r in reps)
    for p, c in inst.fields.items():
        total += c * z_mean_Aprime(inst, p, angles)
    return float(total)


# ---------------------------------------------------------------- angle optimisation


def level1_zz_mean(inst: IsingInstance, edge: Edge, beta, gamma) -> np.ndarray:
    """<Z_u Z_v> for e^{-i beta B} e^{-i gamma C}|+>, broadcast over beta and gamma (no fields)."""
    if inst.has_fields:
        raise ValueError("the level-1 closed form assumes no fields")
    u, v = edge
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    Ju, Jv = _couplings_of(inst, u), _couplings_of(inst, v)
    Juv = Ju[v]
    others = (set(Ju) | set(Jv)) - {u, v}
    pu = np.ones_like(gamma)
    pv = np.ones_like(gamma)
    plus = np.ones_like(gamma)
    minus = np.ones_like(gamma)
    for w in others:
        a, b = Ju.get(w, 0.0), Jv.get(w, 0.0)
        pu = pu * np.cos(2 * gamma * a)
        pv = pv * np.cos(2 * gamma * b)
        plus = plus * np.cos(2 * gamma * (a + b))
        minus = minus * np.cos(2 * gamma * (a - b))
    first = 0.5 * np.sin(4 * beta) * np.sin(2 * gamma * Juv) * (pu + pv)
    second = 0.5 * np.sin(2 * beta) ** 2 * (plus - minus)
    return first - second


def level1_energy_grid(inst: IsingInstance, n_beta: int = 64, n_gamma: int = 64):
    """Level-1 energy on a grid over [0, pi) x [0, 2 pi); returns (betas, gammas, E[beta, gamma])."""
    betas = np.arange(n_beta) * math.pi / n_beta
    gammas = np.arange(n_gamma) * 2 * math.pi / n_gamma
    B, G = np.meshgrid(betas, gammas, indexing="ij")
    E = np.full(B.shape, inst.energy_offset)
    for e, c in inst.J.items():
        E = E + c * level1_zz_mean(inst, e, B, G)
    return betas, gammas, E


def optimize_level1(inst: IsingInstance, n_beta: int = 64, n_gamma: int = 64) -> Tuple[float, float, float]:
    """(beta1, gamma1, energy) maximising the level-1 energy on the grid."""
    betas, gammas, E = level1_energy_grid(inst, n_beta, n_gamma)
    i, j = np.unravel_index(int(np.argmax(E)), E.shape)
    return float(betas[i]), float(gammas[j]), float(E[i, j])


def optimize_beta2(
    inst: IsingInstance,
    beta1: float,
    gamma1: float,
    gamma2: float,
    epsilon: float,
    rng,
    energy_fn=None,
    **energy_kwargs,
) -> Tuple[float, float, float, float, float]:
    """(beta2*, E_max, a, b, c) from energies at beta2 in {0, pi/8, -pi/8}.

    E(beta2) = a cos(4 beta2) + b sin(4 beta2) + c, so the maximum is
    c + sqrt(a^2 + b^2) at 4 beta2 = atan2(b, a).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    rng = as_rng(rng)
    if energy_fn is None:

        def energy_fn(b2):
            return energy(inst, QAOAAngles(beta1, b2, gamma1, gamma2), epsilon, rng, **energy_kwargs)

    e0 = energy_fn(0.0)
    ep = energy_fn(math.pi / 8)
    em = energy_fn(-math.pi / 8)
    c = (ep + em) / 2
    b = (ep - em) / 2
    a = e0 - c
    beta2 = (math.atan2(b, a) / 4) % (math.pi / 2)
    return beta2, c + math.hypot(a, b), a, b, c


# ---------------------------------------------------------------- exact optimum


def exact_maxcut(inst: IsingInstance, cap: int = EXACT_CAP) -> Tuple[np.ndarray, float]:
    """Maximum of C(z) by exhaustive search; returns (spins, cost).

    The low block of up to 16 spins is enumerated as a vector; the high spins
    follow a Gray code so each step updates the block's effective fields by one column.
    """
    n = inst.n
    _check_cap(n, cap, "instance")
    if n == 0:
        return np.zeros(0, dtype=np.int64), float(inst.energy_offset)
    low = min(n, 16)
    high = n - low
    Jm = np.zeros((n, n))
    for (u, v), c in inst.J.items():
        Jm[u, v] = Jm[v, u] = c
    h = np.zeros(n)
    for p, c in inst.fields.items():
        h[p] = c
    zl = _spins(low).astype(np.float64)
    base = np.einsum("xi,ij,xj->x", zl, np.triu(Jm[:low, :low], 1), zl)
    zh = np.ones(high)
    cross = Jm[:low, low:]
    heff = h[:low] + cross @ zh
    hcost = float(zh @ np.triu(Jm[low:, low:], 1) @ zh + h[low:] @ zh)
    best, best_z = -math.inf, None
    prev_gray = 0
    for i in range(1 << high):
        if i:
            gray = i ^ (i >> 1)
            j = (gray ^ prev_gray).bit_length() - 1
            prev_gray = gray
            old = zh[j]
            zh[j] = -old
            hcost += _flip_delta(Jm, h, zh, low, j, old)
            heff = heff - 2 * old * cross[:, j]
        vals = base + zl @ heff + hcost
        a = int(np.argmax(vals))
        if vals[a] > best + 1e-12:
            best = float(vals[a])
            best_z = np.concatenate([zl[a], zh]).astype(np.int64)
    return best_z, best + inst.energy_offset


def _flip_delta(Jm, h, zh, low, j, old) -> float:
    """Change of the high-block cost when high spin j went from ``old`` to ``-old``."""
    k = low + j
    row = Jm[k, low:].copy()
    row[j] = 0.0
    return float(-2 * old * (row @ zh + h[k]))


# ---------------------------------------------------------------- recursion


def contract_ising(inst: IsingInstance, p: int, q: int, sign: int) -> Tuple[IsingInstance, List[int]]:
    """Impose z_p = sign * z_q and eliminate p.  Returns the reduced instance and the old -> new label map."""
    if not inst.graph.has_edge(p, q):
        raise ValueError(f"({p},{q}) is not an edge")
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    g, new = contract_edge(inst.graph, p, q)
    J: Dict[Edge, float] = {}
    offset = inst.energy_offset
    for (u, v), c in inst.J.items():
        if {u, v} == {p, q}:
            offset += sign * c
            continue
        if p in (u, v):
            c = sign * c
        e = _edge(new[u], new[v])
        J[e] = J.get(e, 0.0) + c
    h: Dict[int, float] = {}
    for r, c in inst.fields.items():
        c = sign * c if r == p else c
        h[new[r]] = h.get(new[r], 0.0) + c
    return IsingInstance.create(g, J, offset, h), new


@dataclass
class RQAOAStep:
    step: int
    edge: Edge
    original_edge: Edge
    sign: int
    M: float
    angles: QAOAAngles
    energy: float
    level1_energy: float
    methods: Dict[str, int]
    forrelation_calls: int
    seconds: float
    vertices: int


@dataclass
class RQAOAResult:
    assignment: np.ndarray
    cost: float
    steps: List[RQAOAStep]
    constraints: ConstraintStack
    brute_force_vertices: int

    def trace_lines(self, timing: bool = True) -> List[str]:
        """One CSV record per step; ``timing=False`` drops the wall-time column."""
        cols = ["step", "edge", "sign", "M", "methods", "forrelation_calls", "seconds", "vertices", "energy", "level1_energy"]
        if not timing:
            cols.remove("seconds")
        lines = [",".join(cols)]
        for s in self.steps:
            hist = ";".join(f"{k}={v}" for k, v in sorted(s.methods.items()))
            secs = f"{s.seconds:.4f}," if timing else ""
            lines.append(
                f"{s.step},{s.original_edge[0]}-{s.original_edge[1]},{s.sign:+d},{s.M:.6f},{hist},"
                f"{s.forrelation_calls},{secs}{s.vertices},{s.energy:.6f},{s.level1_energy:.6f}"
            )
        return lines


def rqaoa(
    inst: IsingInstance,
    epsilon: float = 0.03,
    brute_threshold: int = 10,
    gamma_grid_size: int = 30,
    rng=0,
    level1_grid: int = 64,
    cutoff: float = DEFAULT_CUTOFF,
    sample_rule: str = "per-instance",
    method: str = "auto",
    seed: Optional[int] = None,
) -> RQAOAResult:
    """Recursive QAOA with level-2 states.

    Each step fixes (beta1, gamma1) from the level-1 grid, scans ``gamma_grid_size``
    values of gamma2 with the analytic beta2, measures every edge correlation
    at the best angles and contracts the strongest edge.  Per-edge streams are
    derived from ``seed`` (or an integer drawn from ``rng``).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if brute_threshold > EXACT_CAP:
        raise ValueError(f"brute_threshold must be at most {EXACT_CAP}")
    if inst.has_fields:
        raise ValueError("rqaoa supports pure Ising couplings")
    if seed is None:
        seed = int(as_rng(rng).integers(0, 2**63))
    cur = inst
    labels = list(range(inst.n))
    stack = ConstraintStack()
    steps: List[RQAOAStep] = []
    step = 0
    while cur.n > brute_threshold and cur.graph.num_edges:
        t0 = time.perf_counter()
        counter = MethodCounter()
        b1, g1, e1 = optimize_level1(cur, level1_grid, level1_grid)
        best = None
        for k in range(gamma_grid_size):
            g2 = 2 * math.pi * k / gamma_grid_size
            cache: dict = {}
            srng = derive_rng(seed, "rqaoa-angles", step, k)

            def fn(b2, g2=g2, cache=cache, srng=srng):
                return energy(
                    cur, QAOAAngles(b1, b2, g1, g2), epsilon, srng, method, cutoff, sample_rule,
                    "per-term", counter=counter, eta_cache=cache,
                )

            b2, emax, *_ = optimize_beta2(cur, b1, g1, g2, epsilon, srng, energy_fn=fn)
            if best is None or emax > best[0]:
                best = (emax, QAOAAngles(b1, b2, g1, g2))
        emax, angles = best
        final = MethodCounter()
        reports = []
        for idx, e in enumerate(cur.graph.edge_list()):
            erng = derive_rng(seed, "rqaoa-edge", step, idx)
            rep = _edge_mean(cur, e, angles, epsilon, erng, method, cutoff, sample_rule, None, None)
            final.add(rep)
            reports.append(rep)
        top = max(abs(r.value) for r in reports)
        chosen = min((r for r in reports if abs(r.value) == top), key=lambda r: r.edge)
        if chosen.value == 0:
            log.warning("all edge correlations vanish at step %d; contracting %s with sign +1", step, chosen.edge)
        sign = 1 if chosen.value >= 0 else -1
        q, p = chosen.edge
        stack.push(labels[p], labels[q], sign)
        orig = (labels[q], labels[p])
        cur, new = contract_ising(cur, p, q, sign)
        new_labels = [0] * cur.n
        for old, lab in enumerate(labels):
            if old != p:
                new_labels[new[old]] = lab
        labels = new_labels
        for k, v in final.methods.items():
            counter.methods[k] = counter.methods.get(k, 0) + v
        counter.forrelation_calls += final.forrelation_calls
        steps.append(
            RQAOAStep(step, chosen.edge, orig, sign, chosen.value, angles, emax, e1, counter.methods,
                      counter.forrelation_calls, time.perf_counter() - t0, cur.n + 1)
        )
        step += 1
    z_rest, _ = exact_maxcut(cur)
    z = np.ones(inst.n, dtype=np.int64)
    for i, lab in enumerate(labels):
        z[lab] = z_rest[i]
    z = stack.back_substitute(z)
    return RQAOAResult(z, float(inst.cost(z)), steps, stack, cur.n)
