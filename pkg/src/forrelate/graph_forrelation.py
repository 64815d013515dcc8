"""Graph-based forrelation <0|H U_g (O_1 x ... x O_n) U_f H|0> for two-local f, g.

The estimator writes the value as <beta|alpha> with

    |alpha> = (O_A x I_B) U_f H|0>,     |beta> = (I_A x O_B^dag) U_g^dag H|0>,

draws x from |<x|alpha>|^2 and averages R(x) = <beta|x> / <alpha|x>.  Both
amplitudes reduce to sums of two-local functions over one side of the vertex
partition, evaluated with the side's tree decomposition.

Operators with norm below one are split as O = |O| (q0 M0 + q1 M1) with unitary
M0, M1; each Monte Carlo sample first picks the unitary branch per qubit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .graph_core import Graph, TreeDecomposition, VertexPartition, partition_with_tds, validate_td
from .streams import as_rng
from .tn_sampler import DiagonalGate, QuditSystem, sample as tn_sample
from .two_local import TwoLocalFunction, sum_treewidth

__all__ = [
    "GraphForrelationInstance",
    "PhiEstimate",
    "UnitarySplit",
    "unitary_split",
    "phi_graph_exact",
    "dense_state",
    "amplitude",
    "amplitudes",
    "marginal_probability",
    "sample_alpha_marginals",
    "sample_alpha_linear",
    "phi_graph_estimate",
    "iqp_to_forrelation",
    "iqp_instance",
    "S_GATE",
    "HADAMARD",
]

EXACT_CAP = 20
NORM_TOL = 1e-9
RATIO_TOL = 1e-8
MAX_RESAMPLE_FAILURES = 100
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
S_GATE = np.diag([1, 1j])
PAULI_Z = np.diag([1.0, -1.0]).astype(complex)


@dataclass(frozen=True)
class UnitarySplit:
    """O = norm * (q0 * m0 + (1 - q0) * m1) with m0, m1 unitary."""

    norm: float
    q0: float
    m0: np.ndarray
    m1: np.ndarray

    @property
    def is_unitary(self) -> bool:
        return self.q0 >= 1 - 1e-12


def unitary_split(op) -> UnitarySplit:
    """Closed-form singular value split of a 2x2 matrix."""
    op = np.asarray(op, dtype=complex)
    if op.shape != (2, 2):
        raise ValueError("operator must be 2x2")
    w, vecs = np.linalg.eigh(op.conj().T @ op)
    top = math.sqrt(max(w[1], 0.0))
    if top <= 1e-15:
        eye = np.eye(2, dtype=complex)
        return UnitarySplit(0.0, 1.0, eye, eye)
    v1, v2 = vecs[:, 1], vecs[:, 0]
    u1 = op @ v1 / top
    u1 /= np.linalg.norm(u1)
    # second left vector: orthogonal complement of u1, phase taken from op v2
    perp = np.array([-u1[1].conjugate(), u1[0].conjugate()])
    proj = np.vdot(perp, op @ v2)
    s = min(1.0, abs(proj) / top)
    u2 = perp * (proj / abs(proj)) if abs(proj) > 1e-300 else perp
    U = np.stack([u1, u2], axis=1)
    V = np.stack([v1, v2], axis=1).conj().T
    return UnitarySplit(top, (1 + s) / 2, U @ V, U @ PAULI_Z @ V)


@dataclass
class PhiEstimate:
    value: complex
    epsilon: float
    samples: int
    annihilated: bool = False
    omega: float = 1.0
    r_second_moment: float = float("nan")
    r_variance: float = float("nan")
    r_second_moment_stderr: float = float("nan")
    resample_failures: int = 0


@dataclass
class _SideData:
    """Terms needed to evaluate amplitudes of one side's state."""

    side: Tuple[int, ...]
    rest: Tuple[int, ...]
    sub: Graph
    td: TreeDecomposition
    vertex: List[np.ndarray]
    cuts: List[List[Tuple[int, np.ndarray]]]
    inner: Dict[Tuple[int, int], np.ndarray]
    rest_vertex: List[Tuple[int, np.ndarray]]
    rest_edges: List[Tuple[int, int, np.ndarray]]


def _side_data(graph: Graph, fn: TwoLocalFunction, side: Sequence[int], td: TreeDecomposition) -> _SideData:
    side = tuple(side)
    rest = tuple(v for v in range(graph.n) if v not in set(side))
    sloc = {v: i for i, v in enumerate(side)}
    rloc = {v: i for i, v in enumerate(rest)}
    sub, _ = graph.induced_subgraph(side)
    vertex = [fn.vertex_terms.get(v, np.ones(2, dtype=complex)) for v in side]
    cuts: List[List[Tuple[int, np.ndarray]]] = [[] for _ in side]
    inner: Dict[Tuple[int, int], np.ndarray] = {}
    rest_edges = []
    for (u, v) in graph.edge_list():
        t = fn.edge_terms.get((u, v))
        if t is None:
            continue
        if u in sloc and v in sloc:
            inner[(sloc[u], sloc[v])] = t
        elif u in sloc:
            cuts[sloc[u]].append((rloc[v], t))
        elif v in sloc:
            cuts[sloc[v]].append((rloc[u], t.T))
        else:
            rest_edges.append((rloc[u], rloc[v], t))
    rest_vertex = [(rloc[v], t) for v, t in fn.vertex_terms.items() if v in rloc]
    return _SideData(side, rest, sub, td, vertex, cuts, inner, rest_vertex, rest_edges)


def _folded_vertex(sd: _SideData, a: int, x_rest: np.ndarray) -> np.ndarray:
    """f_a(y) times every cut term with the far end fixed; shape (M, 2)."""
    t = np.broadcast_to(sd.vertex[a], (x_rest.shape[0], 2)).copy()
    for b, tab in sd.cuts[a]:
        t *= tab[:, x_rest[:, b]].T
    return t


def _rest_weight(sd: _SideData, x_rest: np.ndarray) -> np.ndarray:
    w = np.ones(x_rest.shape[0], dtype=complex)
    for b, t in sd.rest_vertex:
        w *= t[x_rest[:, b]]
    for u, v, t in sd.rest_edges:
        w *= t[x_rest[:, u], x_rest[:, v]]
    return w


class GraphForrelationInstance:
    """Graph, two-local f and g, per-qubit operators, a vertex partition and decompositions of both halves.

    ``td_A`` and ``td_B`` use the labels of the induced subgraphs (sorted side
    vertices relabelled 0..k-1).  Without a partition one is computed: the peel
    partition when the graph carries an embedding, else the greedy heuristic.
    """

    def __init__(
        self,
        graph: Graph,
        f: TwoLocalFunction,
        g: TwoLocalFunction,
        ops,
        partition: Optional[VertexPartition] = None,
        td_A: Optional[TreeDecomposition] = None,
        td_B: Optional[TreeDecomposition] = None,
    ):
        ops = np.asarray(ops, dtype=complex)
        if ops.shape != (graph.n, 2, 2):
            raise ValueError("ops must have shape (n, 2, 2)")
        for j, o in enumerate(ops):
            if np.linalg.norm(o, 2) > 1 + NORM_TOL:
                raise ValueError(f"operator {j} has norm above 1")
        if f.graph is not graph and f.graph.edges - graph.edges:
            raise ValueError("f has terms outside the graph")
        if g.graph is not graph and g.graph.edges - graph.edges:
            raise ValueError("g has terms outside the graph")
        if f.d != 2 or g.d != 2 or f.batch_shape or g.batch_shape:
            raise ValueError("f and g must be unbatched functions of bits")
        self.graph, self.f, self.g, self.ops = graph, f, g, ops
        if partition is None:
            partition, td_A, td_B, self.partition_method = partition_with_tds(graph)
        else:
            self.partition_method = "given"
            if td_A is None or td_B is None:
                from .graph_core import min_fill_td

                td_A = td_A or min_fill_td(graph.induced_subgraph(partition.A)[0])
                td_B = td_B or min_fill_td(graph.induced_subgraph(partition.B)[0])
        if not partition.covers(graph.n):
            raise ValueError("partition does not cover the vertex set")
        for name, side, td in (("A", partition.A, td_A), ("B", partition.B, td_B)):
            res = validate_td(graph.induced_subgraph(side)[0], td)
            if not res.ok:
                raise ValueError(f"td_{name} invalid: axiom {res.axiom}: {res.message}")
        self.partition, self.td_A, self.td_B = partition, td_A, td_B
        self.splits = [unitary_split(o) for o in ops]
        self._alpha = _side_data(graph, f, partition.A, td_A)
        self._beta = _side_data(graph, g.conj(), partition.B, td_B)
        self._augmented: Dict[int, Tuple[Graph, TreeDecomposition]] = {}

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def all_unitary(self) -> bool:
        return all(s.is_unitary and abs(s.norm - 1) < 1e-12 for s in self.splits)

    def with_ops(self, ops) -> "GraphForrelationInstance":
        """Same graph, functions and decompositions with different operators."""
        new = object.__new__(GraphForrelationInstance)
        new.__dict__.update(self.__dict__)
        new.ops = np.asarray(ops, dtype=complex)
        new.splits = [unitary_split(o) for o in new.ops]
        return new

    def side_ops(self, side: str) -> np.ndarray:
        """Per-vertex matrices T with amplitude factor T[x_v, y_v] on the side's vertices."""
        if side == "alpha":
            return self.ops[list(self.partition.A)]
        return np.conj(np.transpose(self.ops[list(self.partition.B)], (0, 2, 1)))


def dense_state(n: int, fn_values: np.ndarray, ops: np.ndarray) -> np.ndarray:
    """(x_j O_j) diag(fn) H|0> as a 2^n vector, index sum_j x_j 2^j."""
    psi = (fn_values * 2.0 ** (-n / 2)).reshape((2,) * n)
    for j in range(n):
        ax = n - 1 - j
        psi = np.moveaxis(np.tensordot(ops[j], psi, axes=([1], [ax])), 0, ax)
    return psi.reshape(-1)


def phi_graph_exact(inst: GraphForrelationInstance) -> complex:
    """Dense evaluation over all 2^n basis states."""
    n = inst.n
    if n > EXACT_CAP:
        raise ValueError(f"n={n} exceeds the exact cap {EXACT_CAP}")
    psi = dense_state(n, inst.f.values(), inst.ops)
    return complex(np.dot(inst.g.values(), psi) * 2.0 ** (-n / 2))


def _op_rows(mats: np.ndarray, a: int, bits: np.ndarray) -> np.ndarray:
    """Row ``bits`` of side operator ``a``; ``mats`` is (k, 2, 2) or per sample (M, k, 2, 2)."""
    if mats.ndim == 3:
        return mats[a][bits, :]
    return mats[np.arange(bits.shape[0]), a, bits, :]


def _bits(xs, n: int) -> np.ndarray:
    xs = np.asarray(xs)
    if xs.ndim == 0 or (xs.ndim == 1 and xs.size != n):
        xs = np.atleast_1d(xs).astype(np.int64)
        return (xs[:, None] >> np.arange(n)) & 1
    return np.atleast_2d(xs).astype(np.int64)


def amplitudes(inst: GraphForrelationInstance, side: str, xs, ops=None) -> np.ndarray:
    """<x|alpha> (side="alpha") or <x|beta> (side="beta") for rows of bits ``xs`` (shape (M, n)).

    ``ops`` replaces the instance operators (used for the unitary branches);
    shape (n, 2, 2), or (M, n, 2, 2) for one operator set per row.
    """
    if side not in ("alpha", "beta"):
        raise ValueError("side must be 'alpha' or 'beta'")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
    sd = inst._alpha if side == "alpha" else inst._beta
    ops = inst.ops if ops is None else np.asarray(ops, dtype=complex)
    mats = ops[..., list(sd.side), :, :]
    if side == "beta":
        mats = np.conj(np.swapaxes(mats, -1, -2))
    x_side = xs[:, list(sd.side)]
    x_rest = xs[:, list(sd.rest)]
    M = xs.shape[0]
    vt = {}
    for a in range(len(sd.side)):
        vt[a] = _op_rows(mats, a, x_side[:, a]) * _folded_vertex(sd, a, x_rest)
    scalar = 2.0 ** (-inst.n / 2) * _rest_weight(sd, x_rest)
    if not sd.side:
        return scalar
    h = TwoLocalFunction(sd.sub, sd.inner, vt, 2, scalar)
    return np.asarray(sum_treewidth(h, sd.td, check=False)).reshape(M)


def amplitude(inst: GraphForrelationInstance, side: str, x) -> complex:
    """One amplitude; ``x`` is a bit sequence or an integer with bit j = qubit j."""
    return complex(amplitudes(inst, side, _bits(x, inst.n))[0])


def _augmented(inst: GraphForrelationInstance, j: int) -> Tuple[Graph, TreeDecomposition]:
    """Graph on y_A plus copies of the first j side vertices, with the doubled decomposition."""
    if j in inst._augmented:
        return inst._augmented[j]
    sd = inst._alpha
    k = len(sd.side)
    edges = []
    for (u, v) in sd.inner:
        edges.append((u, v))
        if u < j and v < j:
            edges.append((k + u, k + v))
        elif u < j:
            edges.append((k + u, v))
        elif v < j:
            edges.append((u, k + v))
    gt = Graph.from_edges(k + j, edges)
    bags = [frozenset(b) | frozenset(k + a for a in b if a < j) for b in sd.td.bags]
    tdt = TreeDecomposition(tuple(bags), sd.td.parent)
    inst._augmented[j] = (gt, tdt)
    return gt, tdt


def _marginals(inst: GraphForrelationInstance, mats: np.ndarray, x_rest: np.ndarray, x_pre: np.ndarray) -> np.ndarray:
    """P(x_B, x_C) for rows of B bits and the first j side bits (j = x_pre.shape[1])."""
    sd = inst._alpha
    k = len(sd.side)
    j = x_pre.shape[1]
    M = x_rest.shape[0]
    if j == 0:
        return np.full(M, 2.0 ** (-len(sd.rest)))
    gt, tdt = _augmented(inst, j)
    vt = {}
    for a in range(k):
        fa = _folded_vertex(sd, a, x_rest)
        if a < j:
            row = _op_rows(mats, a, x_pre[:, a]) * fa
            vt[a] = np.conj(row)
            vt[k + a] = row
        else:
            vt[a] = np.abs(fa) ** 2
    et = {}
    for (u, v), t in sd.inner.items():
        if u < j and v < j:
            et[(u, v)] = t.conj()
            et[(k + u, k + v)] = t
        elif u < j:
            et[(u, v)] = t.conj()
            et[(k + u, v)] = t
        elif v < j:
            et[(u, v)] = t.conj()
            et[(u, k + v)] = t
        else:
            et[(u, v)] = np.abs(t) ** 2
    scalar = 2.0 ** (-inst.n) * np.abs(_rest_weight(sd, x_rest)) ** 2
    h = TwoLocalFunction(gt, et, vt, 2, scalar)
    return np.asarray(sum_treewidth(h, tdt, check=False)).real.reshape(M)


def marginal_probability(inst: GraphForrelationInstance, prefix: Sequence[int], ops=None) -> float:
    """P_l of the first l bits in the order (B vertices sorted, then A vertices sorted).

    Requires unitary operators on A.
    """
    sd = inst._alpha
    ops = inst.ops if ops is None else np.asarray(ops, dtype=complex)
    prefix = list(prefix)
    nb = len(sd.rest)
    if len(prefix) <= nb:
        return 2.0 ** (-len(prefix))
    x_rest = np.array([prefix[:nb]], dtype=np.int64)
    x_pre = np.array([prefix[nb:]], dtype=np.int64)
    return float(_marginals(inst, ops[list(sd.side)], x_rest, x_pre)[0])


def _check_samplable(inst: GraphForrelationInstance, ops: np.ndarray) -> None:
    for v in inst.partition.A:
        o = ops[v]
        if not np.allclose(o.conj().T @ o, np.eye(2), atol=1e-9):
            raise ValueError(f"operator on vertex {v} is not unitary")
    for t in list(inst.f.edge_terms.values()) + list(inst.f.vertex_terms.values()):
        if not np.allclose(np.abs(t), 1, atol=1e-9):
            raise ValueError("f must take values on the unit circle")


DENSE_CACHE_BITS = 20


class _Memo:
    """Values keyed by bit rows; dense arrays for short rows, a dict otherwise."""

    def __init__(self, width: int, dtype):
        self.width = width
        self.dense = width <= DENSE_CACHE_BITS
        self.dtype = dtype
        if self.dense:
            self.table = np.full(1 << width, np.nan, dtype=dtype)
            self.weights = 1 << np.arange(width, dtype=np.int64)
        else:
            self.table = {}

    def lookup(self, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(values with NaN where unknown, keys)."""
        if self.dense:
            keys = rows @ self.weights if self.width else np.zeros(rows.shape[0], dtype=np.int64)
            return self.table[keys], keys
        keys = [r.tobytes() for r in rows]
        return np.array([self.table.get(k, np.nan) for k in keys], dtype=self.dtype), keys

    def store(self, keys, idx, values) -> None:
        if self.dense:
            self.table[keys[idx]] = values
        else:
            for i, v in zip(idx, values):
                self.table[keys[i]] = v


def _memo(cache: dict, key, width: int, dtype) -> _Memo:
    m = cache.get(key)
    if m is None:
        m = cache[key] = _Memo(width, dtype)
    return m


def _sample_counts(inst: GraphForrelationInstance, mats_for, zrows: np.ndarray, rng, cache: Optional[dict]):
    """Draw one x from |<x|alpha>|^2 per row of ``zrows``; returns (unique bit rows, their z rows, counts).

    ``mats_for(z)`` gives the A-side operators for a block of z rows, either
    shared (k, 2, 2) or per row (M, k, 2, 2); rows with different z are
    sampled together.  Bits are drawn in the order (B, then A): B uniformly,
    then each A bit from a ratio of marginals.  Samples are split between the
    two branches with a binomial draw, which gives the same joint law as
    independent sequential draws.  ``cache`` memoises marginals across calls.
    """
    sd = inst._alpha
    nb, k = len(sd.rest), len(sd.side)
    count, m = zrows.shape
    cache = {} if cache is None else cache
    lead = np.concatenate([rng.integers(0, 2, size=(count, nb), dtype=np.int64), zrows], axis=1)
    if lead.shape[1]:
        rows, cnt = np.unique(lead, axis=0, return_counts=True)
    else:
        rows, cnt = np.zeros((1, 0), dtype=np.int64), np.array([count])
    pre = np.zeros((rows.shape[0], 0), dtype=np.int64)
    prob = np.full(rows.shape[0], 2.0 ** (-nb))
    for j in range(k):
        memo = _memo(cache, j + 1, nb + m + j + 1, float)
        ext = np.concatenate([rows, pre, np.zeros((rows.shape[0], 1), dtype=np.int64)], axis=1)
        p0, keys = memo.lookup(ext)
        todo = np.nonzero(np.isnan(p0))[0]
        if todo.size:
            vals = _marginals(inst, mats_for(rows[todo, nb:]), rows[todo, :nb], ext[todo, nb + m :])
            memo.store(keys, todo, vals)
            p0[todo] = vals
        ratio = np.where(prob > 0, p0 / np.where(prob > 0, prob, 1), 0.5)
        if np.any(ratio < -RATIO_TOL) or np.any(ratio > 1 + RATIO_TOL):
            raise FloatingPointError("marginal ratio outside [0, 1]")
        ratio = np.clip(ratio, 0, 1)
        n0 = rng.binomial(cnt, ratio)
        n1 = cnt - n0
        keep0, keep1 = n0 > 0, n1 > 0
        rows = np.concatenate([rows[keep0], rows[keep1]])
        pre = np.concatenate(
            [
                np.concatenate([pre[keep0], np.zeros((keep0.sum(), 1), np.int64)], axis=1),
                np.concatenate([pre[keep1], np.ones((keep1.sum(), 1), np.int64)], axis=1),
            ]
        )
        prob = np.concatenate([p0[keep0], (prob - p0)[keep1]])
        cnt = np.concatenate([n0[keep0], n1[keep1]])
    x = np.zeros((rows.shape[0], inst.n), dtype=np.int64)
    x[:, list(sd.rest)] = rows[:, :nb]
    x[:, list(sd.side)] = pre
    return x, rows[:, nb:], cnt


def _expand_counts(x: np.ndarray, cnt: np.ndarray, rng) -> np.ndarray:
    out = np.repeat(x, cnt, axis=0)
    return out[rng.permutation(out.shape[0])]


def sample_alpha_marginals(inst: GraphForrelationInstance, rng, size: Optional[int] = None, cache: Optional[dict] = None):
    """x ~ |<x|alpha>|^2 via the chain of marginal probabilities; bit rows of shape (size, n)."""
    _check_samplable(inst, inst.ops)
    rng = as_rng(rng)
    mats = inst.ops[list(inst.partition.A)]
    zrows = np.zeros((1 if size is None else size, 0), dtype=np.int64)
    x, _, cnt = _sample_counts(inst, lambda z: mats, zrows, rng, cache)
    out = _expand_counts(x, cnt, rng)
    return out[0] if size is None else out


def _alpha_system(inst: GraphForrelationInstance, ops: np.ndarray) -> Tuple[QuditSystem, TreeDecomposition]:
    f = inst.f
    gates = [DiagonalGate.make(e, t) for e, t in f.edge_terms.items()]
    gates += [DiagonalGate.make((u,), t) for u, t in f.vertex_terms.items()]
    side = set(inst.partition.A)
    full_ops = np.array([ops[v] if v in side else np.eye(2) for v in range(inst.n)], dtype=complex)
    plus = np.full((inst.n, 2), 1 / math.sqrt(2))
    sys = QuditSystem.from_pure(plus, gates, full_ops)
    glob = inst.td_A.relabel({i: v for i, v in enumerate(inst.partition.A)})
    return sys, glob


def sample_alpha_linear(inst: GraphForrelationInstance, rng, size: Optional[int] = None, ops=None):
    """x ~ |<x|alpha>|^2 with the tensor-network sampler after sampling the identity-operator qubits."""
    ops = inst.ops if ops is None else np.asarray(ops, dtype=complex)
    _check_samplable(inst, ops)
    rng = as_rng(rng)
    sys, td = _alpha_system(inst, ops)
    return tn_sample(sys, td, rng, size, easy=True)


def _branch_ops(inst: GraphForrelationInstance, z: np.ndarray) -> np.ndarray:
    return np.array([s.m0 if b == 0 else s.m1 for s, b in zip(inst.splits, z)], dtype=complex)


def _groups(rows: np.ndarray):
    """(distinct row, indices of its occurrences) for each distinct row."""
    if rows.shape[0] == 0:
        return []
    if rows.shape[1] == 0:
        return [(rows[:0].reshape(0), np.arange(rows.shape[0]))]
    keys, inv = np.unique(rows, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(inv, kind="stable")
    bounds = np.cumsum(np.bincount(inv, minlength=keys.shape[0]))[:-1]
    return list(zip(keys, np.split(order, bounds)))


def _cached_amplitudes(inst: GraphForrelationInstance, side: str, memo: "_Memo", x: np.ndarray, zr: np.ndarray, ops_for) -> np.ndarray:
    """Amplitudes of rows ``x`` under the branch operators ``ops_for(zr)``, memoised on (x, z)."""
    rows = np.concatenate([x, zr], axis=1)
    v, keys = memo.lookup(rows)
    todo = np.nonzero(np.isnan(v))[0]
    if todo.size:
        uniq, first, back = np.unique(rows[todo], axis=0, return_index=True, return_inverse=True)
        n = x.shape[1]
        new_v = amplitudes(inst, side, uniq[:, :n], ops_for(uniq[:, n:]))
        memo.store(keys, todo[first], new_v)
        v[todo] = new_v[back.reshape(-1)]
    return v


def phi_graph_estimate(
    inst: GraphForrelationInstance,
    epsilon: float,
    rng,
    sampler: str = "marginal",
    samples: Optional[int] = None,
    cache: Optional[dict] = None,
) -> PhiEstimate:
    """Monte Carlo estimate of the graph forrelation to additive error epsilon (probability >= 0.99).

    ``samples`` overrides S = ceil(100 / epsilon^2).  ``cache`` (a dict) keeps
    marginals and amplitudes between calls on the same instance.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if sampler not in ("marginal", "linear"):
        raise ValueError("sampler must be 'marginal' or 'linear'")
    rng = as_rng(rng)
    S = int(samples) if samples is not None else math.ceil(100 / epsilon**2)
    if S < 1:
        raise ValueError("need at least one sample")
    omega = float(np.prod([s.norm for s in inst.splits]))
    if omega == 0.0:
        return PhiEstimate(0j, epsilon, S, annihilated=True, omega=0.0)
    cache = {} if cache is None else cache
    q0 = np.array([s.q0 for s in inst.splits])
    z = (rng.random((S, inst.n)) >= q0).astype(np.int64)
    mixed = set(np.nonzero(q0 < 1 - 1e-12)[0].tolist())
    mix_a = [v for v in inst.partition.A if v in mixed]
    mix_b = [v for v in inst.partition.B if v in mixed]
    base = _branch_ops(inst, np.zeros(inst.n, dtype=np.int64))
    second_branch = _branch_ops(inst, np.ones(inst.n, dtype=np.int64))

    def ops_for(cols):
        def build(zr):
            ops = np.repeat(base[None], zr.shape[0], axis=0)
            for i, v in enumerate(cols):
                ops[zr[:, i] == 1, v] = second_branch[v]
            return ops

        return build

    ops_a, ops_b = ops_for(mix_a), ops_for(mix_b)
    side_a = list(inst.partition.A)
    marg = cache.setdefault(("marg", tuple(mix_a)), {})
    amp_a = _memo(cache, ("amp", "alpha", tuple(mix_a)), inst.n + len(mix_a), complex)
    amp_b = _memo(cache, ("amp", "beta", tuple(mix_b)), inst.n + len(mix_b), complex)
    if sampler == "marginal":
        _check_samplable(inst, base)
    total = 0j
    second = fourth = 0.0
    failures = 0
    # B-side branches are independent of x and of the A-side branches, so
    # they can be paired with the drawn samples in any order
    pending_a, pending_b = z[:, mix_a], z[:, mix_b]
    while pending_a.shape[0]:
        if sampler == "marginal":
            x, za, cnt = _sample_counts(inst, lambda zr: ops_a(zr)[:, side_a], pending_a, rng, marg)
            x, za = np.repeat(x, cnt, axis=0), np.repeat(za, cnt, axis=0)
        else:
            parts = [(sample_alpha_linear(inst, rng, idx.size, ops_a(zr[None])[0]), pending_a[idx]) for zr, idx in _groups(pending_a)]
            x = np.concatenate([p[0] for p in parts])
            za = np.concatenate([p[1] for p in parts])
        a = _cached_amplitudes(inst, "alpha", amp_a, x, za, ops_a)
        bad = np.abs(a) < 1e-12
        if bad.any():
            failures += int(bad.sum())
            if failures > MAX_RESAMPLE_FAILURES:
                raise FloatingPointError("too many samples with vanishing <alpha|x>")
        good = ~bad
        b = _cached_amplitudes(inst, "beta", amp_b, x[good], pending_b[good], ops_b)
        r = np.conj(b) / np.conj(a[good])
        total += np.sum(r)
        second += float(np.sum(np.abs(r) ** 2))
        fourth += float(np.sum(np.abs(r) ** 4))
        pending_a, pending_b = za[bad], pending_b[bad]
    mean_r = total / S
    m2 = second / S
    return PhiEstimate(
        complex(omega * mean_r),
        epsilon,
        S,
        omega=omega,
        r_second_moment=m2,
        r_variance=max(0.0, m2 - abs(mean_r) ** 2),
        r_second_moment_stderr=math.sqrt(max(0.0, fourth / S - m2**2) / S),
        resample_failures=failures,
    )


def iqp_to_forrelation(h: TwoLocalFunction) -> Tuple[TwoLocalFunction, TwoLocalFunction]:
    """Two-local (f, g) with <0|H U_f H U_g H|0> = <0|H U_h H|0>.

    U_g applies S^dag to every qubit and U_f = e^{i pi n/4} U_h U_g.
    """
    n = h.n
    sdag = np.array([1, -1j])
    g = TwoLocalFunction(h.graph, {}, {u: sdag for u in range(n)})
    vt = {u: h.vertex_terms.get(u, np.ones(2, dtype=complex)) * sdag for u in range(n)}
    f = TwoLocalFunction(h.graph, dict(h.edge_terms), vt, 2, h.scalar * np.exp(1j * math.pi * n / 4))
    return f, g


def iqp_instance(h: TwoLocalFunction) -> GraphForrelationInstance:
    """Graph forrelation instance with Hadamard operators whose value is <0|H U_h H|0>.

    The instance applies its ``f`` first, so the roles of the pair are swapped.
    """
    f, g = iqp_to_forrelation(h)
    ops = np.broadcast_to(HADAMARD, (h.n, 2, 2))
    return GraphForrelationInstance(h.graph, g, f, ops)
