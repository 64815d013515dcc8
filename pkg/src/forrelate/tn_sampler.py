"""Sampling x ~ <x|O U chi U^dag O^dag|x> with a tensor network laid over a tree decomposition.

Wires carry vectorised single-qudit operators: index ``i*d + j`` stands for
|i><j|, so each wire has dimension d^2.  Within a node every tensor has one
axis per bag qudit, in sorted order, optionally preceded by one batch axis.

A node's pipeline is merge -> introduce -> gates -> operators.  The upward
pass stores, for each node, the network below it with every qudit outside the
bag traced out.  The downward pass carries a covector for the rest of the
network, samples the qudits that leave the tree at the node, and returns the
projected subtree to the parent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .graph_core import Graph, TreeDecomposition, normalize_td, validate_td
from .streams import as_rng

__all__ = [
    "DiagonalGate",
    "QuditSystem",
    "MergeTensor",
    "NodeStages",
    "StagedNodeNetwork",
    "NoValidOutput",
    "connectivity_graph",
    "build_network",
    "merge_apply",
    "contract_network_dense",
    "dense_vec_state",
    "brute_force_distribution",
    "TNSampler",
    "sample",
    "remove_easy",
    "restrict_td",
    "amplitude_pure",
]

ZERO_TOL = 1e-14
NEG_TOL = 1e-9
TENSOR_BUDGET = 1 << 26


class NoValidOutput(RuntimeError):
    """The unnormalised distribution is identically zero."""


@dataclass(frozen=True)
class DiagonalGate:
    """Diagonal gate on ``support`` (sorted); ``diag`` has one axis of length d per support qudit."""

    support: Tuple[int, ...]
    diag: np.ndarray

    @classmethod
    def make(cls, support: Sequence[int], diag) -> "DiagonalGate":
        support = [int(s) for s in support]
        diag = np.asarray(diag, dtype=complex)
        if len(set(support)) != len(support):
            raise ValueError("gate support has repeated qudits")
        if diag.ndim != len(support):
            d = round(diag.size ** (1 / max(1, len(support))))
            diag = diag.reshape((d,) * len(support))
        perm = np.argsort(support)
        return cls(tuple(support[p] for p in perm), np.transpose(diag, perm) if len(support) > 1 else diag)


@dataclass
class QuditSystem:
    n: int
    d: int
    chis: np.ndarray
    gates: List[DiagonalGate]
    ops: np.ndarray
    pure_states: Optional[np.ndarray] = None

    def __post_init__(self):
        self.chis = np.asarray(self.chis, dtype=complex)
        self.ops = np.asarray(self.ops, dtype=complex)
        if self.chis.shape != (self.n, self.d, self.d) or self.ops.shape != (self.n, self.d, self.d):
            raise ValueError("chis and ops must have shape (n, d, d)")
        for i, chi in enumerate(self.chis):
            if abs(np.trace(chi) - 1) > 1e-9 or not np.allclose(chi, chi.conj().T, atol=1e-9):
                raise ValueError(f"chi_{i} is not a unit-trace Hermitian matrix")
            if np.linalg.eigvalsh(chi).min() < -1e-9:
                raise ValueError(f"chi_{i} is not positive semidefinite")
        for gt in self.gates:
            if any(not 0 <= s < self.n for s in gt.support):
                raise ValueError(f"gate support {gt.support} outside the system")
            if gt.diag.shape != (self.d,) * len(gt.support):
                raise ValueError(f"gate diagonal on {gt.support} has shape {gt.diag.shape}")
        if self.pure_states is not None:
            self.pure_states = np.asarray(self.pure_states, dtype=complex)

    @classmethod
    def from_pure(cls, states, gates, ops) -> "QuditSystem":
        states = np.asarray(states, dtype=complex)
        states = states / np.linalg.norm(states, axis=1, keepdims=True)
        chis = np.einsum("ni,nj->nij", states, states.conj())
        n, d = states.shape
        return cls(n, d, chis, list(gates), ops, states)


def connectivity_graph(sys: QuditSystem) -> Graph:
    es = set()
    for gt in sys.gates:
        s = gt.support
        for i in range(len(s)):
            for j in range(i + 1, len(s)):
                es.add((s[i], s[j]))
    return Graph.from_edges(sys.n, es)


@dataclass(frozen=True)
class MergeTensor:
    qudit: int
    coeffs: np.ndarray
    mask: np.ndarray

    @classmethod
    def for_state(cls, qudit: int, vec_chi: np.ndarray) -> "MergeTensor":
        mask = np.abs(vec_chi) > ZERO_TOL
        coeffs = np.zeros_like(vec_chi)
        coeffs[mask] = 1.0 / vec_chi[mask]
        return cls(qudit, coeffs, mask)


def merge_apply(m: MergeTensor, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return m.coeffs * u * v


@dataclass
class NodeStages:
    bag: Tuple[int, ...]
    shared: Tuple[int, ...]
    measured: Tuple[int, ...]
    children: Tuple[int, ...]
    merge_counts: Dict[int, int]
    intro: Tuple[int, ...]
    gates: List[int]
    gate_diag: np.ndarray


@dataclass
class StagedNodeNetwork:
    sys: QuditSystem
    td: TreeDecomposition
    nodes: List[NodeStages]
    vec_chi: np.ndarray
    merges: List[MergeTensor]
    doubled_ops: np.ndarray
    wire_dim: int = field(init=False)

    def __post_init__(self):
        self.wire_dim = self.sys.d**2


def _expand(t: np.ndarray, lead: int, sub: Sequence[int], full: Sequence[int]) -> np.ndarray:
    """Broadcast a tensor over sorted ``sub`` (after ``lead`` batch axes) to sorted ``full``."""
    pos = {v: i for i, v in enumerate(full)}
    shape = list(t.shape[:lead]) + [1] * len(full)
    for k, v in enumerate(sub):
        shape[lead + pos[v]] = t.shape[lead + k]
    return t.reshape(shape)


def _vec(mat: np.ndarray) -> np.ndarray:
    return mat.reshape(-1)


def build_network(sys: QuditSystem, td: TreeDecomposition) -> StagedNodeNetwork:
    d = sys.d
    g = connectivity_graph(sys)
    check = validate_td(g, td)
    if not check.ok:
        raise ValueError(f"tree decomposition does not fit the system: axiom {check.axiom}: {check.message}")
    depth = td.depth
    owner: List[List[int]] = [[] for _ in td.bags]
    for j, gt in enumerate(sys.gates):
        holders = [i for i, b in enumerate(td.bags) if set(gt.support) <= b]
        if not holders:
            raise ValueError(f"gate support {gt.support} is not covered by any bag")
        owner[min(holders, key=lambda i: depth[i])].append(j)
    nodes = []
    for i, bag in enumerate(td.bags):
        bag_t = tuple(sorted(bag))
        p = td.parent[i]
        pb = td.bags[p] if p >= 0 else frozenset()
        counts: Dict[int, int] = {}
        for c in td.children[i]:
            for v in td.bags[c] & bag:
                counts[v] = counts.get(v, 0) + 1
        diag = np.ones((d,) * len(bag_t), dtype=complex)
        for j in owner[i]:
            gt = sys.gates[j]
            diag = diag * _expand(gt.diag, 0, gt.support, bag_t)
        nodes.append(
            NodeStages(
                bag=bag_t,
                shared=tuple(v for v in bag_t if v in pb),
                measured=tuple(v for v in bag_t if v not in pb),
                children=tuple(td.children[i]),
                merge_counts=counts,
                intro=tuple(v for v in bag_t if v not in counts),
                gates=owner[i],
                gate_diag=diag,
            )
        )
    vec_chi = np.stack([_vec(c) for c in sys.chis])
    merges = [MergeTensor.for_state(b, vec_chi[b]) for b in range(sys.n)]
    doubled = np.einsum("nab,ncd->nacbd", sys.ops, sys.ops.conj()).reshape(sys.n, d * d, d * d)
    return StagedNodeNetwork(sys, td, nodes, vec_chi, merges, doubled)


def _doubled_gate(diag: np.ndarray) -> np.ndarray:
    """Diagonal of U (x) conj(U) on interleaved (ket, bra) wire indices."""
    k = diag.ndim
    if k == 0:
        return np.asarray(abs(diag) ** 2, dtype=complex)
    d = diag.shape[0]
    outer = np.multiply.outer(diag, diag.conj())
    order = [a for i in range(k) for a in (i, k + i)]
    return outer.transpose(order).reshape((d * d,) * k)


def _apply_on_axis(t: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(t, mat, axes=([axis], [1])), -1, axis)


def _pull_on_axis(t: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(t, mat, axes=([axis], [0])), -1, axis)


def _assemble(net: StagedNodeNetwork, i: int, msgs: Dict[int, np.ndarray], lead: int) -> np.ndarray:
    """Merge, introduction and gate stages; returns the pre-operator tensor over the bag."""
    node = net.nodes[i]
    bag = node.bag
    D = net.wire_dim
    t = np.ones((1,) * lead + (D,) * len(bag), dtype=complex)
    for c, m in msgs.items():
        cq = tuple(v for v in bag if v in net.td.bags[c])
        t = t * _expand(m, lead, cq, bag)
    for b, k in node.merge_counts.items():
        if k > 1:
            t = t * _expand(net.merges[b].coeffs ** (k - 1), 0, (b,), bag)[(None,) * lead]
    for b in node.intro:
        t = t * _expand(net.vec_chi[b], 0, (b,), bag)[(None,) * lead]
    return t * _doubled_gate(node.gate_diag)[(None,) * lead]


def _operators(net: StagedNodeNetwork, i: int, t: np.ndarray, lead: int) -> np.ndarray:
    node = net.nodes[i]
    for b in node.measured:
        t = _apply_on_axis(t, net.doubled_ops[b], lead + node.bag.index(b))
    return t


def contract_network_dense(net: StagedNodeNetwork) -> np.ndarray:
    """Contract the whole staged network without tracing anything; axes ordered by qudit.

    Each node passes up a tensor whose leading axes are the wires shared with
    its parent, followed by the free (measured) wires of its subtree.
    """
    td = net.td
    up: Dict[int, Tuple[List[int], np.ndarray]] = {}
    for i in reversed(td.order):
        node = net.nodes[i]
        bag = list(node.bag)
        t = _assemble(net, i, {}, 0)
        free: List[int] = []
        for c in node.children:
            cfree, m = up.pop(c)
            cq = [v for v in bag if v in td.bags[c]]
            t = t.reshape(t.shape + (1,) * len(cfree))
            shape = [1] * (len(bag) + len(free)) + list(m.shape[len(cq) :])
            for k, v in enumerate(cq):
                shape[bag.index(v)] = m.shape[k]
            t = t * m.reshape(shape)
            free += cfree
        for b in node.measured:
            t = _apply_on_axis(t, net.doubled_ops[b], bag.index(b))
        axes = bag + free
        front = [axes.index(v) for v in node.shared]
        rest = [k for k in range(len(axes)) if k not in front]
        up[i] = ([axes[k] for k in rest], t.transpose(front + rest))
    free, t = up[td.root]
    return t.transpose(np.argsort(free)).reshape(-1)


def dense_vec_state(sys: QuditSystem) -> np.ndarray:
    """vec(O U chi U^dag O^dag) by direct dense algebra; interleaved (ket, bra) per qudit."""
    n, d = sys.n, sys.d
    rho = np.ones((1, 1), dtype=complex)
    for chi in sys.chis:
        rho = np.kron(rho, chi)
    diag = np.ones((d,) * n, dtype=complex)
    for gt in sys.gates:
        diag = diag * _expand(gt.diag, 0, gt.support, tuple(range(n)))
    u = diag.reshape(-1)
    rho = u[:, None] * rho * u.conj()[None, :]
    o = np.ones((1, 1), dtype=complex)
    for op in sys.ops:
        o = np.kron(o, op)
    rho = o @ rho @ o.conj().T
    t = rho.reshape((d,) * (2 * n))
    order = [a for i in range(n) for a in (i, n + i)]
    return t.transpose(order).reshape(-1)


def brute_force_distribution(sys: QuditSystem) -> np.ndarray:
    """Normalised P(x) over d^n outcomes, x indexed with qudit 0 most significant."""
    d, n = sys.d, sys.n
    v = dense_vec_state(sys).reshape((d * d,) * n)
    idx = np.arange(d) * (d + 1)
    p = v[np.ix_(*([idx] * n))].real.reshape(-1)
    total = p.sum()
    if total <= ZERO_TOL:
        raise NoValidOutput("distribution is identically zero")
    return np.clip(p, 0, None) / total


class TNSampler:
    """Prepared sampler: runs the upward pass once, then draws batches of samples."""

    def __init__(self, sys: QuditSystem, td: TreeDecomposition):
        self.sys = sys
        self.td = normalize_td(td)
        self.net = build_network(sys, self.td)
        d = sys.d
        self._diag_idx = np.arange(d) * (d + 1)
        self._vec_id = np.zeros(d * d, dtype=complex)
        self._vec_id[self._diag_idx] = 1.0
        # outcome covectors pulled back through the operator stage: rows K[x*d+x, :]
        self._outcome_rows = self.net.doubled_ops[:, self._diag_idx, :]
        self.rho: List[Optional[np.ndarray]] = [None] * self.td.num_nodes
        self.rho_msg: List[Optional[np.ndarray]] = [None] * self.td.num_nodes
        self._upward()

    def _upward(self):
        net = self.net
        for i in reversed(self.td.order):
            node = net.nodes[i]
            msgs = {c: self.rho_msg[c] for c in node.children}
            t = _operators(net, i, _assemble(net, i, msgs, 0), 0)
            # distribution over measured qudits given the shared wires: take diagonal entries
            diag = t
            for b in node.measured:
                ax = node.bag.index(b)
                diag = np.take(diag, self._diag_idx, axis=ax)
            self.rho[i] = self._reorder_shared_first(i, diag, 0)
            m = t
            for b in reversed(node.measured):
                m = np.tensordot(m, self._vec_id, axes=([node.bag.index(b)], [0]))
            scale = np.abs(m).max() if m.size else 0.0
            self.rho_msg[i] = m / scale if scale > 0 else m
        root = self.td.root
        total = self.rho[root].real.sum()
        ref = np.abs(self.rho[root]).max() if self.rho[root].size else 0.0
        if not total > 1e-12 * max(ref, 1e-300) or ref == 0:
            self.valid = False
        else:
            self.valid = True

    def _reorder_shared_first(self, i: int, t: np.ndarray, lead: int) -> np.ndarray:
        node = self.net.nodes[i]
        front = [lead + node.bag.index(v) for v in node.shared]
        back = [lead + node.bag.index(v) for v in node.measured]
        return t.transpose(list(range(lead)) + front + back)

    def sample(self, rng, size: int, chunk: Optional[int] = None) -> np.ndarray:
        """``size`` samples as an int array of shape (size, n)."""
        if not self.valid:
            raise NoValidOutput("no valid outputs: the distribution is identically zero")
        rng = as_rng(rng)
        out = np.zeros((size, self.sys.n), dtype=np.int64)
        if chunk is None:
            widest = max(len(b) for b in self.td.bags)
            chunk = max(4096, TENSOR_BUDGET // self.net.wire_dim**widest)
        for lo in range(0, size, chunk):
            part = out[lo : lo + chunk]
            self._descend(self.td.root, np.ones((1,), dtype=complex), np.zeros(part.shape[0], dtype=np.int64), part, rng)
        return out

    def _descend(self, i: int, pi: np.ndarray, origin: np.ndarray, out: np.ndarray, rng):
        """Visit node ``i``.  Sample ``s`` sees covector ``pi[origin[s]]``.

        Returns the projected subtree as (rows, origin map), or None at the root.
        """
        net, node, d = self.net, self.net.nodes[i], self.sys.d
        D = net.wire_dim
        ns, nm = len(node.shared), len(node.measured)
        N = origin.size
        if nm:
            probs = (pi.reshape(pi.shape[0], D**ns) @ self.rho[i].reshape(D**ns, d**nm)).real
            totals = probs.sum(axis=1)
            if np.any(totals <= 0):
                raise NoValidOutput("post-selected state vanished; distribution is identically zero")
            if np.any(probs < -NEG_TOL * totals[:, None]):
                raise FloatingPointError("negative probability beyond tolerance")
            cdf = np.cumsum(np.clip(probs, 0, None), axis=1)
            cdf /= cdf[:, -1:]
            flat = np.minimum((cdf[origin] < rng.random(N)[:, None]).sum(axis=1), d**nm - 1)
            key = origin * d**nm + flat
        else:
            key = origin
        groups, hist = np.unique(key, return_inverse=True)
        hist = hist.reshape(-1)
        g_origin, g_flat = groups // d**nm, groups % d**nm
        g_digits = np.stack(np.unravel_index(g_flat, (d,) * nm), axis=1) if nm else np.zeros((groups.size, 0), np.int64)
        for k, b in enumerate(node.measured):
            out[:, b] = g_digits[hist, k]

        # covector over the bag after the gate stage, one row per history group
        y = _expand(pi[g_origin], 1, node.shared, node.bag)
        for k, b in enumerate(node.measured):
            y = y * _expand(self._outcome_rows[b][g_digits[:, k]], 1, (b,), node.bag)
        y = y * _doubled_gate(node.gate_diag)[None]
        for b in node.intro:
            y = y * _expand(net.vec_chi[b], 0, (b,), node.bag)[None]
        for b, k in node.merge_counts.items():
            if k > 1:
                y = y * _expand(net.merges[b].coeffs ** (k - 1), 0, (b,), node.bag)[None]

        kids = list(node.children)
        done: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        for c in kids:
            rows, inv = _combine([hist] + [done[s][1] for s in kids if s in done])
            z = y[rows[:, 0]]
            col = 1
            for s in kids:
                if s == c:
                    continue
                sq = tuple(v for v in node.bag if v in self.td.bags[s])
                if s in done:
                    msg = done[s][0][rows[:, col]]
                    col += 1
                else:
                    msg = self.rho_msg[s][None]
                z = z * _expand(msg, 1, sq, node.bag)
            drop = tuple(1 + k for k, v in enumerate(node.bag) if v not in self.td.bags[c])
            if drop:
                z = z.sum(axis=drop)
            done[c] = self._descend(c, _normalise_rows(z), inv, out, rng)
        if self.td.parent[i] < 0:
            return None

        rows, inv = _combine([hist] + [done[c][1] for c in kids])
        msgs = {c: done[c][0][rows[:, 1 + k]] for k, c in enumerate(kids)}
        t = _assemble(net, i, msgs, 1)
        t = np.broadcast_to(t, (rows.shape[0],) + t.shape[1:])
        digits = g_digits[rows[:, 0]]
        for k in reversed(range(nm)):
            b = node.measured[k]
            row = self._outcome_rows[b][digits[:, k]]
            t = np.einsum("n...k,nk->n...", np.moveaxis(t, 1 + node.bag.index(b), -1), row)
        return _normalise_rows(t), inv


def _combine(parts: List[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Unique rows of the stacked index maps and the per-sample row index."""
    stacked = np.stack(parts, axis=1)
    if stacked.shape[1] == 1:
        u, inv = np.unique(stacked[:, 0], return_inverse=True)
        return u[:, None], inv.reshape(-1)
    u, inv = np.unique(stacked, axis=0, return_inverse=True)
    return u, inv.reshape(-1)


def _normalise_rows(t: np.ndarray) -> np.ndarray:
    t = np.array(t, dtype=complex)
    if t.ndim == 1:
        s = np.abs(t)
    else:
        s = np.abs(t.reshape(t.shape[0], -1)).max(axis=1)
    s = np.where(s > 0, s, 1.0)
    return t / s.reshape((-1,) + (1,) * (t.ndim - 1))


def restrict_td(td: TreeDecomposition, keep: Sequence[int]) -> TreeDecomposition:
    """Drop vertices not in ``keep`` and relabel the rest to their position in ``keep``."""
    index = {v: i for i, v in enumerate(keep)}
    return TreeDecomposition(tuple(frozenset(index[v] for v in b if v in index) for b in td.bags), td.parent)


def _is_identity(op: np.ndarray, tol: float = 1e-12) -> bool:
    return np.allclose(op, np.eye(op.shape[0]), atol=tol, rtol=0)


def _check_easy(sys: QuditSystem, easy: Sequence[int]) -> None:
    # the easy marginal is diag(chi_a) only if the other operators preserve the trace
    for a in range(sys.n):
        if a not in easy and not _is_identity(sys.ops[a].conj().T @ sys.ops[a], 1e-9):
            raise ValueError(f"easy-qudit removal needs unitary operators; O_{a} is not unitary")


def remove_easy(sys: QuditSystem, rng) -> Tuple[Dict[int, int], QuditSystem, List[int]]:
    """Sample every qudit whose operator is the identity and restrict gates to the outcomes.

    Valid when the product of the gates is unitary and the remaining operators
    are unitary.  Returns (outcomes, reduced system, old labels of the kept qudits).
    """
    rng = as_rng(rng)
    easy = [a for a in range(sys.n) if _is_identity(sys.ops[a])]
    if not easy:
        return {}, sys, list(range(sys.n))
    _check_easy(sys, easy)
    outcomes = {}
    for a in easy:
        p = np.clip(np.diagonal(sys.chis[a]).real, 0, None)
        outcomes[a] = int(rng.choice(sys.d, p=p / p.sum()))
    return outcomes, *_reduce(sys, outcomes)


def _reduce(sys: QuditSystem, outcomes: Dict[int, int]) -> Tuple[QuditSystem, List[int]]:
    keep = [a for a in range(sys.n) if a not in outcomes]
    index = {v: i for i, v in enumerate(keep)}
    gates = []
    for gt in sys.gates:
        sl = tuple(outcomes[s] if s in outcomes else slice(None) for s in gt.support)
        diag = gt.diag[sl]
        support = tuple(index[s] for s in gt.support if s not in outcomes)
        if support:
            gates.append(DiagonalGate(support, diag))
    pure = sys.pure_states[keep] if sys.pure_states is not None else None
    reduced = QuditSystem(len(keep), sys.d, sys.chis[keep], gates, sys.ops[keep], pure)
    return reduced, keep


def sample(sys: QuditSystem, td: TreeDecomposition, rng, size: Optional[int] = None, easy: bool = False):
    """Draw samples from P(x) proportional to <x|O U chi U^dag O^dag|x>.

    With ``easy=True`` (gates must multiply to a unitary, operators must be unitary) qudits with identity
    operators are sampled first; samples sharing those outcomes share one
    reduced network.  ``td`` must fit the connectivity graph of ``sys``.
    """
    rng = as_rng(rng)
    count = 1 if size is None else int(size)
    if not easy:
        res = TNSampler(sys, td).sample(rng, count)
        return res[0] if size is None else res
    easy_q = [a for a in range(sys.n) if _is_identity(sys.ops[a])]
    if easy_q:
        _check_easy(sys, easy_q)
    out = np.zeros((count, sys.n), dtype=np.int64)
    for a in easy_q:
        p = np.clip(np.diagonal(sys.chis[a]).real, 0, None)
        out[:, a] = rng.choice(sys.d, size=count, p=p / p.sum())
    keep = [a for a in range(sys.n) if a not in set(easy_q)]
    if keep:
        sub_td = restrict_td(td, keep)
        groups, inverse = np.unique(out[:, easy_q], axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        for gi, row in enumerate(groups):
            rows = np.nonzero(inverse == gi)[0]
            reduced, _ = _reduce(sys, {a: int(v) for a, v in zip(easy_q, row)})
            draws = TNSampler(reduced, sub_td).sample(rng, rows.size)
            out[np.ix_(rows, keep)] = draws
    return out[0] if size is None else out


def _pure_vector(sys: QuditSystem, i: int) -> np.ndarray:
    if sys.pure_states is not None:
        return sys.pure_states[i]
    w, v = np.linalg.eigh(sys.chis[i])
    if w[-1] < 1 - 1e-9:
        raise ValueError(f"chi_{i} is not a pure state")
    vec = v[:, -1]
    k = int(np.argmax(np.abs(vec) > 1e-12))
    return vec * (abs(vec[k]) / vec[k])


def amplitude_pure(sys: QuditSystem, td: TreeDecomposition, xs) -> np.ndarray:
    """<x|alpha> for |alpha> = O U |chi> on single d-dimensional wires; ``xs`` has shape (n,) or (N, n).

    Without explicit ``pure_states`` each rank-1 chi is turned into a vector
    whose first nonzero entry is real and positive.
    """
    xs = np.asarray(xs, dtype=np.int64)
    single = xs.ndim == 1
    xs = np.atleast_2d(xs)
    N = xs.shape[0]
    states = np.stack([_pure_vector(sys, i) for i in range(sys.n)])
    td = normalize_td(td)
    net = build_network(sys, td)
    coeffs = np.zeros_like(states)
    mask = np.abs(states) > ZERO_TOL
    coeffs[mask] = 1.0 / states[mask]
    msgs: Dict[int, np.ndarray] = {}
    for i in reversed(td.order):
        node = net.nodes[i]
        bag = node.bag
        t = np.ones((1,) + (sys.d,) * len(bag), dtype=complex)
        for c in node.children:
            cq = tuple(v for v in bag if v in td.bags[c])
            t = t * _expand(msgs.pop(c), 1, cq, bag)
        for b, k in node.merge_counts.items():
            if k > 1:
                t = t * _expand(coeffs[b] ** (k - 1), 0, (b,), bag)[None]
        for b in node.intro:
            t = t * _expand(states[b], 0, (b,), bag)[None]
        t = t * node.gate_diag[None]
        t = np.broadcast_to(t, (N,) + t.shape[1:])
        for b in reversed(node.measured):
            ax = 1 + bag.index(b)
            row = sys.ops[b][xs[:, b]]
            t = np.einsum("n...k,nk->n...", np.moveaxis(t, ax, -1), row)
        msgs[i] = t
    res = msgs[td.root].reshape(N)
    return res[0] if single else res
