"""Two-local functions h(x) = prod_edges h_uv(x_u, x_v) prod_vertices h_u(x_u) and their sums.

Term tables may carry leading batch axes; every sum then returns an array of
that batch shape, one independent sum per batch entry.
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .graph_core import Graph, TreeDecomposition, validate_td

__all__ = [
    "TwoLocalFunction",
    "TreeLocalFunction",
    "restrict",
    "sum_tree",
    "sum_treewidth",
    "assign_terms",
]


class TwoLocalFunction:
    """Edge tables ``edge_terms[(u, v)][a, b]`` with u < v, vertex tables ``vertex_terms[u][a]``.

    Missing terms are identically 1.  ``scalar`` multiplies the whole function.
    """

    def __init__(
        self,
        graph: Graph,
        edge_terms: Optional[Mapping[Tuple[int, int], object]] = None,
        vertex_terms: Optional[Mapping[int, object]] = None,
        d: int = 2,
        scalar=1.0,
    ):
        self.graph = graph
        self.d = d
        self.scalar = np.asarray(scalar, dtype=complex)
        self.edge_terms: Dict[Tuple[int, int], np.ndarray] = {}
        self.vertex_terms: Dict[int, np.ndarray] = {}
        for (u, v), t in (edge_terms or {}).items():
            t = np.asarray(t, dtype=complex)
            if t.shape[-2:] != (d, d):
                raise ValueError(f"edge term ({u},{v}) must end in shape ({d},{d})")
            if not graph.has_edge(u, v):
                raise ValueError(f"edge term ({u},{v}) is not a graph edge")
            if u > v:
                u, v, t = v, u, np.swapaxes(t, -1, -2)
            if (u, v) in self.edge_terms:
                raise ValueError(f"edge ({u},{v}) given twice")
            self.edge_terms[(u, v)] = t
        for u, t in (vertex_terms or {}).items():
            t = np.asarray(t, dtype=complex)
            if t.shape[-1:] != (d,):
                raise ValueError(f"vertex term {u} must end in length {d}")
            if not 0 <= u < graph.n:
                raise ValueError(f"vertex {u} out of range")
            self.vertex_terms[int(u)] = t
        for t in list(self.edge_terms.values()) + list(self.vertex_terms.values()) + [self.scalar]:
            if not np.all(np.isfinite(t)):
                raise ValueError("term tables must be finite")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        shapes = [t.shape[:-2] for t in self.edge_terms.values()]
        shapes += [t.shape[:-1] for t in self.vertex_terms.values()]
        shapes.append(self.scalar.shape)
        return np.broadcast_shapes(*shapes)

    def eval(self, x: Sequence[int]):
        x = [int(a) for a in x]
        if len(x) != self.n:
            raise ValueError("assignment length differs from vertex count")
        out = self.scalar
        for (u, v), t in self.edge_terms.items():
            out = out * t[..., x[u], x[v]]
        for u, t in self.vertex_terms.items():
            out = out * t[..., x[u]]
        return out[()] if out.ndim == 0 else out

    def values(self) -> np.ndarray:
        """All d^n values; index sum_j x_j d^j (unbatched functions only)."""
        if self.batch_shape:
            raise ValueError("values() needs an unbatched function")
        n, d = self.n, self.d
        idx = np.arange(d**n)
        digits = [(idx // d**j) % d for j in range(n)]
        out = np.full(d**n, complex(self.scalar))
        for (u, v), t in self.edge_terms.items():
            out *= t[digits[u], digits[v]]
        for u, t in self.vertex_terms.items():
            out *= t[digits[u]]
        return out

    def conj(self) -> "TwoLocalFunction":
        return TwoLocalFunction(
            self.graph,
            {e: t.conj() for e, t in self.edge_terms.items()},
            {u: t.conj() for u, t in self.vertex_terms.items()},
            self.d,
            self.scalar.conj(),
        )


class TreeLocalFunction(TwoLocalFunction):
    """Two-local function whose graph is a forest."""

    def __init__(self, graph: Graph, edge_terms=None, vertex_terms=None, d: int = 2, scalar=1.0):
        if graph.num_edges != graph.n - len(graph.components()):
            raise ValueError("graph contains a cycle")
        super().__init__(graph, edge_terms, vertex_terms, d, scalar)


def restrict(h: TwoLocalFunction, fixed: Mapping[int, int]) -> Tuple[TwoLocalFunction, List[int]]:
    """Fix some variables.  Returns the function on the remaining vertices (relabelled) and their old labels."""
    fixed = {int(v): int(a) for v, a in fixed.items()}
    for v, a in fixed.items():
        if not 0 <= v < h.n or not 0 <= a < h.d:
            raise ValueError(f"bad fixed value {v}={a}")
    sub, keep = h.graph.induced_subgraph(v for v in range(h.n) if v not in fixed)
    index = {v: i for i, v in enumerate(keep)}
    scalar = h.scalar
    vt: Dict[int, np.ndarray] = {}
    et: Dict[Tuple[int, int], np.ndarray] = {}

    def fold(i, t):
        vt[i] = vt[i] * t if i in vt else t

    for u, t in h.vertex_terms.items():
        if u in fixed:
            scalar = scalar * t[..., fixed[u]]
        else:
            fold(index[u], t)
    for (u, v), t in h.edge_terms.items():
        if u in fixed and v in fixed:
            scalar = scalar * t[..., fixed[u], fixed[v]]
        elif u in fixed:
            fold(index[v], t[..., fixed[u], :])
        elif v in fixed:
            fold(index[u], t[..., :, fixed[v]])
        else:
            et[(index[u], index[v])] = t
    return TwoLocalFunction(sub, et, vt, h.d, scalar), keep


def sum_tree(h: TwoLocalFunction):
    """Sum over all assignments of a forest-structured function by repeated leaf removal."""
    g = h.graph
    if g.num_edges != g.n - len(g.components()):
        raise ValueError("sum_tree needs an acyclic graph")
    batch = h.batch_shape
    vt = [np.broadcast_to(h.vertex_terms.get(u, np.ones(h.d, dtype=complex)), batch + (h.d,)).copy() for u in range(g.n)]
    adj = [set(a) for a in g.adjacency]
    total = np.broadcast_to(h.scalar, batch).astype(complex)
    stack = [u for u in range(g.n) if len(adj[u]) <= 1]
    done = [False] * g.n
    while stack:
        u = stack.pop()
        if done[u] or len(adj[u]) > 1:
            continue
        done[u] = True
        if not adj[u]:
            total = total * vt[u].sum(axis=-1)
            continue
        (v,) = adj[u]
        if u < v:
            t = h.edge_terms.get((u, v))
            msg = vt[u].sum(axis=-1)[..., None] if t is None else np.einsum("...a,...ab->...b", vt[u], t)
        else:
            t = h.edge_terms.get((v, u))
            msg = vt[u].sum(axis=-1)[..., None] if t is None else np.einsum("...a,...ba->...b", vt[u], t)
        vt[v] = vt[v] * msg
        adj[v].discard(u)
        adj[u].clear()
        if len(adj[v]) <= 1:
            stack.append(v)
    return complex(total) if total.ndim == 0 else total


def assign_terms(h: TwoLocalFunction, td: TreeDecomposition):
    """Map every edge and vertex term to one covering bag (first in top-down order)."""
    edge_home: Dict[Tuple[int, int], int] = {}
    vert_home: Dict[int, int] = {}
    for i in td.order:
        bag = td.bags[i]
        for u in bag:
            if u in h.vertex_terms and u not in vert_home:
                vert_home[u] = i
        for e in h.edge_terms:
            if e not in edge_home and e[0] in bag and e[1] in bag:
                edge_home[e] = i
    missing = [e for e in h.edge_terms if e not in edge_home] + [u for u in h.vertex_terms if u not in vert_home]
    if missing:
        raise ValueError(f"terms without a covering bag: {missing[:5]}")
    return edge_home, vert_home


def _expand(t: np.ndarray, nbatch: int, positions: Sequence[int], width: int) -> np.ndarray:
    """Reshape trailing axes of ``t`` (at increasing ``positions``) to broadcast over a width-axis table."""
    shape = list(t.shape[: t.ndim - len(positions)])
    shape = [1] * (nbatch - len(shape)) + shape
    tail = [1] * width
    for p, size in zip(positions, t.shape[t.ndim - len(positions) :]):
        tail[p] = size
    return t.reshape(shape + tail)


def sum_treewidth(h: TwoLocalFunction, td: TreeDecomposition, check: bool = True):
    """Sum of h over all assignments by message passing on a tree decomposition.

    Each bag holds a table over its vertices (sorted), built from the terms
    assigned to it; a child's table is summed over the vertices it does not
    share with its parent and multiplied into the parent's table.
    """
    if check:
        res = validate_td(h.graph, td)
        if not res.ok:
            raise ValueError(f"invalid tree decomposition: axiom {res.axiom}: {res.message}")
    d = h.d
    batch = h.batch_shape
    nb = len(batch)
    edge_home, vert_home = assign_terms(h, td)
    bag_vs = [sorted(b) for b in td.bags]
    pos = [{v: i for i, v in enumerate(bv)} for bv in bag_vs]
    tables: List[Optional[np.ndarray]] = [None] * td.num_nodes
    for i in range(td.num_nodes):
        tables[i] = np.ones((1,) * nb + (d,) * len(bag_vs[i]), dtype=complex)
    for (u, v), i in edge_home.items():
        tables[i] = tables[i] * _expand(h.edge_terms[(u, v)], nb, (pos[i][u], pos[i][v]), len(bag_vs[i]))
    for u, i in vert_home.items():
        tables[i] = tables[i] * _expand(h.vertex_terms[u], nb, (pos[i][u],), len(bag_vs[i]))
    for i in reversed(td.order):
        p = td.parent[i]
        if p < 0:
            continue
        t = tables[i]
        drop = tuple(nb + k for k, v in enumerate(bag_vs[i]) if v not in pos[p])
        if drop:
            t = t.sum(axis=drop)
        shared = [pos[p][v] for v in bag_vs[i] if v in pos[p]]
        tables[p] = tables[p] * _expand(t, nb, shared, len(bag_vs[p]))
        tables[i] = None
    root = tables[td.root]
    total = root.sum(axis=tuple(range(nb, root.ndim))) if root.ndim > nb else root
    total = np.broadcast_to(total * h.scalar, batch)
    return complex(total) if total.ndim == 0 else total.copy()
