"""Graphs with optional planar embeddings, outerplanar peeling and tree decompositions.

A rotation system lists, for every vertex, its neighbours in counter-clockwise
order.  Faces are traced from it; any face may serve as the outer face.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

__all__ = [
    "Graph",
    "VertexPartition",
    "TreeDecomposition",
    "TDCheck",
    "NotTwoDegenerate",
    "EmbeddingError",
    "generate_grid",
    "generate_triangular",
    "generate_path",
    "generate_cycle",
    "faces",
    "peel_layers",
    "peel_partition",
    "outerplanar_td",
    "min_fill_td",
    "partition_heuristic",
    "partition_with_tds",
    "validate_td",
    "normalize_td",
    "contract_edge",
]

Edge = Tuple[int, int]


class NotTwoDegenerate(ValueError):
    """Peeling got stuck: every remaining vertex has degree >= 3."""


class EmbeddingError(ValueError):
    """Missing or inconsistent rotation system."""


def _norm_edge(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    edges: FrozenSet[Edge]
    rotation: Optional[Tuple[Tuple[int, ...], ...]] = None
    outer_face: Optional[Tuple[int, ...]] = None

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[Sequence[int]],
        rotation: Optional[Sequence[Sequence[int]]] = None,
        outer_face: Optional[Sequence[int]] = None,
    ) -> "Graph":
        es = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop at {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u},{v}) outside 0..{n - 1}")
            e = _norm_edge(u, v)
            if e in es:
                raise ValueError(f"duplicate edge {e}")
            es.add(e)
        rot = None
        if rotation is not None:
            rot = tuple(tuple(int(w) for w in r) for r in rotation)
            if len(rot) != n:
                raise ValueError("rotation system must list every vertex")
        outer = tuple(int(v) for v in outer_face) if outer_face is not None else None
        g = cls(n, frozenset(es), rot, outer)
        if rot is not None:
            for v in range(n):
                if len(rot[v]) != len(set(rot[v])) or set(rot[v]) != g.adjacency[v]:
                    raise ValueError(f"rotation at vertex {v} does not match its edges")
        return g

    @cached_property
    def adjacency(self) -> Tuple[FrozenSet[int], ...]:
        adj: List[set] = [set() for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return tuple(frozenset(a) for a in adj)

    def neighbors(self, v: int) -> FrozenSet[int]:
        return self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def has_edge(self, u: int, v: int) -> bool:
        return _norm_edge(u, v) in self.edges

    def edge_list(self) -> List[Edge]:
        return sorted(self.edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def components(self) -> List[List[int]]:
        seen = [False] * self.n
        comps = []
        for s in range(self.n):
            if seen[s]:
                continue
            seen[s] = True
            comp, queue = [], deque([s])
            while queue:
                v = queue.popleft()
                comp.append(v)
                for w in self.adjacency[v]:
                    if not seen[w]:
                        seen[w] = True
                        queue.append(w)
            comps.append(sorted(comp))
        return comps

    def induced_subgraph(self, vertices: Iterable[int]) -> Tuple["Graph", List[int]]:
        """Subgraph on ``vertices`` relabelled 0..k-1 in sorted order; returns (graph, old labels)."""
        verts = sorted(set(vertices))
        index = {v: i for i, v in enumerate(verts)}
        es = [(index[u], index[v]) for u, v in self.edges if u in index and v in index]
        rot = None
        if self.rotation is not None:
            rot = [[index[w] for w in self.rotation[v] if w in index] for v in verts]
        return Graph.from_edges(len(verts), es, rot), verts

    def without_edges(self, drop: Iterable[Sequence[int]]) -> "Graph":
        gone = {_norm_edge(int(u), int(v)) for u, v in drop}
        es = [e for e in self.edges if e not in gone]
        rot = None
        if self.rotation is not None:
            rot = [[w for w in self.rotation[v] if _norm_edge(v, w) not in gone] for v in range(self.n)]
        return Graph.from_edges(self.n, es, rot, self.outer_face)

    def bfs_distances(self, sources: Iterable[int], radius: Optional[int] = None) -> Dict[int, int]:
        dist = {s: 0 for s in sources}
        queue = deque(dist)
        while queue:
            v = queue.popleft()
            if radius is not None and dist[v] >= radius:
                continue
            for w in self.adjacency[v]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        return dist


@dataclass(frozen=True)
class VertexPartition:
    A: Tuple[int, ...]
    B: Tuple[int, ...]

    @classmethod
    def of(cls, a: Iterable[int], b: Iterable[int]) -> "VertexPartition":
        a, b = tuple(sorted(set(a))), tuple(sorted(set(b)))
        if set(a) & set(b):
            raise ValueError("sides overlap")
        return cls(a, b)

    def covers(self, n: int) -> bool:
        return sorted(self.A + self.B) == list(range(n))


@dataclass(frozen=True, eq=False)
class TreeDecomposition:
    """Rooted tree of bags; ``parent[root] == -1``."""

    bags: Tuple[FrozenSet[int], ...]
    parent: Tuple[int, ...]

    def __post_init__(self):
        if len(self.bags) != len(self.parent) or not self.bags:
            raise ValueError("need one parent entry per bag and at least one bag")
        roots = [i for i, p in enumerate(self.parent) if p == -1]
        if len(roots) != 1:
            raise ValueError("tree must have exactly one root")
        if len(self.order) != len(self.bags):
            raise ValueError("parent pointers do not form a tree")

    @classmethod
    def from_tree_edges(cls, bags: Sequence[Iterable[int]], tree_edges: Iterable[Tuple[int, int]], root: int = 0):
        m = len(bags)
        adj: List[List[int]] = [[] for _ in range(m)]
        for a, b in tree_edges:
            adj[a].append(b)
            adj[b].append(a)
        parent = [-2] * m
        parent[root] = -1
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if parent[w] == -2:
                    parent[w] = v
                    queue.append(w)
        if -2 in parent:
            raise ValueError("tree edges do not connect all nodes")
        return cls(tuple(frozenset(b) for b in bags), tuple(parent))

    @property
    def num_nodes(self) -> int:
        return len(self.bags)

    @cached_property
    def root(self) -> int:
        return self.parent.index(-1)

    @cached_property
    def children(self) -> Tuple[Tuple[int, ...], ...]:
        ch: List[List[int]] = [[] for _ in self.bags]
        for i, p in enumerate(self.parent):
            if p >= 0:
                ch[p].append(i)
        return tuple(tuple(c) for c in ch)

    @cached_property
    def order(self) -> Tuple[int, ...]:
        """Top-down (BFS) order from the root."""
        seen, out = set(), []
        queue = deque([self.parent.index(-1)])
        ch: List[List[int]] = [[] for _ in self.bags]
        for i, p in enumerate(self.parent):
            if 0 <= p < len(self.bags):
                ch[p].append(i)
        while queue:
            v = queue.popleft()
            if v in seen:
                break
            seen.add(v)
            out.append(v)
            queue.extend(ch[v])
        return tuple(out)

    @cached_property
    def depth(self) -> Tuple[int, ...]:
        d = [0] * len(self.bags)
        for v in self.order:
            if self.parent[v] >= 0:
                d[v] = d[self.parent[v]] + 1
        return tuple(d)

    @property
    def width(self) -> int:
        return max(len(b) for b in self.bags) - 1

    def relabel(self, mapping: Dict[int, int]) -> "TreeDecomposition":
        return TreeDecomposition(tuple(frozenset(mapping[v] for v in b) for b in self.bags), self.parent)


@dataclass(frozen=True)
class TDCheck:
    ok: bool
    axiom: Optional[str] = None
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_td(g: Graph, td: TreeDecomposition) -> TDCheck:
    covered = set().union(*td.bags)
    stray = covered - set(range(g.n))
    if stray:
        return TDCheck(False, "vertices", f"bags mention non-vertices {sorted(stray)}")
    missing = set(range(g.n)) - covered
    if missing:
        return TDCheck(False, "i", f"vertices {sorted(missing)} appear in no bag")
    for u, v in g.edge_list():
        if not any(u in b and v in b for b in td.bags):
            return TDCheck(False, "ii", f"edge ({u},{v}) is not contained in any bag")
    holders: Dict[int, int] = {}
    linked: Dict[int, int] = {}
    for i, b in enumerate(td.bags):
        p = td.parent[i]
        for v in b:
            holders[v] = holders.get(v, 0) + 1
            if p >= 0 and v in td.bags[p]:
                linked[v] = linked.get(v, 0) + 1
    for v, count in holders.items():
        if count - linked.get(v, 0) != 1:
            return TDCheck(False, "iii", f"bags containing vertex {v} are disconnected")
    return TDCheck(True)


# ---------------------------------------------------------------- generators


def _rotation_from_coords(n: int, edges: Iterable[Edge], coords: Sequence[Tuple[float, float]]):
    adj: List[List[int]] = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    rot = []
    for v in range(n):
        x0, y0 = coords[v]
        rot.append(sorted(adj[v], key=lambda w: math.atan2(coords[w][1] - y0, coords[w][0] - x0)))
    return rot


def _embedded(n: int, edges: List[Edge], coords) -> Graph:
    g = Graph.from_edges(n, edges, _rotation_from_coords(n, edges, coords))
    if n == 1 or not edges:
        return Graph.from_edges(n, edges, g.rotation, tuple(range(n)))
    # the outer face is the one traced with opposite orientation to the bounded ones
    best, best_area = None, None
    for face in faces(g):
        verts = [u for u, _ in face]
        area = sum(
            coords[a][0] * coords[b][1] - coords[b][0] * coords[a][1]
            for a, b in zip(verts, verts[1:] + verts[:1])
        )
        if best_area is None or area < best_area:
            best, best_area = verts, area
    outer = list(dict.fromkeys(best))
    return Graph.from_edges(n, edges, g.rotation, outer)


def generate_grid(rows: int, cols: int) -> Graph:
    if rows < 1 or cols < 1:
        raise ValueError("dimensions must be positive")
    vid = lambda r, c: r * cols + c
    edges = [(vid(r, c), vid(r, c + 1)) for r in range(rows) for c in range(cols - 1)]
    edges += [(vid(r, c), vid(r + 1, c)) for r in range(rows - 1) for c in range(cols)]
    coords = [(c, -r) for r in range(rows) for c in range(cols)]
    return _embedded(rows * cols, edges, coords)


def generate_triangular(rows: int) -> Graph:
    """Triangle of ``rows`` rows with 1, 2, ..., rows vertices and unit triangles."""
    if rows < 1:
        raise ValueError("dimensions must be positive")
    vid = lambda j, i: j * (j + 1) // 2 + i
    edges, coords = [], []
    for j in range(rows):
        for i in range(j + 1):
            coords.append((i - j / 2, -j * math.sqrt(3) / 2))
            if i < j:
                edges.append((vid(j, i), vid(j, i + 1)))
            if j + 1 < rows:
                edges.append((vid(j, i), vid(j + 1, i)))
                edges.append((vid(j, i), vid(j + 1, i + 1)))
    return _embedded(rows * (rows + 1) // 2, edges, coords)


def generate_path(n: int) -> Graph:
    return _embedded(n, [(i, i + 1) for i in range(n - 1)], [(i, 0) for i in range(n)])


def generate_cycle(n: int) -> Graph:
    if n < 3:
        raise ValueError("cycle needs at least 3 vertices")
    coords = [(math.cos(2 * math.pi * i / n), math.sin(2 * math.pi * i / n)) for i in range(n)]
    return _embedded(n, [(i, (i + 1) % n) for i in range(n)], coords)


# ---------------------------------------------------------------- embeddings


def faces(g: Graph) -> List[List[Edge]]:
    """Faces of the rotation system as lists of darts (u, v)."""
    if g.rotation is None:
        raise EmbeddingError("graph has no rotation system")
    pos = [{w: i for i, w in enumerate(r)} for r in g.rotation]
    seen = set()
    out = []
    for u in range(g.n):
        for v in g.rotation[u]:
            if (u, v) in seen:
                continue
            face, dart = [], (u, v)
            while dart not in seen:
                seen.add(dart)
                face.append(dart)
                a, b = dart
                rb = g.rotation[b]
                dart = (b, rb[(pos[b][a] - 1) % len(rb)])
            out.append(face)
    return out


def peel_layers(g: Graph) -> List[int]:
    """Outerplanarity layer of every vertex (0 = outer face)."""
    if g.rotation is None:
        raise EmbeddingError("peel_partition needs a rotation system; use partition_heuristic")
    layer = [-1] * g.n
    for comp in g.components():
        if len(comp) == 1:
            layer[comp[0]] = 0
            continue
        sub, verts = g.induced_subgraph(comp)
        fs = faces(sub)
        if len(comp) - sub.num_edges + len(fs) != 2:
            raise EmbeddingError("rotation system is not a planar embedding (Euler check failed)")
        face_verts = [sorted({a for a, _ in f}) for f in fs]
        start = None
        if g.outer_face is not None:
            want = {i for i, v in enumerate(verts) if v in set(g.outer_face)}
            start = next((i for i, fv in enumerate(face_verts) if set(fv) == want), None)
        if start is None:
            start = max(range(len(fs)), key=lambda i: (len(fs[i]), -i))
        vert_faces: List[List[int]] = [[] for _ in comp]
        for i, fv in enumerate(face_verts):
            for v in fv:
                vert_faces[v].append(i)
        face_seen = {start}
        frontier = [start]
        depth = 0
        while frontier:
            new_verts = []
            for fi in frontier:
                for v in face_verts[fi]:
                    if layer[verts[v]] == -1:
                        layer[verts[v]] = depth
                        new_verts.append(v)
            frontier = []
            for v in new_verts:
                for fi in vert_faces[v]:
                    if fi not in face_seen:
                        face_seen.add(fi)
                        frontier.append(fi)
            depth += 1
    return layer


def peel_partition(g: Graph) -> VertexPartition:
    """A = even outer layers, B = odd outer layers; both induced halves are outerplanar."""
    layer = peel_layers(g)
    return VertexPartition.of([v for v in range(g.n) if layer[v] % 2 == 0], [v for v in range(g.n) if layer[v] % 2 == 1])


# ---------------------------------------------------------------- decompositions


def outerplanar_td(g: Graph) -> TreeDecomposition:
    """Width <= 2 decomposition by repeatedly removing a vertex of degree 1 or 2."""
    adj = [set(a) for a in g.adjacency]
    alive = set(range(g.n))
    low = {1: {v for v in alive if len(adj[v]) == 1}, 2: {v for v in alive if len(adj[v]) == 2}}
    busy = sum(1 for v in alive if adj[v])

    def set_degree(v, old):
        new = len(adj[v])
        if old in low:
            low[old].discard(v)
        if new in low:
            low[new].add(v)

    steps = []
    while busy:
        if low[1]:
            v = min(low[1])
            (u,) = adj[v]
            steps.append((v, u, None))
            nbrs = [u]
        elif low[2]:
            v = min(low[2])
            u, w = sorted(adj[v])
            steps.append((v, u, w))
            nbrs = [u, w]
        else:
            raise NotTwoDegenerate("not 2-degenerate: every remaining vertex has degree >= 3")
        d = len(adj[v])
        low[d].discard(v)
        alive.discard(v)
        busy -= 1
        for x in nbrs:
            old = len(adj[x])
            adj[x].discard(v)
            if not adj[x]:
                busy -= 1
            set_degree(x, old)
        adj[v].clear()
        if len(nbrs) == 2:
            u, w = nbrs
            if w not in adj[u]:
                for x, y in ((u, w), (w, u)):
                    old = len(adj[x])
                    if not adj[x]:
                        busy += 1
                    adj[x].add(y)
                    set_degree(x, old)

    bags: List[FrozenSet[int]] = []
    tree_edges = []
    vertex_node: Dict[int, int] = {}
    pair_node: Dict[FrozenSet[int], int] = {}

    def add_bag(bag, attach):
        idx = len(bags)
        bags.append(frozenset(bag))
        if attach is not None:
            tree_edges.append((attach, idx))
        for x in bag:
            vertex_node[x] = idx
            for y in bag:
                if x < y:
                    pair_node[frozenset((x, y))] = idx
        return idx

    prev = None
    for v in sorted(alive):
        prev = add_bag({v}, prev)
    if prev is None:
        add_bag(set(), None)
    for v, u, w in reversed(steps):
        if w is None:
            add_bag({u, v}, vertex_node[u])
        else:
            add_bag({u, v, w}, pair_node[frozenset((u, w))])
    return TreeDecomposition.from_tree_edges(bags, tree_edges)


def min_fill_td(g: Graph) -> TreeDecomposition:
    """Elimination-order decomposition using the min-fill heuristic (ties: degree, label)."""
    if g.n == 0:
        return TreeDecomposition((frozenset(),), (-1,))
    adj = [set(a) for a in g.adjacency]
    remaining = set(range(g.n))
    order, bags = [], []

    def fill(v):
        nb = list(adj[v])
        return sum(1 for i in range(len(nb)) for j in range(i + 1, len(nb)) if nb[j] not in adj[nb[i]])

    while remaining:
        v = min(remaining, key=lambda x: (fill(x), len(adj[x]), x))
        nb = set(adj[v])
        bags.append(frozenset(nb | {v}))
        order.append(v)
        for x in nb:
            adj[x] |= nb - {x}
            adj[x].discard(v)
        remaining.discard(v)
        adj[v] = set()
    pos = {v: i for i, v in enumerate(order)}
    tree_edges = []
    roots = []
    for i, v in enumerate(order):
        later = [pos[x] for x in bags[i] if x != v]
        if later:
            tree_edges.append((i, min(later)))
        else:
            roots.append(i)
    for a, b in zip(roots, roots[1:]):
        tree_edges.append((a, b))
    return normalize_td(TreeDecomposition.from_tree_edges(bags, tree_edges, root=roots[-1]), binary=False)


def partition_heuristic(g: Graph) -> Tuple[VertexPartition, TreeDecomposition, TreeDecomposition]:
    """Greedy two-colouring that minimizes same-side edges, then min-fill decompositions.

    The decompositions are over the induced subgraphs with vertices relabelled
    in sorted order (see ``Graph.induced_subgraph``).
    """
    side = [-1] * g.n
    for comp in g.components():
        queue = deque([comp[0]])
        side[comp[0]] = 0
        while queue:
            v = queue.popleft()
            for w in sorted(g.adjacency[v]):
                if side[w] == -1:
                    same = [sum(1 for x in g.adjacency[w] if side[x] == s) for s in (0, 1)]
                    side[w] = 0 if same[0] < same[1] else 1 if same[1] < same[0] else 1 - side[v]
                    queue.append(w)
    for _ in range(4 * g.n + 4):
        changed = False
        for v in range(g.n):
            same = sum(1 for x in g.adjacency[v] if side[x] == side[v])
            if 2 * same > g.degree(v):
                side[v] = 1 - side[v]
                changed = True
        if not changed:
            break
    part = VertexPartition.of([v for v in range(g.n) if side[v] == 0], [v for v in range(g.n) if side[v] == 1])
    ga, _ = g.induced_subgraph(part.A)
    gb, _ = g.induced_subgraph(part.B)
    return part, min_fill_td(ga), min_fill_td(gb)


def partition_with_tds(g: Graph) -> Tuple[VertexPartition, TreeDecomposition, TreeDecomposition, str]:
    """Peel partition with outerplanar decompositions when an embedding is usable, else the heuristic."""
    if g.rotation is not None:
        try:
            part = peel_partition(g)
            ga, _ = g.induced_subgraph(part.A)
            gb, _ = g.induced_subgraph(part.B)
            return part, outerplanar_td(ga), outerplanar_td(gb), "peel"
        except (EmbeddingError, NotTwoDegenerate):
            pass
    part, ta, tb = partition_heuristic(g)
    return part, ta, tb, "heuristic"


def normalize_td(td: TreeDecomposition, binary: bool = True) -> TreeDecomposition:
    """Contract child-in-parent edges, then split nodes with > 2 children into combs."""
    bags = list(td.bags)
    parent = list(td.parent)
    alive = [True] * len(bags)
    children: List[List[int]] = [list(c) for c in td.children]
    for v in reversed(td.order):
        p = parent[v]
        if p >= 0 and bags[v] <= bags[p]:
            alive[v] = False
            children[p].remove(v)
            for c in children[v]:
                parent[c] = p
                children[p].append(c)
            children[v] = []
    if binary:
        for v in range(len(bags)):
            if not alive[v] or len(children[v]) <= 2:
                continue
            kids = sorted(children[v])
            children[v] = [kids[0]]
            cur = v
            for i, c in enumerate(kids[1:], start=1):
                if i == len(kids) - 1:
                    children[cur].append(c)
                    parent[c] = cur
                    break
                copy = len(bags)
                bags.append(bags[v])
                parent.append(cur)
                alive.append(True)
                children.append([c])
                parent[c] = copy
                children[cur].append(copy)
                cur = copy
    root = td.root
    index: Dict[int, int] = {}
    queue = deque([root])
    while queue:
        v = queue.popleft()
        index[v] = len(index)
        queue.extend(sorted(children[v]))
    new_bags = [None] * len(index)
    new_parent = [-1] * len(index)
    for v, i in index.items():
        new_bags[i] = bags[v]
        new_parent[i] = index[parent[v]] if parent[v] >= 0 else -1
    return TreeDecomposition(tuple(new_bags), tuple(new_parent))


def contract_edge(g: Graph, p: int, q: int) -> Tuple[Graph, List[int]]:
    """Merge ``p`` into ``q``; vertices relabelled compactly.  Returns (graph, old -> new map)."""
    if not g.has_edge(p, q):
        raise ValueError(f"({p},{q}) is not an edge")
    new = [v - (v > p) for v in range(g.n)]
    new[p] = new[q]
    es = {_norm_edge(new[u], new[v]) for u, v in g.edges if new[u] != new[v]}
    rot = None
    if g.rotation is not None:
        nq = g.adjacency[q]
        rp = list(g.rotation[p])
        i = rp.index(q)
        spliced = [c for c in rp[i + 1 :] + rp[:i] if c not in nq]
        rq = []
        for w in g.rotation[q]:
            if w == p:
                rq.extend(spliced)
            else:
                rq.append(w)
        rot_old: List[List[int]] = []
        for v in range(g.n):
            if v == p:
                continue
            if v == q:
                rot_old.append(rq)
            elif p in g.adjacency[v]:
                if q in g.adjacency[v]:
                    rot_old.append([w for w in g.rotation[v] if w != p])
                else:
                    rot_old.append([q if w == p else w for w in g.rotation[v]])
            else:
                rot_old.append(list(g.rotation[v]))
        rot = [[new[w] for w in r] for r in rot_old]
    try:
        out = Graph.from_edges(g.n - 1, es, rot)
    except ValueError:
        out = Graph.from_edges(g.n - 1, es)
    return out, new
