import numpy as np
import pytest
from hypothesis import given, strategies as st

from forrelate.graph_core import (
    EmbeddingError,
    Graph,
    NotTwoDegenerate,
    TreeDecomposition,
    contract_edge,
    faces,
    generate_cycle,
    generate_grid,
    generate_path,
    generate_triangular,
    min_fill_td,
    normalize_td,
    outerplanar_td,
    partition_heuristic,
    partition_with_tds,
    peel_layers,
    peel_partition,
    validate_td,
)


def euler_ok(g):
    """Every component of the rotation system satisfies V - E + F = 2."""
    for comp in g.components():
        if len(comp) == 1:
            continue
        sub, _ = g.induced_subgraph(comp)
        if len(comp) - sub.num_edges + len(faces(sub)) != 2:
            return False
    return True


def two_degenerate(n, rng):
    edges = set()
    for v in range(1, n):
        k = int(rng.integers(0, min(2, v) + 1))
        for u in rng.choice(v, size=k, replace=False):
            edges.add((int(u), v))
    return Graph.from_edges(n, edges)


def partial_two_tree(n, rng, keep=0.8):
    """Random subgraph of a 2-tree: treewidth <= 2."""
    edges = {(0, 1)} if n > 1 else set()
    tri = [(0, 1)]
    for v in range(2, n):
        a, b = tri[int(rng.integers(len(tri)))]
        edges |= {(a, v), (b, v)}
        tri += [(a, v), (b, v)]
    return Graph.from_edges(n, [e for e in edges if rng.random() < keep])


def triangulated_polygon(n, rng):
    edges = {(i, (i + 1) % n) for i in range(n)}
    stack = [list(range(n))]
    while stack:
        poly = stack.pop()
        if len(poly) < 4:
            continue
        i = int(rng.integers(len(poly)))
        j = (i + int(rng.integers(2, len(poly) - 1))) % len(poly)
        a, b = sorted((i, j))
        edges.add((poly[a], poly[b]))
        stack.append(poly[a : b + 1])
        stack.append(poly[b:] + poly[: a + 1])
    return Graph.from_edges(n, {tuple(sorted(e)) for e in edges})


def halves(g, part):
    return g.induced_subgraph(part.A)[0], g.induced_subgraph(part.B)[0]


def test_grid_2x2():
    g = generate_grid(2, 2)
    assert (g.n, g.num_edges) == (4, 4)
    assert sorted(g.outer_face) == [0, 1, 2, 3]


def test_grid_3x3():
    g = generate_grid(3, 3)
    assert (g.n, g.num_edges) == (9, 12)
    assert len(g.outer_face) == 8 and 4 not in g.outer_face


def test_triangular_ten_vertices():
    g = generate_triangular(4)
    assert (g.n, g.num_edges) == (10, 18)
    assert euler_ok(g)


def test_generators_reject_empty():
    with pytest.raises(ValueError):
        generate_grid(0, 3)
    with pytest.raises(ValueError):
        generate_triangular(0)


def test_graph_rejects_loops_and_duplicates():
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(0, 1), (1, 0)])
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(0, 1)], rotation=[[2], [0], []])


@pytest.mark.parametrize("g", [generate_path(6), generate_cycle(7), generate_triangular(3), generate_grid(2, 5)])
def test_outerplanar_peel_has_empty_b(g):
    assert peel_partition(g).B == ()


def test_grid_3x3_peel():
    part = peel_partition(generate_grid(3, 3))
    assert len(part.A) == 8 and part.B == (4,)


def test_grid_7x7_layers_alternate():
    g = generate_grid(7, 7)
    layer = peel_layers(g)
    for r in range(7):
        for c in range(7):
            assert layer[7 * r + c] == min(r, c, 6 - r, 6 - c)
    part = peel_partition(g)
    for h in halves(g, part):
        td = outerplanar_td(h)
        assert validate_td(h, td) and td.width <= 2


def test_peel_requires_embedding():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    with pytest.raises(EmbeddingError):
        peel_partition(g)


def test_outerplanar_td_examples():
    p = generate_path(4)
    td = outerplanar_td(p)
    assert validate_td(p, td) and td.width == 1
    c = generate_cycle(5)
    td = outerplanar_td(c)
    assert validate_td(c, td) and td.width == 2
    k4 = Graph.from_edges(4, [(a, b) for a in range(4) for b in range(a + 1, 4)])
    with pytest.raises(NotTwoDegenerate):
        outerplanar_td(k4)


def test_outerplanar_td_isolated_vertices():
    g = Graph.from_edges(4, [(0, 1)])
    td = outerplanar_td(g)
    assert validate_td(g, td)
    empty = Graph.from_edges(0, [])
    assert outerplanar_td(empty).num_nodes == 1


def test_heuristic_bipartite_halves_edgeless():
    g = Graph.from_edges(6, [(a, b) for a in (0, 1, 2) for b in (3, 4, 5)])
    part, ta, tb = partition_heuristic(g)
    ga, gb = halves(g, part)
    assert ga.num_edges == 0 and gb.num_edges == 0
    assert ta.width == 0 and tb.width == 0
    assert validate_td(ga, ta) and validate_td(gb, tb)


def test_heuristic_grid_4x4():
    g = generate_grid(4, 4)
    part, ta, tb = partition_heuristic(g)
    ga, gb = halves(g, part)
    assert validate_td(ga, ta) and validate_td(gb, tb)
    assert ta.width <= 2 and tb.width <= 2


def test_heuristic_after_contractions(rng):
    g = generate_triangular(6)
    for _ in range(8):
        u, v = g.edge_list()[int(rng.integers(g.num_edges))]
        g, _ = contract_edge(g, v, u)
    g = Graph.from_edges(g.n, g.edges)
    part, ta, tb = partition_heuristic(g)
    ga, gb = halves(g, part)
    assert validate_td(ga, ta) and validate_td(gb, tb)


def test_validate_examples():
    g = generate_grid(2, 3)
    whole = TreeDecomposition((frozenset(range(6)),), (-1,))
    assert validate_td(g, whole) and whole.width == 5
    td = outerplanar_td(g)
    u, v = g.edge_list()[0]
    drop = [i for i, b in enumerate(td.bags) if u in b and v in b]
    bags = list(td.bags)
    for i in drop:
        bags[i] = bags[i] - {u}
    res = validate_td(g, TreeDecomposition(tuple(bags), td.parent))
    assert not res and res.axiom in ("i", "ii", "iii")
    path = generate_path(3)
    split = TreeDecomposition.from_tree_edges([{0, 1}, {2}, {1, 2}], [(0, 1), (1, 2)])
    res = validate_td(path, split)
    assert not res and res.axiom == "iii"
    missing_edge = TreeDecomposition.from_tree_edges([{0, 1}, {2}], [(0, 1)])
    res = validate_td(path, missing_edge)
    assert not res and res.axiom == "ii"


def test_normalize_star():
    bags = [{0, 1, 2}] + [{0, 1, 3 + i} for i in range(5)]
    td = TreeDecomposition.from_tree_edges(bags, [(0, i) for i in range(1, 6)])
    g = Graph.from_edges(8, [(0, 1), (1, 2)] + [(0, 3 + i) for i in range(5)])
    assert validate_td(g, td)
    out = normalize_td(td)
    assert validate_td(g, out)
    assert out.width == td.width
    assert all(len(c) <= 2 for c in out.children)
    assert max(out.depth) > max(td.depth)


def test_normalize_binary_unchanged_without_subsumption():
    g = generate_path(5)
    td = outerplanar_td(g)
    out = normalize_td(td)
    subsumed = sum(1 for i, p in enumerate(td.parent) if p >= 0 and td.bags[i] <= td.bags[p])
    assert out.num_nodes == td.num_nodes - subsumed


def test_normalize_outerplanar_fifty(rng):
    g = triangulated_polygon(50, rng)
    out = normalize_td(outerplanar_td(g))
    assert validate_td(g, out) and out.width == 2
    assert out.num_nodes <= 98
    assert all(len(c) <= 2 for c in out.children)


def test_contract_triangle():
    g = generate_cycle(3)
    h, m = contract_edge(g, 2, 0)
    assert h.n == 2 and h.edge_list() == [(0, 1)]
    assert m[2] == m[0]


def test_contract_grid_boundary_keeps_embedding():
    g = generate_grid(3, 3)
    h, _ = contract_edge(g, 1, 0)
    assert h.n == 8 and h.rotation is not None and euler_ok(h)
    part = peel_partition(h)
    for half in halves(h, part):
        assert validate_td(half, outerplanar_td(half))


def test_contract_missing_edge():
    with pytest.raises(ValueError):
        contract_edge(generate_grid(3, 3), 0, 4)


def test_partition_with_tds_falls_back():
    g = Graph.from_edges(5, [(a, b) for a in range(5) for b in range(a + 1, 5)])
    part, ta, tb, how = partition_with_tds(g)
    assert how == "heuristic" and part.covers(5)


@given(st.integers(1, 40), st.integers(0, 2**32))
def test_outerplanar_td_on_two_degenerate_is_valid_or_stuck(n, seed):
    # 2-degenerate graphs may still have treewidth 3 (subdivided K4), where elimination with fill stalls
    g = two_degenerate(n, np.random.default_rng(seed))
    try:
        td = outerplanar_td(g)
    except NotTwoDegenerate:
        assert min_fill_td(g).width >= 3
        return
    assert validate_td(g, td) and td.width <= 2


def test_two_degenerate_treewidth_three_is_rejected():
    g = two_degenerate(10, np.random.default_rng(1))
    assert min(g.degree(v) for v in range(g.n)) <= 2
    with pytest.raises(NotTwoDegenerate):
        outerplanar_td(g)


@given(st.integers(1, 40), st.integers(0, 2**32))
def test_outerplanar_td_valid_on_treewidth_two(n, seed):
    g = partial_two_tree(n, np.random.default_rng(seed))
    td = outerplanar_td(g)
    assert validate_td(g, td) and td.width <= 2
    out = normalize_td(td)
    assert validate_td(g, out) and out.width == td.width
    assert out.num_nodes <= max(1, 2 * g.n - 2)


@given(st.integers(1, 12), st.integers(1, 12))
def test_peel_halves_of_grids_are_outerplanar(r, c):
    g = generate_grid(r, c)
    part = peel_partition(g)
    for h in halves(g, part):
        assert validate_td(h, outerplanar_td(h))


@given(st.integers(1, 9))
def test_peel_halves_of_triangular(rows):
    g = generate_triangular(rows)
    part = peel_partition(g)
    for h in halves(g, part):
        td = outerplanar_td(h)
        assert validate_td(h, td) and td.width <= 2


@given(st.integers(0, 2**32), st.integers(1, 12))
def test_contractions_decrement_and_keep_planarity(seed, steps):
    r = np.random.default_rng(seed)
    g = generate_grid(4, 5)
    for _ in range(steps):
        if g.num_edges == 0:
            break
        u, v = g.edge_list()[int(r.integers(g.num_edges))]
        if r.random() < 0.5:
            u, v = v, u
        n0 = g.n
        g, m = contract_edge(g, u, v)
        assert g.n == n0 - 1 and len(m) == n0
        assert g.rotation is None or euler_ok(g)
    part, ta, tb, _ = partition_with_tds(g)
    ga, gb = halves(g, part)
    assert validate_td(ga, ta) and validate_td(gb, tb)


@given(st.integers(1, 30), st.integers(0, 2**32))
def test_min_fill_valid(n, seed):
    r = np.random.default_rng(seed)
    edges = {(a, b) for a in range(n) for b in range(a + 1, n) if r.random() < 0.2}
    g = Graph.from_edges(n, edges)
    assert validate_td(g, min_fill_td(g))
