import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from forrelate.graph_core import Graph, TreeDecomposition, generate_grid, min_fill_td, normalize_td
from forrelate.graph_forrelation import GraphForrelationInstance, amplitude
from forrelate.tn_sampler import (
    DiagonalGate,
    MergeTensor,
    NoValidOutput,
    QuditSystem,
    TNSampler,
    amplitude_pure,
    brute_force_distribution,
    build_network,
    connectivity_graph,
    contract_network_dense,
    merge_apply,
    remove_easy,
    sample,
)
from forrelate.two_local import TwoLocalFunction

A, B, C, D, E, F, G, H = range(8)
EXAMPLE_SUPPORTS = [
    (A, B), (A, C), (B,), (B, C), (B, E), (B, F), (B, G), (B, H), (C, D, E), (D, E), (E, G, H), (F, G),
]
# bce at the root; abc, cde and beg hang off it, bfg hangs off beg
EXAMPLE_TD = TreeDecomposition(
    (frozenset({B, C, E}), frozenset({A, B, C}), frozenset({C, D, E}), frozenset({B, E, G}), frozenset({B, F, G})),
    (-1, 0, 0, 0, 3),
)


def chi2_critical(dof, z=3.09):
    return dof * (1 - 2 / (9 * dof) + z * math.sqrt(2 / (9 * dof))) ** 3


def chi2_stat(counts, p, min_expected=5.0):
    """Pearson statistic with low-expectation bins pooled into one; returns (stat, dof)."""
    N = counts.sum()
    exp = p * N
    big = exp >= min_expected
    obs = list(counts[big]) + [counts[~big].sum()]
    ex = list(exp[big]) + [exp[~big].sum()]
    obs, ex = np.array(obs, float), np.array(ex, float)
    keep = ex > 0
    assert obs[~keep].sum() == 0
    return float(((obs[keep] - ex[keep]) ** 2 / ex[keep]).sum()), int(keep.sum()) - 1


def outcome_index(xs, d):
    xs = np.atleast_2d(xs)
    return np.ravel_multi_index(tuple(xs.T), (d,) * xs.shape[1])


def random_density(d, rng, pure=False):
    if pure:
        v = rng.normal(size=d) + 1j * rng.normal(size=d)
        v /= np.linalg.norm(v)
        return np.outer(v, v.conj())
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


def random_gates(n, d, rng, count, max_size=3, unitary=False):
    gates = []
    for _ in range(count):
        k = int(rng.integers(1, min(max_size, n) + 1))
        support = rng.choice(n, size=k, replace=False)
        if unitary:
            diag = np.exp(2j * np.pi * rng.random((d,) * k))
        else:
            diag = rng.normal(size=(d,) * k) + 1j * rng.normal(size=(d,) * k)
        gates.append(DiagonalGate.make(support, diag))
    return gates


def random_system(n, d, rng, gates=None, unitary=False):
    chis = np.stack([random_density(d, rng) for _ in range(n)])
    ops = rng.normal(size=(n, d, d)) + 1j * rng.normal(size=(n, d, d))
    if gates is None:
        gates = random_gates(n, d, rng, count=int(rng.integers(0, 2 * n + 1)), unitary=unitary)
    return QuditSystem(n, d, chis, gates, ops)


def dense_oracle(sys):
    """vec(O U chi U^dag O^dag) from full d^n x d^n matrices, qudit 0 most significant, (ket, bra) interleaved."""
    n, d = sys.n, sys.d
    dim = d**n
    rho = np.ones((1, 1), dtype=complex)
    op = np.ones((1, 1), dtype=complex)
    for i in range(n):
        rho = np.kron(rho, sys.chis[i])
        op = np.kron(op, sys.ops[i])
    u = np.ones(dim, dtype=complex)
    for idx in range(dim):
        x = np.unravel_index(idx, (d,) * n)
        for gt in sys.gates:
            u[idx] *= gt.diag[tuple(x[s] for s in gt.support)]
    full = op @ (u[:, None] * rho * u.conj()[None, :]) @ op.conj().T
    order = [a for i in range(n) for a in (i, n + i)]
    return full.reshape((d,) * (2 * n)).transpose(order).reshape(-1)


def dense_distribution(sys):
    n, d = sys.n, sys.d
    vec = dense_oracle(sys).reshape((d * d,) * n)
    diag = np.arange(d) * (d + 1)
    p = vec[np.ix_(*([diag] * n))].real.reshape(-1)
    return p / p.sum()


def td_for(sys):
    return min_fill_td(connectivity_graph(sys))


# ---------------------------------------------------------------- building the network


def test_no_gates_identity_ops_contract_to_product_state(rng):
    n, d = 4, 3
    chis = np.stack([random_density(d, rng) for _ in range(n)])
    sys = QuditSystem(n, d, chis, [], np.stack([np.eye(d)] * n))
    vec = contract_network_dense(build_network(sys, td_for(sys)))
    want = np.ones(1, dtype=complex)
    for chi in chis:
        want = np.kron(want, chi.reshape(-1))
    assert np.allclose(vec, want, atol=1e-12)


@pytest.mark.parametrize("d,n", [(2, 2), (2, 5), (2, 8), (3, 3), (3, 5)])
def test_network_invariant_matches_dense_oracle(d, n, rng):
    for _ in range(4):
        sys = random_system(n, d, rng)
        want = dense_oracle(sys)
        scale = np.abs(want).max()
        td = td_for(sys)
        for variant in (td, normalize_td(td)):
            got = contract_network_dense(build_network(sys, variant))
            assert np.max(np.abs(got - want)) <= 1e-9 * scale


def random_unitary(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def example_system(rng, d=2, unitary=True, h_identity=True):
    gates = []
    for s in EXAMPLE_SUPPORTS:
        shape = (d,) * len(s)
        diag = np.exp(2j * np.pi * rng.random(shape)) if unitary else rng.random(shape) + 0.1
        gates.append(DiagonalGate.make(s, diag))
    chis = np.stack([random_density(d, rng) for _ in range(8)])
    if unitary:
        ops = np.stack([random_unitary(d, rng) for _ in range(8)])
    else:
        ops = rng.normal(size=(8, d, d)) + 1j * rng.normal(size=(8, d, d))
    if h_identity:
        ops[H] = np.eye(d)
    return QuditSystem(8, d, chis, gates, ops)


def test_worked_example_connectivity_and_gate_ownership(rng):
    outcomes, reduced, keep = remove_easy(example_system(rng), rng)
    assert list(outcomes) == [H] and keep == list(range(7))
    edges = {(A, B), (A, C), (B, C), (C, D), (C, E), (D, E), (B, E), (B, F), (B, G), (E, G), (F, G)}
    assert connectivity_graph(reduced).edges == frozenset(edges)
    net = build_network(reduced, EXAMPLE_TD)
    owned = [sorted(reduced.gates[j].support for j in node.gates) for node in net.nodes]
    assert owned[0] == [(B,), (B,), (B, C), (B, E)]  # {b} and the restricted {b,h}
    assert owned[1] == [(A, B), (A, C)]
    assert owned[2] == [(C, D, E), (D, E)]
    assert owned[3] == [(B, G), (E, G)]  # {e,g,h} restricted to {e,g}
    assert owned[4] == [(B, F), (F, G)]
    assert wires_per_qudit(net) == [1] * 7
    assert sorted(b for node in net.nodes for b in node.measured) == list(range(7))


def test_worked_example_network_invariant(rng):
    _, reduced, _ = remove_easy(example_system(rng), rng)
    want = dense_oracle(reduced)
    got = contract_network_dense(build_network(reduced, EXAMPLE_TD))
    assert np.max(np.abs(got - want)) <= 1e-9 * np.abs(want).max()


def wires_per_qudit(net):
    """Introductions minus merges per qudit: the number of wires reaching the root side of the network."""
    count = [0] * net.sys.n
    for node in net.nodes:
        for b in node.intro:
            count[b] += 1
        for b, k in node.merge_counts.items():
            count[b] -= k - 1
    return count


def test_every_gate_owned_once_and_one_wire_per_qudit(rng):
    for _ in range(10):
        sys = random_system(int(rng.integers(2, 9)), 2, rng)
        net = build_network(sys, td_for(sys))
        owners = sorted(j for node in net.nodes for j in node.gates)
        assert owners == list(range(len(sys.gates)))
        assert wires_per_qudit(net) == [1] * sys.n
        assert sorted(b for node in net.nodes for b in node.measured) == list(range(sys.n))


def test_uncovered_gate_support_is_rejected(rng):
    sys = random_system(3, 2, rng, gates=[DiagonalGate.make((0, 2), np.ones((2, 2)))])
    path_td = TreeDecomposition((frozenset({0, 1}), frozenset({1, 2})), (-1, 0))
    with pytest.raises(ValueError):
        build_network(sys, path_td)


def test_system_validation():
    with pytest.raises(ValueError):
        QuditSystem(1, 2, [np.diag([0.7, 0.7])], [], [np.eye(2)])
    with pytest.raises(ValueError):
        QuditSystem(1, 2, [np.diag([1.5, -0.5])], [], [np.eye(2)])
    with pytest.raises(ValueError):
        QuditSystem(2, 2, [np.eye(2) / 2] * 2, [DiagonalGate.make((0, 5), np.ones((2, 2)))], [np.eye(2)] * 2)


def test_diagonal_gate_sorts_support():
    diag = np.arange(6.0).reshape(2, 3)
    gt = DiagonalGate.make((4, 1), diag)
    assert gt.support == (1, 4)
    assert gt.diag.shape == (3, 2)
    assert gt.diag[2, 1] == diag[1, 2]


# ---------------------------------------------------------------- merge tensors

vectors = st.lists(
    st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False), min_size=4, max_size=9
)


@given(vectors)
def test_merge_of_state_with_itself_is_the_state(vals):
    vec = np.array(vals)
    m = MergeTensor.for_state(0, vec)
    out = merge_apply(m, vec, vec)
    assert np.allclose(out[m.mask], vec[m.mask])
    assert np.all(out[~m.mask] == 0)
    assert np.all(m.coeffs[m.mask] != 0)


@given(vectors, st.integers(0, 2**32 - 1))
def test_diagonal_commutes_through_merge(vals, seed):
    r = np.random.default_rng(seed)
    vec = np.array(vals)
    m = MergeTensor.for_state(0, vec)
    u, v = r.normal(size=(2, vec.size)) + 1j * r.normal(size=(2, vec.size))
    diag = r.normal(size=vec.size) + 1j * r.normal(size=vec.size)
    assert np.allclose(merge_apply(m, u, diag * v), diag * merge_apply(m, u, v))
    assert np.allclose(merge_apply(m, diag * u, v), diag * merge_apply(m, u, v))


# ---------------------------------------------------------------- sampling


def test_no_gates_samples_each_qudit_independently(rng):
    n, d, N = 4, 2, 100_000
    probs = rng.dirichlet(np.ones(d), size=n)
    sys = QuditSystem(n, d, np.stack([np.diag(p) for p in probs]), [], np.stack([np.eye(d)] * n))
    xs = sample(sys, td_for(sys), rng, N)
    for q in range(n):
        stat, dof = chi2_stat(np.bincount(xs[:, q], minlength=d), probs[q])
        assert stat < chi2_critical(dof)
    joint = probs[0]
    for q in range(1, n):
        joint = np.outer(joint, probs[q]).reshape(-1)
    stat, dof = chi2_stat(np.bincount(outcome_index(xs, d), minlength=d**n), joint)
    assert stat < chi2_critical(dof)


def test_zero_operator_reports_no_valid_output(rng):
    sys = random_system(4, 2, rng)
    sys.ops[2] = 0
    with pytest.raises(NoValidOutput):
        sample(sys, td_for(sys), rng, 10)
    with pytest.raises(NoValidOutput):
        brute_force_distribution(sys)


def test_brute_force_distribution_matches_independent_oracle(rng):
    for d, n in ((2, 5), (3, 3)):
        sys = random_system(n, d, rng)
        assert np.allclose(brute_force_distribution(sys), dense_distribution(sys), atol=1e-12)


@pytest.mark.parametrize("d,n", [(2, 5), (2, 6), (3, 3), (3, 4)])
def test_sampler_total_variation_against_brute_force(d, n, rng):
    N = 100_000
    sys = random_system(n, d, rng)
    p = dense_distribution(sys)
    xs = sample(sys, td_for(sys), rng, N)
    emp = np.bincount(outcome_index(xs, d), minlength=d**n) / N
    assert 0.5 * np.abs(emp - p).sum() < 0.02
    stat, dof = chi2_stat(emp * N, p)
    assert stat < chi2_critical(dof)


def test_worked_example_sampler_matches_brute_force(rng):
    N = 100_000
    sys = example_system(rng, unitary=False, h_identity=False)
    p = dense_distribution(sys)
    xs = sample(sys, td_for(sys), rng, N)
    stat, dof = chi2_stat(np.bincount(outcome_index(xs, 2), minlength=256), p)
    assert stat < chi2_critical(dof)


def test_worked_example_with_easy_removal_matches_brute_force(rng):
    N = 100_000
    sys = example_system(rng, unitary=True, h_identity=True)
    p = dense_distribution(sys)
    xs = sample(sys, EXAMPLE_TD, rng, N, easy=True)
    stat, dof = chi2_stat(np.bincount(outcome_index(xs, 2), minlength=256), p)
    assert stat < chi2_critical(dof)


def test_single_draw_shape_and_chunking(rng):
    sys = random_system(5, 2, rng)
    td = td_for(sys)
    assert sample(sys, td, rng).shape == (5,)
    a = TNSampler(sys, td).sample(np.random.default_rng(3), 500, chunk=7)
    b = TNSampler(sys, td).sample(np.random.default_rng(3), 500, chunk=7)
    assert np.array_equal(a, b)
    p = dense_distribution(sys)
    assert np.all(p[outcome_index(a, 2)] > 0)


def permuted_td(td, perm):
    """Same tree with node i stored at position perm[i]; changes the child visiting order."""
    bags = [None] * td.num_nodes
    parent = [None] * td.num_nodes
    for i in range(td.num_nodes):
        bags[perm[i]] = td.bags[i]
        parent[perm[i]] = perm[td.parent[i]] if td.parent[i] >= 0 else -1
    return TreeDecomposition(tuple(bags), tuple(parent))


def test_child_order_does_not_change_the_distribution(rng):
    _, sys, _ = remove_easy(example_system(rng), rng)
    # rooted at beg, which has the two children bce and bfg
    base = TreeDecomposition.from_tree_edges(EXAMPLE_TD.bags, [(0, 1), (0, 2), (0, 3), (3, 4)], root=3)
    swapped = permuted_td(base, [4, 1, 2, 0, 3])
    kids = []
    for t in (base, swapped):
        t = normalize_td(t)
        kids.append([t.bags[c] for c in t.children[t.root]])
    assert len(kids[0]) == 2 and kids[0] == kids[1][::-1]
    p = dense_distribution(sys)
    N = 60_000
    counts = []
    for td in (base, swapped):
        xs = sample(sys, td, rng, N)
        counts.append(np.bincount(outcome_index(xs, 2), minlength=128))
        stat, dof = chi2_stat(counts[-1], p)
        assert stat < chi2_critical(dof)
    a, b = counts
    keep = (a + b) > 0
    two = ((a[keep] - b[keep]) ** 2 / (a[keep] + b[keep])).sum()
    assert two < chi2_critical(int(keep.sum()) - 1)


# ---------------------------------------------------------------- easy qudits


def test_remove_easy_leaves_hard_system_unchanged(rng):
    sys = random_system(4, 2, rng)
    outcomes, reduced, keep = remove_easy(sys, rng)
    assert outcomes == {} and reduced is sys and keep == [0, 1, 2, 3]


def test_all_easy_samples_diagonal_product(rng):
    n, d, N = 3, 3, 60_000
    sys = random_system(n, d, rng, unitary=True)
    sys.ops[:] = np.eye(d)
    outcomes, reduced, keep = remove_easy(sys, rng)
    assert sorted(outcomes) == [0, 1, 2] and reduced.n == 0 and keep == []
    diag = [np.diagonal(c).real for c in sys.chis]
    joint = np.einsum("i,j,k->ijk", *diag).reshape(-1)
    xs = sample(sys, td_for(sys), rng, N, easy=True)
    stat, dof = chi2_stat(np.bincount(outcome_index(xs, d), minlength=d**n), joint)
    assert stat < chi2_critical(dof)


def test_half_easy_joint_distribution_matches_brute_force(rng):
    n, d, N = 6, 2, 100_000
    sys = random_system(n, d, rng, gates=random_gates(n, d, rng, 10, unitary=True))
    sys.ops[:] = [random_unitary(d, rng) for _ in range(n)]
    sys.ops[[0, 2, 4]] = np.eye(d)
    p = dense_distribution(sys)
    xs = sample(sys, td_for(sys), rng, N, easy=True)
    emp = np.bincount(outcome_index(xs, d), minlength=d**n)
    stat, dof = chi2_stat(emp, p)
    assert stat < chi2_critical(dof)
    assert 0.5 * np.abs(emp / N - p).sum() < 0.02


def test_easy_removal_rejects_non_unitary_operators(rng):
    sys = random_system(4, 2, rng, gates=random_gates(4, 2, rng, 5, unitary=True))
    sys.ops[0] = np.eye(2)
    with pytest.raises(ValueError):
        remove_easy(sys, rng)
    with pytest.raises(ValueError):
        sample(sys, td_for(sys), rng, 10, easy=True)


def test_remove_easy_restricts_gates(rng):
    sys = random_system(3, 2, rng, gates=[DiagonalGate.make((0, 1, 2), np.exp(1j * rng.random((2, 2, 2))))])
    sys.ops[:] = [random_unitary(2, rng) for _ in range(3)]
    sys.ops[1] = np.eye(2)
    outcomes, reduced, keep = remove_easy(sys, rng)
    assert keep == [0, 2]
    (gt,) = reduced.gates
    assert gt.support == (0, 1)
    assert np.allclose(gt.diag, sys.gates[0].diag[:, outcomes[1], :])


# ---------------------------------------------------------------- amplitudes


def random_pure_system(n, d, rng, gates):
    states = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    ops = rng.normal(size=(n, d, d)) + 1j * rng.normal(size=(n, d, d))
    return QuditSystem.from_pure(states, gates, ops)


def dense_pure_vector(sys):
    n, d = sys.n, sys.d
    psi = np.ones(1, dtype=complex)
    op = np.ones((1, 1), dtype=complex)
    for i in range(n):
        psi = np.kron(psi, sys.pure_states[i])
        op = np.kron(op, sys.ops[i])
    for idx in range(d**n):
        x = np.unravel_index(idx, (d,) * n)
        for gt in sys.gates:
            psi[idx] *= gt.diag[tuple(x[s] for s in gt.support)]
    return op @ psi


def test_amplitude_without_gates_is_product(rng):
    n, d = 4, 3
    states = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    sys = QuditSystem.from_pure(states, [], np.stack([np.eye(d)] * n))
    xs = rng.integers(0, d, size=(20, n))
    got = amplitude_pure(sys, td_for(sys), xs)
    want = np.prod(sys.pure_states[np.arange(n), xs], axis=1)
    assert np.allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("d,n", [(2, 6), (3, 4)])
def test_amplitude_matches_dense_vector(d, n, rng):
    sys = random_pure_system(n, d, rng, random_gates(n, d, rng, 8))
    psi = dense_pure_vector(sys)
    xs = np.array(np.unravel_index(np.arange(d**n), (d,) * n)).T
    got = amplitude_pure(sys, td_for(sys), xs)
    assert np.allclose(got, psi, atol=1e-9 * np.abs(psi).max())
    assert np.isclose(amplitude_pure(sys, td_for(sys), xs[5]), psi[5])


def test_amplitude_from_density_matrices_needs_pure_states(rng):
    sys = random_system(3, 2, rng)
    with pytest.raises(ValueError):
        amplitude_pure(sys, td_for(sys), [0, 0, 0])


def test_amplitude_agrees_with_graph_forrelation(rng):
    g = generate_grid(2, 3)
    et = {e: np.exp(2j * np.pi * rng.random((2, 2))) for e in g.edge_list()}
    vt = {u: np.exp(2j * np.pi * rng.random(2)) for u in range(g.n)}
    f = TwoLocalFunction(g, et, vt)
    ops = []
    for _ in range(g.n):
        m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        ops.append(m / np.linalg.norm(m, 2))
    inst = GraphForrelationInstance(g, f, f, np.array(ops))
    side = set(inst.partition.A)
    full_ops = np.array([ops[v] if v in side else np.eye(2) for v in range(g.n)])
    gates = [DiagonalGate.make(e, t) for e, t in et.items()] + [DiagonalGate.make((u,), t) for u, t in vt.items()]
    sys = QuditSystem.from_pure(np.full((g.n, 2), 1.0), gates, full_ops)
    xs = np.array(np.unravel_index(np.arange(2**g.n), (2,) * g.n)).T
    got = amplitude_pure(sys, td_for(sys), xs)
    want = np.array([amplitude(inst, "alpha", x) for x in xs])
    assert np.allclose(got, want, atol=1e-9)


# ---------------------------------------------------------------- cost


def path_system(n, rng):
    gates = [DiagonalGate.make((i, i + 1), rng.random((2, 2)) + 0.1) for i in range(n - 1)]
    chis = np.stack([random_density(2, rng) for _ in range(n)])
    ops = rng.normal(size=(n, 2, 2)) + 1j * rng.normal(size=(n, 2, 2))
    return QuditSystem(n, 2, chis, gates, ops)


def test_runtime_grows_linearly_in_n_at_fixed_width(rng):
    def best_time(n):
        sys = path_system(n, rng)
        td = td_for(sys)
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            TNSampler(sys, td).sample(rng, 200)
            times.append(time.perf_counter() - t0)
        return min(times)

    small, large = best_time(40), best_time(160)
    assert large / small < 2 * 4
