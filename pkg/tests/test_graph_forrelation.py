import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from forrelate.graph_core import Graph, VertexPartition, generate_grid, generate_triangular, min_fill_td
from forrelate.graph_forrelation import (
    HADAMARD,
    S_GATE,
    GraphForrelationInstance,
    amplitude,
    amplitudes,
    iqp_instance,
    iqp_to_forrelation,
    marginal_probability,
    phi_graph_estimate,
    phi_graph_exact,
    sample_alpha_linear,
    sample_alpha_marginals,
    unitary_split,
)
from forrelate.two_local import TwoLocalFunction

EYE = np.eye(2, dtype=complex)


def kron_all(mats):
    """Tensor product with qubit 0 as the least significant index."""
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(m, out)
    return out


def random_unitary(rng):
    q, r = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def phase_function(g, rng):
    et = {e: np.exp(2j * np.pi * rng.random((2, 2))) for e in g.edge_list()}
    vt = {u: np.exp(2j * np.pi * rng.random(2)) for u in range(g.n)}
    return TwoLocalFunction(g, et, vt)


def dense_values(fn):
    n = fn.n
    out = np.full(2**n, complex(fn.scalar))
    for idx in range(2**n):
        x = [(idx >> j) & 1 for j in range(n)]
        for (u, v), t in fn.edge_terms.items():
            out[idx] *= t[x[u], x[v]]
        for u, t in fn.vertex_terms.items():
            out[idx] *= t[x[u]]
    return out


def chain_phi(inst):
    n = inst.n
    h = kron_all([HADAMARD] * n)
    zero = np.zeros(2**n)
    zero[0] = 1
    return zero @ h @ np.diag(dense_values(inst.g)) @ kron_all(inst.ops) @ np.diag(dense_values(inst.f)) @ h @ zero


def chain_alpha(inst):
    n = inst.n
    ops = [inst.ops[v] if v in inst.partition.A else EYE for v in range(n)]
    plus = np.full(2**n, 2 ** (-n / 2))
    return kron_all(ops) @ (dense_values(inst.f) * plus)


def chain_beta(inst):
    n = inst.n
    ops = [inst.ops[v].conj().T if v in inst.partition.B else EYE for v in range(n)]
    plus = np.full(2**n, 2 ** (-n / 2))
    return kron_all(ops) @ (dense_values(inst.g).conj() * plus)


def random_instance(g, rng, unitary=True):
    ops = []
    for _ in range(g.n):
        u = random_unitary(rng)
        if not unitary and rng.random() < 0.5:
            u = u @ np.diag([1.0, rng.random()])
        ops.append(u)
    return GraphForrelationInstance(g, phase_function(g, rng), phase_function(g, rng), np.array(ops))


def chi2_critical(dof, z=3.09):
    """Wilson-Hilferty approximation to the upper chi-square quantile (z=3.09 is p=0.001)."""
    return dof * (1 - 2 / (9 * dof) + z * math.sqrt(2 / (9 * dof))) ** 3


def bits_to_index(rows):
    return (np.asarray(rows) << np.arange(np.asarray(rows).shape[1])).sum(axis=1)


def test_exact_identity_and_hadamard():
    g = generate_grid(2, 3)
    one = TwoLocalFunction(g)
    inst = GraphForrelationInstance(g, one, one, np.broadcast_to(EYE, (6, 2, 2)))
    assert phi_graph_exact(inst) == pytest.approx(1)
    inst = GraphForrelationInstance(g, one, one, np.broadcast_to(HADAMARD, (6, 2, 2)))
    assert phi_graph_exact(inst) == pytest.approx(2**-3)


def test_exact_matches_matrix_chain(rng):
    inst = random_instance(generate_grid(2, 4), rng, unitary=False)
    assert phi_graph_exact(inst) == pytest.approx(chain_phi(inst), abs=1e-12)


def test_rejects_large_operator():
    g = generate_grid(1, 2)
    one = TwoLocalFunction(g)
    with pytest.raises(ValueError):
        GraphForrelationInstance(g, one, one, np.array([EYE, 1.5 * EYE]))


def test_amplitude_plus_state(rng):
    g = generate_grid(3, 3)
    one = TwoLocalFunction(g)
    inst = GraphForrelationInstance(g, one, one, np.broadcast_to(EYE, (9, 2, 2)))
    for x in rng.integers(0, 512, size=5):
        assert amplitude(inst, "alpha", int(x)) == pytest.approx(2**-4.5)


def test_amplitude_bipartite_one_local_sum(rng):
    g = generate_grid(3, 3)
    colour = [(v // 3 + v % 3) % 2 for v in range(9)]
    A = [v for v in range(9) if colour[v] == 0]
    B = [v for v in range(9) if colour[v] == 1]
    part = VertexPartition.of(A, B)
    tdA = min_fill_td(g.induced_subgraph(A)[0])
    tdB = min_fill_td(g.induced_subgraph(B)[0])
    f = phase_function(g, rng)
    ops = np.array([random_unitary(rng) for _ in range(9)])
    inst = GraphForrelationInstance(g, f, phase_function(g, rng), ops, part, tdA, tdB)
    x = rng.integers(0, 2, size=9)
    # every edge crosses, so the sum over y_A factorises per A vertex
    total = 2 ** (-4.5)
    for b in B:
        total *= f.vertex_terms[b][x[b]]
    for a in A:
        s = 0
        for y in (0, 1):
            term = ops[a][x[a], y] * f.vertex_terms[a][y]
            for (u, v), t in f.edge_terms.items():
                if u == a:
                    term *= t[y, x[v]]
                elif v == a:
                    term *= t[x[u], y]
            s += term
        total *= s
    assert amplitude(inst, "alpha", x) == pytest.approx(total, abs=1e-12)


def test_amplitudes_match_dense_states(rng):
    inst = random_instance(generate_triangular(4), rng, unitary=False)
    xs = (np.arange(1024)[:, None] >> np.arange(10)) & 1
    assert np.allclose(amplitudes(inst, "alpha", xs), chain_alpha(inst), atol=1e-9)
    assert np.allclose(amplitudes(inst, "beta", xs), chain_beta(inst), atol=1e-9)


def test_b_prefix_marginals_and_a_marginals(rng):
    inst = random_instance(generate_grid(3, 3), rng)
    p = np.abs(chain_alpha(inst)) ** 2
    order = list(inst.partition.B) + list(inst.partition.A)
    xs = (np.arange(512)[:, None] >> np.arange(9)) & 1
    for ell in range(1, 10):
        for _ in range(3):
            prefix = list(rng.integers(0, 2, size=ell))
            mask = np.all(xs[:, order[:ell]] == prefix, axis=1)
            dense = p[mask].sum()
            got = marginal_probability(inst, prefix)
            assert got == pytest.approx(dense, abs=1e-12)
            if ell <= len(inst.partition.B):
                assert got == 2.0**-ell


def test_uniform_when_f_trivial_and_ops_diagonal(rng):
    g = generate_grid(2, 3)
    one = TwoLocalFunction(g)
    ops = np.array([np.diag(np.exp(1j * rng.random(2))) for _ in range(6)])
    inst = GraphForrelationInstance(g, one, one, ops)
    N = 100_000
    for sampler in (sample_alpha_marginals, sample_alpha_linear):
        counts = np.bincount(bits_to_index(sampler(inst, rng, N)), minlength=64)
        chi2 = ((counts - N / 64) ** 2 / (N / 64)).sum()
        assert chi2 < chi2_critical(63)


def test_samplers_match_exact_distribution_n6(rng):
    inst = random_instance(generate_grid(2, 3), rng)
    p = np.abs(chain_alpha(inst)) ** 2
    N = 100_000
    for sampler in (sample_alpha_marginals, sample_alpha_linear):
        emp = np.bincount(bits_to_index(sampler(inst, rng, N)), minlength=64) / N
        assert 0.5 * np.abs(emp - p).sum() < 0.02


def test_samplers_chi_square_n8(rng):
    inst = random_instance(generate_grid(2, 4), rng)
    p = np.abs(chain_alpha(inst)) ** 2
    N = 100_000
    counts = []
    for sampler in (sample_alpha_marginals, sample_alpha_linear):
        c = np.bincount(bits_to_index(sampler(inst, rng, N)), minlength=256)
        counts.append(c)
        keep = p * N >= 5
        chi2 = ((c[keep] - N * p[keep]) ** 2 / (N * p[keep])).sum()
        assert chi2 < chi2_critical(int(keep.sum()) - 1)
    a, b = counts
    keep = (a + b) > 0
    two_sample = ((a[keep] - b[keep]) ** 2 / (a[keep] + b[keep])).sum()
    assert two_sample < chi2_critical(int(keep.sum()) - 1)


def test_marginal_sampler_needs_unitary(rng):
    inst = random_instance(generate_grid(2, 2), rng)
    inst = inst.with_ops(0.5 * inst.ops)
    with pytest.raises(ValueError):
        sample_alpha_marginals(inst, rng, 10)


def test_full_sum_identity(rng):
    for g in (generate_grid(3, 3), generate_triangular(4), generate_grid(3, 4)):
        inst = random_instance(g, rng, unitary=False)
        xs = (np.arange(2**g.n)[:, None] >> np.arange(g.n)) & 1
        ip = np.vdot(amplitudes(inst, "beta", xs), amplitudes(inst, "alpha", xs))
        assert ip == pytest.approx(phi_graph_exact(inst), abs=1e-9)


def test_estimate_unitary_grid_within_epsilon():
    r = np.random.default_rng(8)
    inst = random_instance(generate_grid(2, 4), r)
    exact = phi_graph_exact(inst)
    eps = 0.2
    cache = {}
    errs = [abs(phi_graph_estimate(inst, eps, r, cache=cache).value - exact) for _ in range(200)]
    assert np.mean(np.array(errs) > eps) <= 0.01


def test_estimate_half_identity_operator(rng):
    g = generate_grid(2, 3)
    inst = random_instance(g, rng)
    ops = inst.ops.copy()
    ops[2] = 0.5 * EYE
    inst = inst.with_ops(ops)
    est = phi_graph_estimate(inst, 0.05, rng)
    assert est.omega == pytest.approx(0.5)
    assert abs(est.value - phi_graph_exact(inst)) <= 0.05


def test_estimate_zero_operator_annihilates(rng):
    inst = random_instance(generate_grid(2, 2), rng)
    ops = inst.ops.copy()
    ops[0] = 0
    est = phi_graph_estimate(inst.with_ops(ops), 0.1, rng)
    assert est.annihilated and est.value == 0


def test_estimate_variance_bound(rng):
    inst = random_instance(generate_triangular(4), rng, unitary=False)
    est = phi_graph_estimate(inst, 0.02, rng)
    assert est.r_variance <= 1 + 3 * est.r_second_moment_stderr
    assert abs(est.value - phi_graph_exact(inst)) <= 0.02


def test_estimate_samplers_interchangeable(rng):
    inst = random_instance(generate_grid(2, 3), rng, unitary=False)
    exact = phi_graph_exact(inst)
    for sampler in ("marginal", "linear"):
        est = phi_graph_estimate(inst, 0.05, rng, sampler=sampler)
        assert abs(est.value - exact) <= 0.05


def test_estimate_rejects_bad_arguments(rng):
    inst = random_instance(generate_grid(2, 2), rng)
    with pytest.raises(ValueError):
        phi_graph_estimate(inst, 0.0, rng)
    with pytest.raises(ValueError):
        phi_graph_estimate(inst, 0.1, rng, sampler="other")


def test_unitary_phase_invariance(rng):
    inst = random_instance(generate_grid(2, 3), rng)
    ops = inst.ops.copy()
    ops[4] = ops[4] * np.exp(0.7j)
    rotated = inst.with_ops(ops)
    assert phi_graph_exact(rotated) == pytest.approx(np.exp(0.7j) * phi_graph_exact(inst), abs=1e-12)
    est = phi_graph_estimate(rotated, 0.05, rng)
    assert abs(est.value - np.exp(0.7j) * phi_graph_exact(inst)) <= 0.05


def test_single_qubit_identity():
    lhs = np.exp(-1j * np.pi / 4) * S_GATE @ HADAMARD @ S_GATE
    rhs = HADAMARD @ S_GATE.conj().T @ HADAMARD
    assert np.allclose(lhs, rhs, atol=1e-15)


def test_iqp_trivial():
    g = generate_grid(1, 2)
    inst = iqp_instance(TwoLocalFunction(g))
    assert phi_graph_exact(inst) == pytest.approx(1, abs=1e-12)


def test_iqp_random_grid(rng):
    g = generate_grid(2, 3)
    h = phase_function(g, rng)
    target = dense_values(h).sum() / 2**g.n
    inst = iqp_instance(h)
    assert chain_phi(inst) == pytest.approx(target, abs=1e-10)
    f, gg = iqp_to_forrelation(h)
    assert f.graph is g and gg.graph is g


@given(st.integers(0, 2**32), st.floats(0, 1))
def test_unitary_split_reconstructs(seed, shrink):
    r = np.random.default_rng(seed)
    op = random_unitary(r) @ np.diag([1.0, shrink]) @ random_unitary(r) * r.random()
    s = unitary_split(op)
    for m in (s.m0, s.m1):
        assert np.allclose(m.conj().T @ m, EYE, atol=1e-10)
    assert np.allclose(s.norm * (s.q0 * s.m0 + (1 - s.q0) * s.m1), op, atol=1e-10)
    assert 0.5 - 1e-12 <= s.q0 <= 1 + 1e-12
