import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import sparse

from gfwseg import fw
from gfwseg import model as mdl
from gfwseg.graph import from_edge_list, sym_normalized_laplacian

from conftest import armijo_violations, random_assignment, random_instance, two_clique_graph
from oracles import vertex_matrices, energy_dense


def two_triangles(eps, omega0=10.0):
    edges = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 0.05)]
    g = from_edge_list(edges, 6)
    fid = mdl.Fidelity.from_labels(6, 2, [0, 5], [0, 1], omega0)
    return mdl.PenaltyModel(sym_normalized_laplacian(g), fid, eps)


def test_options_validation():
    with pytest.raises(ValueError):
        fw.FwOptions(armijo_delta=1.0)
    with pytest.raises(ValueError):
        fw.FwOptions(armijo_gamma=0.5)
    with pytest.raises(ValueError):
        fw.FwOptions(oracle="exact")


def test_lmo_rows_and_ties():
    S = fw.lmo(np.array([[3.0, -1.0, 2.0], [5.0, 5.0, 5.0]]))
    np.testing.assert_array_equal(S, [[0, 1, 0], [1, 0, 0]])


def test_lmo_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, K = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        G = rng.standard_normal((n, K))
        best = min(np.sum(G * V) for _, V in vertex_matrices(n, K))
        assert abs(np.sum(G * fw.lmo(G)) - best) <= 1e-12


def test_glmo_keeps_binary_rows_and_respects_support():
    U = np.array([[1.0, 0, 0], [0.5, 0.5, 0]])
    G = np.array([[9.0, -9.0, 0.0], [2.0, 1.0, -5.0]])
    np.testing.assert_array_equal(fw.glmo(G, U), [[1, 0, 0], [0, 1, 0]])


def test_glmo_equals_lmo_below_eps_tilde():
    rng = np.random.default_rng(1)
    for _ in range(5):
        _, _, m = random_instance(rng, 8, 3)
        m = m.with_epsilon(mdl.eps_tilde(m))
        for _ in range(20):
            U = random_assignment(rng, 8, 3)
            G = mdl.gradient(m, U)
            np.testing.assert_array_equal(fw.glmo(G, U), fw.lmo(G))


def test_armijo_full_step_when_concave():
    rng = np.random.default_rng(2)
    _, _, m = random_instance(rng, 6, 3)
    m = m.with_epsilon(0.5 * mdl.eps_bar(m))
    U = m.fidelity.initial_assignment()
    G = mdl.gradient(m, U)
    S = fw.glmo(G, U)
    assert fw.armijo(m, U, S - U, -np.sum(G * (S - U))) == 1.0


def test_armijo_backtracks_on_known_quadratic():
    # E(alpha) = w [(1 - alpha)^2 + 2 alpha^2] along D, minimized at alpha = 1/3
    w = 4.0
    U_hat = np.array([[1.0, 0], [1, 0], [1, 0]])
    fid = mdl.Fidelity(U_hat, np.full(3, w), w)
    m = mdl.PenaltyModel(sparse.csr_matrix((3, 3)), fid, 1e12)
    U = np.array([[0.0, 1], [1, 0], [1, 0]])
    S = np.array([[1.0, 0], [0, 1], [0, 1]])
    D = S - U
    g = -np.sum(mdl.gradient(m, U) * D)
    assert abs(g - 2 * w) <= 1e-9
    opts = fw.FwOptions()
    alpha = fw.armijo(m, U, D, g, opts)
    assert alpha == 0.5
    E0 = mdl.energy(m, U)
    assert E0 - mdl.energy(m, U + D) < 0
    assert E0 - mdl.energy(m, U + alpha * D) >= opts.armijo_gamma * alpha * g


def test_armijo_scale_equivariance():
    rng = np.random.default_rng(4)
    _, _, m = random_instance(rng, 5, 3, eps=20.0)
    U = random_assignment(rng, 5, 3, interior=True)
    G = mdl.gradient(m, U)
    D = fw.lmo(G) - U
    g = -np.sum(G * D)
    c = 7.0
    fid = m.fidelity
    scaled = mdl.PenaltyModel(c * m.L_s, mdl.Fidelity(fid.U_hat, c * fid.omega, c * fid.omega0),
                              m.epsilon / c)
    assert fw.armijo(m, U, D, g) == fw.armijo(scaled, U, D, c * g)


def test_armijo_rejects_nonpositive_gap():
    _, _, m = random_instance(np.random.default_rng(0), 4, 2)
    U = m.fidelity.initial_assignment()
    with pytest.raises(ValueError):
        fw.armijo(m, U, np.zeros_like(U), 0.0)


def test_gfw_one_shot(assert_armijo):
    rng = np.random.default_rng(5)
    _, _, m = random_instance(rng, 20, 4)
    m = m.with_epsilon(0.9 * mdl.one_shot_threshold(m))
    rep = fw.gfw_solve(m)
    assert rep.iterations == 1 and rep.one_shot and rep.converged
    assert mdl.phi(rep.final_U) == 0.0
    assert_armijo(m, rep)


def test_gfw_two_triangles_matches_exhaustive(assert_armijo):
    m0 = two_triangles(1.0)
    m = m0.with_epsilon(0.9 * mdl.one_shot_threshold(m0))
    rep = fw.gfw_solve(m)
    np.testing.assert_array_equal(rep.labels, [0, 0, 0, 1, 1, 1])
    Ls = m.L_s.toarray()
    energies = {lab: energy_dense(Ls, m.fidelity.U_hat, m.fidelity.omega, m.epsilon, V)
                for lab, V in vertex_matrices(6, 2)}
    assert min(energies, key=energies.get) == (0, 0, 0, 1, 1, 1)
    assert_armijo(m, rep)


def test_gfw_fidelity_only_returns_u_hat():
    n, K = 5, 3
    labels = np.array([0, 2, 1, 1, 0])
    fid = mdl.Fidelity.from_labels(n, K, np.arange(n), labels, 10.0)
    m = mdl.PenaltyModel(sparse.csr_matrix((n, n)), fid, 0.01)
    rep = fw.gfw_solve(m)
    np.testing.assert_array_equal(rep.final_U, fid.U_hat)


def test_gfw_rejects_infeasible_start():
    _, _, m = random_instance(np.random.default_rng(0), 4, 2)
    with pytest.raises(ValueError):
        fw.gfw_solve(m, U0=np.full((4, 2), 0.7))


@given(st.integers(0, 10_000))
def test_gfw_iterates_feasible_and_monotone(seed):
    rng = np.random.default_rng(seed)
    n, K = int(rng.integers(3, 15)), int(rng.integers(2, 5))
    _, _, m = random_instance(rng, n, K, eps=float(10 ** rng.uniform(-1, 2)))
    rep = fw.gfw_solve(m)
    U = rep.final_U
    assert U.min() >= 0 and np.abs(U.sum(axis=1) - 1).max() <= 1e-10
    assert np.all(np.diff(rep.energies) <= 1e-12 * (1 + np.abs(rep.energies[:-1])))
    assert min(rep.gaps) >= -1e-12
    assert np.all(np.diff(rep.best_gaps) <= 0)
    assert not armijo_violations(m, rep)


def test_osfw_counters_and_equivalence():
    rng = np.random.default_rng(6)
    _, _, m = random_instance(rng, 15, 3)
    m = m.with_epsilon(0.9 * mdl.one_shot_threshold(m))
    one = fw.osfw_solve(m)
    assert one.n_gradient_evals == 1 and one.n_oracle_calls == 1
    np.testing.assert_array_equal(one.final_U, fw.gfw_solve(m).final_U)
    U0 = mdl.one_hot(rng.integers(3, size=15), 3)
    np.testing.assert_array_equal(fw.osfw_solve(m, U0).final_U, U0)


def test_fw_matches_gfw_below_eps_tilde(assert_armijo):
    rng = np.random.default_rng(7)
    for _ in range(5):
        _, _, m = random_instance(rng, 10, 3)
        m = m.with_epsilon(mdl.eps_tilde(m))
        a, b = fw.fw_solve(m), fw.gfw_solve(m)
        np.testing.assert_array_equal(a.final_U, b.final_U)
        assert a.step_sizes == b.step_sizes
        assert_armijo(m, a)


def test_fw_equals_gfw_on_full_support_iterates():
    # with every row interior, the greedy oracle sees the full support
    rng = np.random.default_rng(8)
    _, _, m = random_instance(rng, 6, 3, eps=100.0)
    U0 = random_assignment(rng, 6, 3, interior=True)
    a = fw.fw_solve(m, U0, fw.FwOptions(max_iter=1))
    b = fw.gfw_solve(m, U0, fw.FwOptions(max_iter=1))
    np.testing.assert_array_equal(a.final_U, b.final_U)


def test_solve_honours_oracle_option():
    rng = np.random.default_rng(9)
    _, _, m = random_instance(rng, 8, 3, eps=50.0)
    assert fw.solve(m, opts=fw.FwOptions(oracle="classic")).method == "fw"
    assert fw.solve(m).method == "gfw"


def test_column_permutation_equivariance():
    rng = np.random.default_rng(10)
    _, _, m = random_instance(rng, 10, 3, eps=5.0)
    # tie-free start: perturb the uniform rows
    U0 = m.fidelity.initial_assignment()
    U0[~m.fidelity.labeled] = random_assignment(rng, int((~m.fidelity.labeled).sum()), 3, True)
    perm = np.array([2, 0, 1])
    fid = m.fidelity
    pm = mdl.PenaltyModel(m.L_s, mdl.Fidelity(fid.U_hat[:, perm], fid.omega, fid.omega0), m.epsilon)
    a = fw.gfw_solve(m, U0)
    b = fw.gfw_solve(pm, U0[:, perm])
    np.testing.assert_allclose(b.final_U, a.final_U[:, perm], atol=1e-12)


def test_two_cliques_gfw(assert_armijo):
    g = two_clique_graph()
    fid = mdl.Fidelity.from_labels(10, 2, [0, 9], [0, 1], 1000.0)
    m = mdl.PenaltyModel(sym_normalized_laplacian(g), fid, 50.0)
    rep = fw.gfw_solve(m)
    np.testing.assert_array_equal(rep.labels, [0] * 5 + [1] * 5)
    assert_armijo(m, rep)
