import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import sparse

from gfwseg import model as mdl
from gfwseg import pde
from gfwseg.graph import sym_normalized_laplacian

from conftest import random_assignment, two_clique_graph
from oracles import nearest_vertex, project_simplex_active_set

finite = st.floats(-10, 10, allow_nan=False)


def test_projection_examples():
    np.testing.assert_allclose(pde.project_simplex([0.5, 0.5]), [0.5, 0.5])
    np.testing.assert_allclose(pde.project_simplex([2.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(pde.project_simplex([0.6, 0.8]), [0.4, 0.6], atol=1e-15)
    Y = np.array([[0.5, 0.5], [2.0, 0.0], [0.6, 0.8]])
    np.testing.assert_allclose(pde.project_rows(Y), [[0.5, 0.5], [1, 0], [0.4, 0.6]], atol=1e-15)


@given(arrays(float, st.integers(2, 6), elements=finite))
def test_projection_matches_active_set_and_kkt(y):
    x = pde.project_simplex(y)
    np.testing.assert_allclose(x, project_simplex_active_set(y), atol=1e-10)
    assert x.min() >= 0 and abs(x.sum() - 1) <= 1e-12
    # KKT: one threshold explains every positive entry and bounds the zeros
    t = (y - x)[x > 0]
    assert np.ptp(t) <= 1e-12
    assert np.all(y[x == 0] <= t[0] + 1e-12)


@given(arrays(float, st.tuples(st.integers(1, 8), st.integers(2, 6)), elements=finite))
def test_project_rows_matches_scalar_version(Y):
    ref = np.array([pde.project_simplex(row) for row in Y])
    np.testing.assert_allclose(pde.project_rows(Y), ref, atol=1e-12)


@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite))
def test_projection_idempotent_and_nonexpansive(y, z):
    py, pz = pde.project_simplex(y), pde.project_simplex(z)
    np.testing.assert_allclose(pde.project_simplex(py), py, atol=1e-12)
    assert np.linalg.norm(py - pz) <= np.linalg.norm(y - z) + 1e-12


def test_threshold_rows():
    np.testing.assert_array_equal(pde.threshold_rows([[0.2, 0.7, 0.1]]), [[0, 1, 0]])
    np.testing.assert_array_equal(pde.threshold_rows([[0.5, 0.5]]), [[1, 0]])
    rng = np.random.default_rng(0)
    U = random_assignment(rng, 200, 4, interior=True)
    labels = np.argmax(pde.threshold_rows(U), axis=1)
    assert all(labels[i] == nearest_vertex(U[i]) for i in range(200))


def test_options():
    assert pde.PdeOptions(mu=100).convexity_constant(100.0) == 100.01
    with pytest.raises(ValueError, match="below"):
        pde.PdeOptions(c=1.0).convexity_constant(100.0)
    with pytest.raises(ValueError):
        pde.PdeOptions(tau=0.0)


def toy(omega0=100.0):
    g = two_clique_graph()
    fid = mdl.Fidelity.from_labels(10, 2, [0, 9], [0, 1], omega0)
    return sym_normalized_laplacian(g), fid


def test_cs_two_cliques_matches_gfw_partition():
    L, fid = toy()
    for seed in range(3):
        rep = pde.cs_solve(L, fid, pde.PdeOptions(k_eig=4, seed=seed))
        np.testing.assert_array_equal(rep.labels, [0] * 5 + [1] * 5)
        assert rep.converged and mdl.phi(rep.final_U) == 0.0


def test_cs_update_denominator_positive():
    L, fid = toy()
    opts = pde.PdeOptions(k_eig=4)
    eig = pde.laplacian_eigenpairs(L, opts)
    B = (1 + opts.convexity_constant(fid.omega0) * opts.tau) + opts.mu * opts.tau * eig.values
    assert np.all(B >= 1 + opts.convexity_constant(fid.omega0) * opts.tau - 1e-12)


def test_mbo_two_cliques():
    L, fid = toy()
    for seed in range(3):
        rep = pde.mbo_solve(L, fid, pde.PdeOptions(k_eig=3, seed=seed))
        np.testing.assert_array_equal(rep.labels, [0] * 5 + [1] * 5)
        assert rep.converged


def test_mbo_vanishing_tau_only_projects_the_start():
    L, fid = toy()
    opts = pde.PdeOptions(k_eig=6, tau=1e-14, seed=4, max_iter=1)
    eig = pde.laplacian_eigenpairs(L, opts)
    U0 = pde.random_initial_assignment(fid, 4)
    Phi = eig.vectors
    expected = np.argmax(pde.project_rows(Phi @ (Phi.T @ U0)), axis=1)
    rep = pde.mbo_solve(L, fid, opts, eig=eig)
    np.testing.assert_array_equal(rep.labels, expected)


def test_diffusion_inverse_matches_dense_solve():
    L, _ = toy()
    eig = pde.laplacian_eigenpairs(L, pde.PdeOptions(k_eig=5))
    tau = 0.3
    rhs = np.random.default_rng(0).standard_normal((5, 2))
    fast = rhs / (1 + tau * eig.values)[:, None]
    dense = np.linalg.solve(np.eye(5) + tau * np.diag(eig.values), rhs)
    np.testing.assert_allclose(fast, dense, atol=1e-12)


@pytest.mark.parametrize("solver", [pde.cs_solve, pde.mbo_solve])
def test_fidelity_pull_dominates_without_graph(solver):
    # near-zero Laplacian, large fidelity weight: labelled rows follow U_hat after one step
    n, K = 12, 3
    rng = np.random.default_rng(1)
    labels = rng.integers(K, size=n)
    fid = mdl.Fidelity.from_labels(n, K, np.arange(0, n, 2), labels[::2], 1e3)
    L = sparse.identity(n, format="csr") * 1e-9
    rep = solver(L, fid, pde.PdeOptions(k_eig=n - 1, tau=1.0, mu=1.0, max_iter=1))
    np.testing.assert_array_equal(rep.labels[::2], labels[::2])


@given(st.integers(0, 1000), st.sampled_from(["cs", "mbo"]))
def test_iterates_stay_feasible(seed, which):
    L, fid = toy()
    solver = pde.cs_solve if which == "cs" else pde.mbo_solve
    rep = solver(L, fid, pde.PdeOptions(k_eig=4, seed=seed, max_iter=5))
    U = rep.final_U
    assert U.min() >= 0 and np.abs(U.sum(axis=1) - 1).max() <= 1e-12


def test_k_eig_must_be_below_n():
    L, fid = toy()
    with pytest.raises(ValueError, match="k_eig"):
        pde.cs_solve(L, fid, pde.PdeOptions(k_eig=10))


def test_largest_end_is_available_for_diagnostics():
    L, _ = toy()
    eig = pde.laplacian_eigenpairs(L, pde.PdeOptions(k_eig=2, spectrum_end="largest"))
    assert eig.values.min() > 1.0
