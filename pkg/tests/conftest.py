import itertools
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gfwseg import fw
from gfwseg import graph as gr
from gfwseg import model as mdl

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_connected_weights(rng, n, extra=0.3):
    """Dense symmetric weights: a random spanning tree plus random chords."""
    W = np.zeros((n, n))
    order = rng.permutation(n)
    for a in range(1, n):
        i, j = order[a], order[rng.integers(a)]
        W[i, j] = W[j, i] = rng.uniform(0.1, 1.0)
    mask = np.triu(rng.random((n, n)) < extra, 1)
    w = rng.uniform(0.1, 1.0, size=(n, n))
    W = np.where(mask | mask.T, np.maximum(W, np.triu(w, 1) + np.triu(w, 1).T), W)
    return W


def graph_from_dense(W):
    i, j = np.nonzero(np.triu(W))
    return gr.from_edge_list(list(zip(i, j, W[i, j])), len(W))


def random_instance(rng, n, K, omega0=None, labeled_frac=None, eps=1.0):
    """Random connected graph and fidelity; at least one fidelity node."""
    W = random_connected_weights(rng, n)
    g = graph_from_dense(W)
    L_s = gr.sym_normalized_laplacian(g)
    if omega0 is None:
        omega0 = float(10 ** rng.uniform(-1, 3))
    frac = rng.uniform(0.1, 0.6) if labeled_frac is None else labeled_frac
    m_lab = max(1, int(round(frac * n)))
    nodes = np.sort(rng.choice(n, size=m_lab, replace=False))
    labels = rng.integers(K, size=m_lab)
    fid = mdl.Fidelity.from_labels(n, K, nodes, labels, omega0)
    return g, W, mdl.PenaltyModel(L_s, fid, eps)


def random_assignment(rng, n, K, interior=False):
    U = rng.gamma(1.0, size=(n, K))
    if not interior:
        # zero out some entries so faces of the simplex are exercised
        U[rng.random((n, K)) < 0.3] = 0.0
        empty = U.sum(axis=1) == 0
        U[empty, rng.integers(K, size=empty.sum())] = 1.0
    return U / U.sum(axis=1, keepdims=True)


def two_clique_graph(size=5):
    """Two complete graphs on ``size`` nodes joined by one edge."""
    edges = [(i, j, 1.0) for i, j in itertools.combinations(range(size), 2)]
    edges += [(i + size, j + size, 1.0) for i, j in itertools.combinations(range(size), 2)]
    edges.append((size - 1, size, 1.0))
    return gr.from_edge_list(edges, 2 * size)


def armijo_violations(m, report, opts=fw.FwOptions()):
    """Accepted steps breaking sufficient decrease or the step-size lower bound.

    Energies are recomputed from scratch by the caller's model, so a roundoff
    slack of ``1e-12 (1 + |E|)`` is allowed on the decrease test.
    """
    L = mdl.lipschitz_bound(m)
    delta, gamma = opts.armijo_delta, opts.armijo_gamma
    bad = []
    for k, alpha in enumerate(report.step_sizes):
        E0, E1, g = report.energies[k], report.energies[k + 1], report.gaps[k]
        dsq = report.direction_sq_norms[k]
        slack = 1e-12 * (1.0 + abs(E0))
        if E0 - E1 < gamma * alpha * g - slack:
            bad.append((k, "decrease", E0 - E1, gamma * alpha * g))
        lower = min(1.0, 2.0 * delta * (1.0 - gamma) * g / (L * dsq))
        if alpha < lower * (1.0 - 1e-12):
            bad.append((k, "step", alpha, lower))
    return bad


@pytest.fixture
def assert_armijo():
    def check(m, report, opts=fw.FwOptions()):
        bad = armijo_violations(m, report, opts)
        assert not bad, f"Armijo violations: {bad[:3]}"
        assert len(report.energies) == len(report.step_sizes) + 1
    return check


# one line per acceptance criterion, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
