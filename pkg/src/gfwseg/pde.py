"""Convexity splitting and MBO baselines in a truncated Laplacian eigenbasis.

Both schemes keep the label field as coefficients ``C`` in the basis of the
``k_eig`` smallest eigenvectors of ``L_s`` (``U = Phi C``). After each update
the node-space field ``Phi C`` is projected row-wise onto the unit simplex and
mapped back with ``C = Phi^T U``. The fidelity forcing always pulls toward
``U_hat``.
"""
from dataclasses import dataclass
import time

import numpy as np

from . import model as mdl
from .fw import SolverReport
from .graph import Graph, sym_normalized_laplacian
from .linalg import eigs_largest, eigs_smallest


@dataclass(frozen=True)
class PdeOptions:
    k_eig: int = 100
    tau: float = 0.1
    mu: float = 100.0
    c: float = None  # convexity constant; None -> omega0 + 1/mu
    max_iter: int = 500
    tol: float = 1e-6
    spectrum_end: str = "smallest"  # "largest" only for diagnostics
    seed: int = 0

    def __post_init__(self):
        if self.k_eig < 1:
            raise ValueError("k_eig must be positive")
        if self.tau <= 0 or self.mu <= 0:
            raise ValueError("tau and mu must be positive")
        if self.spectrum_end not in ("smallest", "largest"):
            raise ValueError("spectrum_end must be 'smallest' or 'largest'")

    def convexity_constant(self, omega0):
        c_min = omega0 + 1.0 / self.mu
        if self.c is None:
            return c_min
        if self.c < c_min:
            raise ValueError(f"c={self.c} is below omega0 + 1/mu = {c_min}")
        return self.c


def project_simplex(y):
    """Euclidean projection of ``y`` onto the unit simplex (sorting method)."""
    y = np.asarray(y, dtype=float)
    K = len(y)
    ys = np.sort(y)
    t_hat = None
    tail = 0.0
    for i in range(K - 1, 0, -1):
        # ys[i:] holds the K - i largest entries (1-based: y_{i+1}..y_K)
        tail += ys[i]
        t = (tail - 1.0) / (K - i)
        if t >= ys[i - 1]:
            t_hat = t
            break
    if t_hat is None:
        t_hat = (ys.sum() - 1.0) / K
    return np.maximum(y - t_hat, 0.0)


def project_rows(Y):
    """Row-wise simplex projection, vectorized over rows."""
    Y = np.asarray(Y, dtype=float)
    n, K = Y.shape
    ys = np.sort(Y, axis=1)
    # tails[:, i] = sum of ys[:, i:], i.e. the K - i largest entries
    tails = np.cumsum(ys[:, ::-1], axis=1)[:, ::-1]
    counts = K - np.arange(K)
    t = (tails - 1.0) / counts
    # a threshold taken at split i is valid once it exceeds the next-lower entry
    ok = np.zeros((n, K), dtype=bool)
    ok[:, 1:] = t[:, 1:] >= ys[:, :-1]
    ok[:, 0] = True
    # highest valid split index per row
    split = K - 1 - np.argmax(ok[:, ::-1], axis=1)
    t_hat = t[np.arange(n), split]
    return np.maximum(Y - t_hat[:, None], 0.0)


def threshold_rows(U):
    """Replace each row by its nearest simplex vertex (argmax, lowest index on ties)."""
    return mdl.one_hot(np.argmax(np.asarray(U), axis=1), np.asarray(U).shape[1])


def random_initial_assignment(fid, seed):
    """Uniform random rows projected onto the simplex; fidelity rows pure."""
    rng = np.random.default_rng(seed)
    U0 = project_rows(rng.uniform(0.0, 1.0, size=(fid.n, fid.K)))
    U0[fid.labeled] = fid.U_hat[fid.labeled]
    return U0


def laplacian_eigenpairs(L_s, opts):
    if not opts.k_eig < L_s.shape[0]:
        raise ValueError(f"k_eig={opts.k_eig} must be smaller than n={L_s.shape[0]}")
    if opts.spectrum_end == "largest":
        return eigs_largest(L_s, opts.k_eig)
    return eigs_smallest(L_s, opts.k_eig)


def _start(g, fid, opts, eig):
    L_s = sym_normalized_laplacian(g) if isinstance(g, Graph) else g
    if L_s.shape[0] != fid.n:
        raise ValueError("graph and fidelity sizes differ")
    if eig is None:
        eig = laplacian_eigenpairs(L_s, opts)
    U = random_initial_assignment(fid, opts.seed)
    return eig, U


def _finish(report, U, t0):
    report.final_U = threshold_rows(U)
    report.wall_time = time.perf_counter() - t0
    return report


def cs_solve(g, fid, opts=PdeOptions(), eig=None):
    """Convexity splitting for the L1 Ginzburg-Landau energy.

    ``g`` is a :class:`Graph` or its normalized Laplacian. ``eig`` may carry
    precomputed eigenpairs of ``L_s``; otherwise they are computed here.
    Stops when the relative Frobenius change of the projected iterate drops
    to ``opts.tol`` or after ``opts.max_iter`` steps.
    """
    t0 = time.perf_counter()
    eig, U = _start(g, fid, opts, eig)
    Phi, lam = eig.vectors, eig.values
    tau, mu = opts.tau, opts.mu
    c = opts.convexity_constant(fid.omega0)
    B = (1.0 + c * tau) + mu * tau * lam
    w = fid.omega[:, None]
    C = Phi.T @ U
    report = SolverReport(final_U=U, iterations=0, method="cs")
    for _ in range(opts.max_iter):
        rhs = (
            (1.0 + c * tau) * C
            - tau / (2.0 * mu) * (Phi.T @ mdl.t_matrix(U))
            + tau * (Phi.T @ (w * (fid.U_hat - U)))
        )
        C = rhs / B[:, None]
        U_new = project_rows(Phi @ C)
        if not np.all(np.isfinite(U_new)):
            raise FloatingPointError("cs: non-finite iterate")
        C = Phi.T @ U_new
        change = np.linalg.norm(U_new - U) / max(np.linalg.norm(U_new), 1e-300)
        U = U_new
        report.iterations += 1
        report.gaps.append(change)
        if change <= opts.tol:
            report.converged = True
            break
    return _finish(report, U, t0)


def mbo_solve(g, fid, opts=PdeOptions(), eig=None):
    """MBO-type scheme: implicit diffusion with fidelity forcing, then projection.

    Stops once the argmax labels repeat between consecutive iterations or
    after ``opts.max_iter`` steps. The final field is thresholded to vertices.
    Small bases work best here: the label-repeat test can fire early when
    ``k_eig`` includes many nearly degenerate modes.
    """
    t0 = time.perf_counter()
    eig, U = _start(g, fid, opts, eig)
    Phi, lam = eig.vectors, eig.values
    tau = opts.tau
    damp = 1.0 / (1.0 + tau * lam)
    w = fid.omega[:, None]
    C = Phi.T @ U
    labels = np.argmax(U, axis=1)
    report = SolverReport(final_U=U, iterations=0, method="mbo")
    for _ in range(opts.max_iter):
        C = damp[:, None] * (C + tau * (Phi.T @ (w * (fid.U_hat - U))))
        U_new = project_rows(Phi @ C)
        if not np.all(np.isfinite(U_new)):
            raise FloatingPointError("mbo: non-finite iterate")
        C = Phi.T @ U_new
        change = np.linalg.norm(U_new - U) / max(np.linalg.norm(U_new), 1e-300)
        U = U_new
        report.iterations += 1
        report.gaps.append(change)
        new_labels = np.argmax(U, axis=1)
        if np.array_equal(new_labels, labels):
            report.converged = True
            break
        labels = new_labels
    return _finish(report, U, t0)
