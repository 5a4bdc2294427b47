"""Frank-Wolfe solvers over the product of unit simplices.

Three drivers share one loop:

* :func:`fw_solve` -- classic linear minimization oracle,
* :func:`gfw_solve` -- greedy oracle restricted to each row's support,
* :func:`osfw_solve` -- a single greedy oracle step (``U_1 = S_0``).

Steps are chosen by Armijo backtracking ``alpha = delta**j``.
"""
from dataclasses import dataclass, field
import logging
import time

import numpy as np

from . import model as mdl
from .linalg import frobenius_inner

log = logging.getLogger(__name__)

MAX_BACKTRACKS = 60


class LineSearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class FwOptions:
    max_iter: int = 30
    gap_tol: float = 1e-6
    armijo_delta: float = 0.5
    armijo_gamma: float = 1e-6
    oracle: str = "greedy"

    def __post_init__(self):
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if not 0 < self.armijo_delta < 1:
            raise ValueError("armijo_delta must lie in (0, 1)")
        if not 0 < self.armijo_gamma < 0.5:
            raise ValueError("armijo_gamma must lie in (0, 1/2)")
        if self.oracle not in ("classic", "greedy"):
            raise ValueError(f"unknown oracle {self.oracle!r}")


@dataclass
class SolverReport:
    """Trajectory and result of one solve.

    For Frank-Wolfe runs ``energies`` and ``gaps`` have one entry per visited
    iterate (``iterations + 1``), ``step_sizes`` and ``direction_sq_norms``
    one entry per accepted step.
    """

    final_U: np.ndarray
    iterations: int
    energies: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    direction_sq_norms: list = field(default_factory=list)
    wall_time: float = 0.0
    one_shot: bool = False
    converged: bool = False
    n_gradient_evals: int = 0
    n_oracle_calls: int = 0
    method: str = ""

    @property
    def labels(self):
        return np.argmax(self.final_U, axis=1)

    @property
    def best_gaps(self):
        """Running minimum of the gaps."""
        return np.minimum.accumulate(self.gaps) if self.gaps else np.array([])


def lmo(G):
    """Vertex minimizing ``<G, S>`` over the product of simplices."""
    G = np.asarray(G, dtype=float)
    S = np.zeros_like(G)
    S[np.arange(G.shape[0]), np.argmin(G, axis=1)] = 1.0
    return S


def glmo(G, U):
    """Greedy oracle: binary rows are kept, other rows move to the best
    vertex inside their support."""
    G = np.asarray(G, dtype=float)
    U = np.asarray(U, dtype=float)
    S = U.copy()
    active = ~mdl.is_binary_rows(U)
    if np.any(active):
        Ga = np.where(U[active] > 0, G[active], np.inf)
        rows = np.flatnonzero(active)
        S[rows] = 0.0
        S[rows, np.argmin(Ga, axis=1)] = 1.0
    return S


def _advance(U, D, alpha, S=None):
    # a full step lands exactly on the vertex when it is known
    if alpha == 1.0 and S is not None:
        return S.copy()
    return U + alpha * D


def armijo(m, U, D, g, opts=FwOptions()):
    """Backtracking step ``delta**j`` with ``E(U) - E(U + a D) >= gamma a g``.

    ``g`` is the gap ``-<grad E(U), D>``. The energy is quadratic along ``D``,
    so each trial decrease ``a g - a^2/2 curvature`` is exact and costs no
    extra matrix products.
    """
    if g <= 0:
        raise ValueError("Armijo search needs a positive gap")
    q = mdl.curvature(m, D)
    alpha = 1.0
    for _ in range(MAX_BACKTRACKS + 1):
        decrease = alpha * g - 0.5 * alpha * alpha * q
        if decrease >= opts.armijo_gamma * alpha * g:
            return alpha
        alpha *= opts.armijo_delta
    raise LineSearchError(
        f"no sufficient decrease after {MAX_BACKTRACKS} backtracks (gap {g:.3e})"
    )


def _frank_wolfe(m, U0, opts, oracle, method):
    t0 = time.perf_counter()
    U = mdl.check_assignment(U0, "U0")
    if U.shape != (m.n, m.K):
        raise ValueError(f"U0 has shape {U.shape}, expected {(m.n, m.K)}")
    report = SolverReport(final_U=U, iterations=0, method=method)
    E = mdl.energy(m, U)
    report.energies.append(E)
    for k in range(opts.max_iter + 1):
        G = mdl.gradient(m, U)
        report.n_gradient_evals += 1
        S = glmo(G, U) if oracle == "greedy" else lmo(G)
        report.n_oracle_calls += 1
        D = S - U
        gap = -frobenius_inner(G, D)
        report.gaps.append(gap)
        if gap <= opts.gap_tol:
            report.converged = True
            break
        if k == opts.max_iter:
            break
        alpha = armijo(m, U, D, gap, opts)
        U = _advance(U, D, alpha, S)
        E = mdl.energy(m, U)
        report.step_sizes.append(alpha)
        report.direction_sq_norms.append(float(np.sum(D * D)))
        report.energies.append(E)
        report.iterations += 1
        log.debug("%s it=%d gap=%.3e alpha=%.3g E=%.6g", method, k, gap, alpha, E)
    report.final_U = U
    report.one_shot = report.iterations == 1 and report.converged
    report.wall_time = time.perf_counter() - t0
    return report


def solve(m, U0=None, opts=FwOptions()):
    """Frank-Wolfe with the oracle named in ``opts.oracle``."""
    return gfw_solve(m, U0, opts) if opts.oracle == "greedy" else fw_solve(m, U0, opts)


def gfw_solve(m, U0=None, opts=FwOptions()):
    """Greedy Frank-Wolfe; ``U0`` defaults to ``U_hat`` with uniform unlabeled rows."""
    if U0 is None:
        U0 = m.fidelity.initial_assignment()
    return _frank_wolfe(m, U0, opts, "greedy", "gfw")


def fw_solve(m, U0=None, opts=FwOptions()):
    """Classic Frank-Wolfe with the full linear minimization oracle."""
    if U0 is None:
        U0 = m.fidelity.initial_assignment()
    return _frank_wolfe(m, U0, opts, "classic", "fw")


def osfw_solve(m, U0=None):
    """One greedy oracle step: ``U_1 = GLMO(grad E(U_0))``."""
    t0 = time.perf_counter()
    if U0 is None:
        U0 = m.fidelity.initial_assignment()
    U = mdl.check_assignment(U0, "U0")
    G = mdl.gradient(m, U)
    S = glmo(G, U)
    report = SolverReport(
        final_U=S,
        iterations=1,
        energies=[mdl.energy(m, U), mdl.energy(m, S)],
        gaps=[-frobenius_inner(G, S - U)],
        step_sizes=[1.0],
        direction_sq_norms=[float(np.sum((S - U) ** 2))],
        one_shot=True,
        converged=True,
        n_gradient_evals=1,
        n_oracle_calls=1,
        method="osfw",
    )
    report.wall_time = time.perf_counter() - t0
    return report
