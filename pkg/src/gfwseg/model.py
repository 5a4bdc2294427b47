"""Penalized Ginzburg-Landau energy on a product of unit simplices.

The energy of an assignment ``U`` (``n x K``, rows in the unit simplex) is

    E(U) = 1/2 <U, L_s U> + (1/eps) phi(U) + 1/2 ||D_w^{1/2} (U_hat - U)||_F^2

with the concave penalty ``phi(U) = sum_i u_i^T (1 - u_i)``, which vanishes
exactly on binary assignments. The reference potential ``psi`` (L1 multi-well)
and its derivative matrix ``T`` used by convexity splitting live here too.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .linalg import frobenius_inner, lambda_max, spmm

SIMPLEX_TOL = 1e-10
CLAMP_TOL = 1e-12


def check_assignment(U, name="U"):
    """Validate that every row of ``U`` lies in the unit simplex.

    Entries in ``[-1e-12, 0)`` are clamped to zero; larger violations or a
    row sum off by more than ``1e-10`` raise ``ValueError``.
    """
    U = np.array(U, dtype=float)
    if U.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array")
    if not np.all(np.isfinite(U)):
        raise ValueError(f"{name} has non-finite entries")
    if U.min() < -CLAMP_TOL:
        raise ValueError(f"{name} has negative entries (min {U.min():.3e})")
    U[U < 0] = 0.0
    dev = np.abs(U.sum(axis=1) - 1.0)
    if dev.max() > SIMPLEX_TOL:
        i = int(dev.argmax())
        raise ValueError(f"row {i} of {name} sums to {U[i].sum():.12g}, not 1")
    return U


def is_binary_rows(U):
    """Boolean mask of rows that are simplex vertices."""
    return np.all((U == 0.0) | (U == 1.0), axis=1)


def one_hot(labels, K):
    labels = np.asarray(labels, dtype=np.int64)
    U = np.zeros((len(labels), K))
    U[np.arange(len(labels)), labels] = 1.0
    return U


@dataclass(frozen=True)
class Fidelity:
    """Known labels and per-node fidelity weights.

    ``omega[i]`` is ``omega0`` on fidelity nodes and 0 elsewhere; fidelity
    rows of ``U_hat`` are vertices, the remaining rows are ``1/K``.
    """

    U_hat: np.ndarray
    omega: np.ndarray
    omega0: float

    def __post_init__(self):
        U_hat = check_assignment(self.U_hat, "U_hat")
        omega = np.asarray(self.omega, dtype=float)
        if omega.shape != (U_hat.shape[0],):
            raise ValueError("omega must have one entry per node")
        if self.omega0 < 0:
            raise ValueError("omega0 must be nonnegative")
        if not np.all((omega == 0) | (omega == self.omega0)):
            raise ValueError("omega entries must be 0 or omega0")
        if not np.all(is_binary_rows(U_hat[omega > 0])):
            raise ValueError("fidelity rows of U_hat must be vertices")
        object.__setattr__(self, "U_hat", U_hat)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def from_labels(cls, n, K, nodes, labels, omega0):
        """Fidelity on ``nodes`` with classes ``labels``; other rows uniform."""
        U_hat = np.full((n, K), 1.0 / K)
        omega = np.zeros(n)
        nodes = np.asarray(nodes, dtype=np.int64)
        U_hat[nodes] = one_hot(labels, K)
        omega[nodes] = omega0
        return cls(U_hat, omega, float(omega0))

    @property
    def n(self):
        return self.U_hat.shape[0]

    @property
    def K(self):
        return self.U_hat.shape[1]

    @property
    def labeled(self):
        return self.omega > 0

    def initial_assignment(self):
        """``U_hat`` with unlabeled rows reset to the simplex barycentre."""
        U0 = self.U_hat.copy()
        U0[~self.labeled] = 1.0 / self.K
        return U0


@dataclass(frozen=True)
class PenaltyModel:
    L_s: sparse.csr_matrix
    fidelity: Fidelity
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.L_s.shape != (self.fidelity.n, self.fidelity.n):
            raise ValueError(
                f"L_s is {self.L_s.shape} but fidelity has {self.fidelity.n} nodes"
            )

    @property
    def n(self):
        return self.fidelity.n

    @property
    def K(self):
        return self.fidelity.K

    def with_epsilon(self, epsilon):
        other = PenaltyModel(self.L_s, self.fidelity, epsilon)
        # spectral quantities do not depend on epsilon
        for key in ("lambda_max_laplacian", "lambda_max_hessian"):
            if key in self.__dict__:
                other.__dict__[key] = self.__dict__[key]
        return other

    @property
    def omega_max(self):
        return float(self.fidelity.omega.max(initial=0.0))

    @cached_property
    def lambda_max_laplacian(self):
        return lambda_max(self.L_s)

    @cached_property
    def lambda_max_hessian(self):
        """Largest eigenvalue of ``L_s + D_w``."""
        return lambda_max(self.L_s + sparse.diags(self.fidelity.omega))


def phi(U):
    U = np.asarray(U, dtype=float)
    return float(np.sum(U * (1.0 - U)))


def energy(m, U):
    U = np.asarray(U, dtype=float)
    fid = m.fidelity
    R = fid.U_hat - U
    dirichlet = 0.5 * frobenius_inner(U, spmm(m.L_s, U))
    fit = 0.5 * float(np.sum(fid.omega[:, None] * R * R))
    return dirichlet + phi(U) / m.epsilon + fit


def gradient(m, U):
    U = np.asarray(U, dtype=float)
    fid = m.fidelity
    return (
        spmm(m.L_s, U)
        + (1.0 - 2.0 * U) / m.epsilon
        - fid.omega[:, None] * (fid.U_hat - U)
    )


def curvature(m, D):
    """``<D, (L_s + D_w) D> - (2/eps) ||D||^2``.

    ``E`` is quadratic, so ``E(U + a D) = E(U) + a <grad E(U), D> + a^2/2 curvature``.
    """
    D = np.asarray(D, dtype=float)
    return (
        frobenius_inner(D, spmm(m.L_s, D))
        + float(np.sum(m.fidelity.omega[:, None] * D * D))
        - 2.0 / m.epsilon * float(np.sum(D * D))
    )


def binary_energy(m, U):
    """Energy without the penalty term."""
    U = np.asarray(U, dtype=float)
    R = m.fidelity.U_hat - U
    return 0.5 * frobenius_inner(U, spmm(m.L_s, U)) + 0.5 * float(
        np.sum(m.fidelity.omega[:, None] * R * R)
    )


def _l1_to_vertices(U):
    """``dist[i, l] = ||u_i - e_l||_1``."""
    A = np.abs(U)
    return A.sum(axis=1, keepdims=True) - A + np.abs(U - 1.0)


def _prod_except(Q):
    """Row-wise product of all columns except the current one (zero-safe)."""
    K = Q.shape[1]
    left = np.ones_like(Q)
    right = np.ones_like(Q)
    for k in range(1, K):
        left[:, k] = left[:, k - 1] * Q[:, k - 1]
        right[:, K - 1 - k] = right[:, K - k] * Q[:, K - k]
    return left * right


def psi_l1(U):
    """``1/2 sum_i prod_k 1/4 ||u_i - e_k||_1^2``."""
    dist = _l1_to_vertices(np.asarray(U, dtype=float))
    return float(0.5 * np.sum(np.prod(0.25 * dist ** 2, axis=1)))


def t_matrix(U):
    """Derivative matrix of the L1 multi-well potential (twice ``dpsi/dU``)."""
    dist = _l1_to_vertices(np.asarray(U, dtype=float))
    a = 0.5 * dist * _prod_except(0.25 * dist ** 2)
    return a.sum(axis=1, keepdims=True) - 2.0 * a


def diameter(n):
    """Diameter of the feasible set in the Frobenius norm."""
    if n < 1:
        raise ValueError("n must be positive")
    return float(np.sqrt(2.0 * n))


def lipschitz_bound(m):
    """``lambda_max(L_s) + 2/eps + max_i omega_i``, a Lipschitz bound for the gradient."""
    return m.lambda_max_laplacian + 2.0 / m.epsilon + m.omega_max


def rho_max(m, absolute=True):
    """Maximum row sum of ``L_s``; absolute values by default."""
    L = abs(m.L_s) if absolute else m.L_s
    return float(np.asarray(L.sum(axis=1)).max())


def eps_bar(m):
    """Penalty threshold below which every minimizer is binary."""
    return 2.0 / m.lambda_max_hessian


def eps_tilde(m, absolute=True):
    """Penalty threshold below which the greedy and classic oracles agree."""
    denom = m.K * (rho_max(m, absolute) + m.omega_max)
    return 2.0 / denom if denom > 0 else np.inf


def one_shot_threshold(m):
    return min(eps_bar(m), eps_tilde(m))


def duality_gap(m, U, S, G=None):
    """``-<grad E(U), S - U>``; pass ``G`` to reuse a computed gradient."""
    if G is None:
        G = gradient(m, U)
    return -frobenius_inner(G, np.asarray(S) - np.asarray(U))
