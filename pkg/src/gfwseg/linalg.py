"""Sparse/dense kernels and a restarted Lanczos eigensolver.

Sparse operators are stored as ``scipy.sparse.csr_matrix`` with sorted
indices, summed duplicates and no explicit zeros. Dense matrices are plain
``numpy`` arrays of shape ``(n_rows, n_cols)``.
"""
from dataclasses import dataclass

import numpy as np
from scipy import sparse

SYMMETRY_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative eigensolver did not converge.

    ``best_residual`` holds the largest residual norm among the wanted pairs
    at the last restart.
    """

    def __init__(self, message, best_residual=np.inf):
        super().__init__(message)
        self.best_residual = best_residual


@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray  # ascending
    vectors: np.ndarray  # n x k, orthonormal columns
    residuals: np.ndarray

    @property
    def k(self):
        return len(self.values)


def csr_from_triplets(rows, cols, vals, shape):
    """Build a canonical CSR matrix; duplicate entries are summed."""
    A = sparse.coo_matrix(
        (np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))), shape=shape
    ).tocsr()
    return canonical_csr(A)


def canonical_csr(A):
    A = sparse.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def check_csr(A):
    """Raise ``ValueError`` if ``A`` breaks the CSR storage invariants."""
    if not sparse.isspmatrix_csr(A):
        raise ValueError("expected a CSR matrix")
    ptr, idx = A.indptr, A.indices
    if ptr[0] != 0 or ptr[-1] != len(A.data) or np.any(np.diff(ptr) < 0):
        raise ValueError("row_ptr is not a valid offset array")
    for i in range(A.shape[0]):
        row = idx[ptr[i]:ptr[i + 1]]
        if np.any(np.diff(row) <= 0):
            raise ValueError(f"column indices of row {i} are not strictly increasing")
    if np.any(A.data == 0):
        raise ValueError("explicit zeros stored")


def is_symmetric(A, tol=SYMMETRY_TOL):
    if A.shape[0] != A.shape[1]:
        return False
    diff = abs(A - A.T)
    if diff.nnz == 0:
        return True
    scale = max(1.0, abs(A).max())
    return diff.max() <= tol * scale


def spmm(A, X):
    """Sparse times dense: ``result[i] = sum_j A[i, j] X[j]``."""
    X = np.asarray(X, dtype=float)
    if A.shape[1] != X.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, X is {X.shape}")
    return np.asarray(A @ X)


def frobenius_inner(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {Y.shape}")
    return float(np.sum(X * Y))


def _as_operator(A):
    if sparse.issparse(A):
        return A.tocsr()
    return np.asarray(A, dtype=float)


def _norm_estimate(A):
    # max absolute row sum bounds the spectral radius of a symmetric matrix
    if sparse.issparse(A):
        return float(abs(A).sum(axis=1).max())
    return float(np.abs(A).sum(axis=1).max())


def _orthogonalize(V, w):
    """Two passes of classical Gram-Schmidt against the columns of ``V``."""
    h = V.T @ w
    w = w - V @ h
    h2 = V.T @ w
    w = w - V @ h2
    return w, h + h2


def eigs_smallest(A, k, tol=1e-10, max_iter=300, ncv=None, seed=0):
    """Smallest ``k`` eigenpairs of a symmetric matrix.

    Thick-restart Lanczos with full reorthogonalization. A pair is accepted
    once ``||A v - lam v|| <= tol * max(1, ||A||_est)``.

    Parameters
    ----------
    A : sparse matrix or ndarray, symmetric
    k : number of wanted eigenpairs, ``1 <= k < n``
    tol : relative residual tolerance
    max_iter : maximum number of restarts
    ncv : Krylov subspace dimension (default ``min(n, max(2k + 20, 40))``)
    seed : seed of the start vector

    Returns
    -------
    EigenPairs
    """
    A = _as_operator(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or n < 2:
        raise ValueError("eigs_smallest needs a square matrix with n >= 2")
    if sparse.issparse(A):
        symmetric = is_symmetric(A)
    else:
        symmetric = np.allclose(A, A.T, rtol=0, atol=SYMMETRY_TOL * max(1.0, np.abs(A).max()))
    if not symmetric:
        raise ValueError("eigs_smallest requires a symmetric matrix")
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")

    m = min(n, ncv if ncv is not None else max(2 * k + 20, 40))
    m = max(m, k + 1) if m < n else m
    anorm = max(1.0, _norm_estimate(A))
    thresh = tol * anorm
    rng = np.random.default_rng(seed)

    V = np.zeros((n, m + 1))
    H = np.zeros((m + 1, m + 1))
    v = rng.standard_normal(n)
    V[:, 0] = v / np.linalg.norm(v)
    start = 0
    best = np.inf
    keep = min(m - 1, k + (m - k) // 2)

    for _ in range(max_iter):
        for j in range(start, m):
            w, h = _orthogonalize(V[:, : j + 1], A @ V[:, j])
            H[: j + 1, j] = h
            beta = np.linalg.norm(w)
            if beta <= 1e-12 * anorm:
                # invariant subspace found; continue with a fresh direction
                beta = 0.0
                if j + 1 < n:
                    w = rng.standard_normal(n)
                    w, _ = _orthogonalize(V[:, : j + 1], w)
                    w, _ = _orthogonalize(V[:, : j + 1], w)
                    V[:, j + 1] = w / np.linalg.norm(w)
                else:
                    V[:, j + 1] = 0.0
            else:
                V[:, j + 1] = w / beta
            H[j + 1, j] = beta

        T = np.triu(H[:m, :m])
        T = T + np.triu(T, 1).T
        theta, Y = np.linalg.eigh(T)
        beta_m = H[m, m - 1]
        resid = np.abs(beta_m * Y[m - 1, :])
        best = float(resid[:k].max())
        if best <= thresh:
            vecs = V[:, :m] @ Y[:, :k]
            # polish orthonormality lost to roundoff in long runs
            vecs, _ = np.linalg.qr(vecs)
            vals = np.einsum("ij,ij->j", vecs, A @ vecs)
            order = np.argsort(vals, kind="stable")
            vals, vecs = vals[order], vecs[:, order]
            res = np.linalg.norm(A @ vecs - vecs * vals, axis=0)
            return EigenPairs(vals, vecs, res)

        # thick restart: keep the lowest Ritz vectors plus the residual direction
        p = keep
        Vp = V[:, :m] @ Y[:, :p]
        V[:, :p] = Vp
        V[:, p] = V[:, m]
        V[:, p + 1:] = 0.0
        H[:] = 0.0
        H[np.arange(p), np.arange(p)] = theta[:p]
        H[p, :p] = beta_m * Y[m - 1, :p]
        H[:p, p] = H[p, :p]
        start = p

    raise ConvergenceError(
        f"Lanczos did not converge after {max_iter} restarts (residual {best:.3e})", best
    )


def eigs_largest(A, k, **kwargs):
    """Largest ``k`` eigenpairs (ascending order), via ``eigs_smallest(-A)``."""
    pairs = eigs_smallest(-_as_operator(A), k, **kwargs)
    return EigenPairs(-pairs.values[::-1], pairs.vectors[:, ::-1], pairs.residuals[::-1])


def lambda_max(A, tol=1e-12):
    """Largest eigenvalue of a symmetric matrix.

    Dense ``eigvalsh`` for tiny matrices, Lanczos otherwise. Power iteration
    stalls when the top of the spectrum is clustered, as it is for
    ``L_s + D_w`` with many fidelity nodes.
    """
    A = _as_operator(A)
    n = A.shape[0]
    if n <= 64:
        dense = A.toarray() if sparse.issparse(A) else A
        return float(np.linalg.eigvalsh(dense)[-1])
    return float(eigs_largest(A, 1, tol=tol).values[-1])


def power_lambda_max(A, tol=1e-10, max_iter=100000, seed=0):
    """Largest eigenvalue of a symmetric positive semidefinite matrix.

    Power iteration with a Rayleigh-quotient estimate; stops once the
    residual ``||A x - theta x||`` falls below ``tol * theta``.
    """
    A = _as_operator(A)
    n = A.shape[0]
    x = np.random.default_rng(seed).uniform(0.5, 1.5, n)
    x /= np.linalg.norm(x)
    theta = 0.0
    for _ in range(max_iter):
        y = A @ x
        theta = float(x @ y)
        ynorm = np.linalg.norm(y)
        if ynorm == 0.0:
            return 0.0
        if np.linalg.norm(y - theta * x) <= tol * abs(theta):
            return theta
        x = y / ynorm
    raise ConvergenceError(f"power iteration did not converge (estimate {theta:.6g})")
