"""Weighted graphs from edge lists, feature vectors and images."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .linalg import canonical_csr, csr_from_triplets, is_symmetric


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    W: sparse.csr_matrix
    degrees: np.ndarray

    @property
    def n(self):
        return self.W.shape[0]

    @classmethod
    def from_weights(cls, W):
        """Validate a symmetric nonnegative weight matrix and wrap it."""
        W = canonical_csr(W)
        if W.shape[0] != W.shape[1]:
            raise GraphError("weight matrix must be square")
        if W.nnz and W.data.min() < 0:
            raise GraphError("negative edge weight")
        if not is_symmetric(W):
            raise GraphError("weight matrix is not symmetric")
        degrees = np.asarray(W.sum(axis=1)).ravel()
        isolated = np.flatnonzero(degrees <= 0)
        if len(isolated):
            raise GraphError(f"{len(isolated)} isolated node(s), e.g. node {isolated[0]}")
        n_comp, _ = csgraph.connected_components(W, directed=False)
        if n_comp > 1:
            raise GraphError(f"graph is disconnected: {n_comp} components")
        return cls(W, degrees)


def from_edge_list(edges, n):
    """Undirected graph from ``(i, j, w)`` triples; duplicates are summed."""
    edges = list(edges)
    if not edges:
        raise GraphError("empty edge list")
    arr = np.asarray(edges, dtype=float).reshape(-1, 3)
    i, j, w = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2]
    if np.any(i != arr[:, 0]) or np.any(j != arr[:, 1]):
        raise GraphError("node ids must be integers")
    if i.min() < 0 or j.min() < 0 or max(i.max(), j.max()) >= n:
        raise GraphError(f"node id out of range [0, {n})")
    if np.any(w < 0):
        raise GraphError("negative edge weight")
    if np.any(w == 0):
        raise GraphError("zero edge weight")
    loops = i == j
    # off-diagonal edges are stored in both directions, self-loops once
    rows = np.concatenate([i, j[~loops]])
    cols = np.concatenate([j, i[~loops]])
    vals = np.concatenate([w, w[~loops]])
    return Graph.from_weights(csr_from_triplets(rows, cols, vals, (n, n)))


def gaussian_weight(x_i, x_j, sigma):
    diff = np.asarray(x_i, dtype=float) - np.asarray(x_j, dtype=float)
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma ** 2)))


def knn_gaussian_graph(features, k, sigma):
    """k-nearest-neighbour graph with Gaussian weights, symmetrized by max.

    Neighbours are found with an exact KD-tree query; the node itself is
    excluded.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not np.all(np.isfinite(X)):
        raise GraphError("features contain non-finite values")
    if not 1 <= k < n:
        raise GraphError(f"need 1 <= k < n, got k={k}, n={n}")
    if sigma <= 0:
        raise GraphError("sigma must be positive")
    tree = cKDTree(X)
    # query k+1 so the point itself can be dropped, even among duplicates
    _, idx = tree.query(X, k=k + 1)
    not_self = idx != np.arange(n)[:, None]
    keep = not_self & (np.cumsum(not_self, axis=1) <= k)
    rows = np.repeat(np.arange(n), keep.sum(axis=1))
    cols = idx[keep]
    # recompute squared distances exactly rather than squaring kd-tree output
    diff = X[rows] - X[cols]
    w = np.exp(-np.einsum("ij,ij->i", diff, diff) / (2.0 * sigma ** 2))
    # exp underflow would silently drop an edge
    w = np.maximum(w, np.finfo(float).tiny)
    A = sparse.csr_matrix((w, (rows, cols)), shape=(n, n))
    W = A.maximum(A.T)
    try:
        return Graph.from_weights(W)
    except GraphError as exc:
        raise GraphError(f"{exc}; try a larger k (currently {k})") from None


def sym_normalized_laplacian(g):
    """``I - D^{-1/2} W D^{-1/2}``."""
    if np.any(g.degrees <= 0):
        raise GraphError("zero degree")
    s = 1.0 / np.sqrt(g.degrees)
    Dm = sparse.diags(s)
    L = sparse.identity(g.n, format="csr") - Dm @ g.W @ Dm
    L = canonical_csr(L)
    # exact symmetry, independent of rounding in the two-sided scaling
    return canonical_csr((L + L.T) * 0.5)


def combinatorial_laplacian(g):
    """``D - W``."""
    return canonical_csr(sparse.diags(g.degrees) - g.W)


def random_walk_laplacian(g):
    """``I - D^{-1} W`` (not symmetric in general)."""
    if np.any(g.degrees <= 0):
        raise GraphError("zero degree")
    return canonical_csr(sparse.identity(g.n) - sparse.diags(1.0 / g.degrees) @ g.W)


# ---------------------------------------------------------------- file formats


def read_edge_list(path):
    """Parse ``i j w`` lines; ``#`` comments and an ``n=<count>`` header allowed."""
    path = Path(path)
    edges = []
    n = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("n="):
                n = int(line[2:])
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphError(f"{path}:{lineno}: expected 'i j w'")
            i, j = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
            edges.append((i, j, w))
    if not edges:
        raise GraphError(f"{path}: no edges")
    if n is None:
        n = 1 + max(max(e[0], e[1]) for e in edges)
    return from_edge_list(edges, n)


def write_edge_list(path, g, header=None):
    W = sparse.triu(g.W).tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header:
                fh.write(f"# {line}\n")
        fh.write(f"n={g.n}\n")
        for i, j, w in zip(W.row, W.col, W.data):
            fh.write(f"{i} {j} {w:.17g}\n")


def read_features(path):
    X = np.loadtxt(path, delimiter=",", ndmin=2)
    if not np.all(np.isfinite(X)):
        raise GraphError(f"{path}: non-finite feature values")
    return X


def _read_pnm_header(fh, magic):
    tokens = []
    while len(tokens) < 4:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PNM header")
        line = line.split(b"#")[0]
        tokens.extend(line.split())
    if tokens[0] != magic:
        raise ValueError(f"expected {magic.decode()} image, got {tokens[0].decode()}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError("only 8-bit images are supported")
    return width, height


def read_ppm(path):
    """8-bit binary PPM (P6) as a ``(height, width, 3)`` uint8 array."""
    with open(path, "rb") as fh:
        width, height = _read_pnm_header(fh, b"P6")
        data = fh.read(width * height * 3)
    if len(data) != width * height * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)


def write_ppm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(image.tobytes())


def read_pgm(path):
    """8-bit binary PGM (P5) as a ``(height, width)`` uint8 array."""
    with open(path, "rb") as fh:
        width, height = _read_pnm_header(fh, b"P5")
        data = fh.read(width * height)
    if len(data) != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def write_pgm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(image.tobytes())


def image_features(image, spatial_scale=0.0):
    """Per-pixel ``(r, g, b, s*x, s*y)`` with colours scaled to [0, 1].

    Spatial coordinates are pixel indices divided by the larger image side.
    With ``spatial_scale == 0`` only the colour channels are returned.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    rgb = image.reshape(h * w, -1).astype(float) / 255.0
    if spatial_scale == 0:
        return rgb
    yy, xx = np.mgrid[0:h, 0:w]
    side = float(max(h, w))
    pos = np.column_stack([xx.ravel(), yy.ravel()]) / side * spatial_scale
    return np.hstack([rgb, pos])
