"""Synthetic benchmarks, fidelity sampling, metrics and the experiment harness."""
from dataclasses import dataclass, field, replace
import csv
import io
import logging
import math
import time

import numpy as np

from . import fw
from . import model as mdl
from . import pde
from .graph import Graph, GraphError, image_features, knn_gaussian_graph, sym_normalized_laplacian
from .linalg import ConvergenceError, csr_from_triplets

log = logging.getLogger(__name__)

SOLVERS = ("gfw", "osfw", "fw", "cs", "mbo")
PDE_SOLVERS = ("cs", "mbo")
SEED_STRIDE = 7919
MAX_SBM_ATTEMPTS = 10
UNLABELED = 255

RESULT_COLUMNS = [
    "dataset", "solver", "repeat", "n", "K", "eps", "omega0", "k_eig",
    "build_time_s", "eig_time_s", "solve_time_s", "iterations", "accuracy_pct", "status",
]
SWEEP_COLUMNS = [
    "dataset", "solver", "repeat", "eps", "omega0", "iterations", "one_shot",
    "accuracy_pct", "solve_time_s", "log10_time", "status",
]

SBM_NOTE = "synthetic graphs use equal-size planted communities (sizes differ by at most 1)"
REPEAT_NOTE = "per repeat the fidelity sample and the random PDE start are redrawn; the graph is fixed"


class BenchError(ValueError):
    pass


# ----------------------------------------------------------------- generators


@dataclass(frozen=True)
class SbmSpec:
    n: int
    K: int
    avg_degree: float
    mixing: float
    seed: int = 0

    def __post_init__(self):
        if not self.n >= self.K >= 2:
            raise BenchError(f"need n >= K >= 2, got n={self.n}, K={self.K}")
        if not 0 < self.avg_degree < self.n:
            raise BenchError("avg_degree must lie in (0, n)")
        if not 0 <= self.mixing < 1:
            raise BenchError("mixing must lie in [0, 1)")

    def community_sizes(self):
        base, extra = divmod(self.n, self.K)
        return np.array([base + (c < extra) for c in range(self.K)])

    def probabilities(self):
        """Intra and inter edge probabilities ``(p, q)``.

        A node in a community of mean size ``s`` then expects
        ``(1 - mixing) * avg_degree`` edges inside and ``mixing * avg_degree``
        edges outside.
        """
        s = self.n / self.K
        if s < 2:
            raise BenchError("communities need at least two nodes")
        p = (1.0 - self.mixing) * self.avg_degree / (s - 1.0)
        q = self.mixing * self.avg_degree / (self.n - s)
        if p > 1 or q > 1:
            raise BenchError(f"infeasible edge probabilities p={p:.3g}, q={q:.3g}")
        return p, q


def _triu_pair(t, s):
    """Decode linear indices of the strict upper triangle of an ``s x s`` block."""
    t = np.asarray(t, dtype=np.int64)
    b = 2 * s - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * t)) / 2).astype(np.int64)
    start = i * (b - i) // 2
    # repair float rounding at row boundaries
    over = start > t
    i[over] -= 1
    start = i * (b - i) // 2
    under = t - start >= s - 1 - i
    i[under] += 1
    start = i * (b - i) // 2
    return i, i + 1 + (t - start)


def _draw(rng, n_pairs, prob):
    count = rng.binomial(n_pairs, prob) if prob > 0 else 0
    return rng.choice(n_pairs, size=count, replace=False) if count else np.zeros(0, np.int64)


def _sbm_edges(spec, rng):
    p, q = spec.probabilities()
    sizes = spec.community_sizes()
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rows, cols = [], []
    for a in range(spec.K):
        s = int(sizes[a])
        t = _draw(rng, s * (s - 1) // 2, p)
        i, j = _triu_pair(t, s)
        rows.append(i + offsets[a])
        cols.append(j + offsets[a])
        for b in range(a + 1, spec.K):
            sb = int(sizes[b])
            t = _draw(rng, s * sb, q)
            rows.append(t // sb + offsets[a])
            cols.append(t % sb + offsets[b])
    return np.concatenate(rows), np.concatenate(cols)


def sbm_generate(spec):
    """Planted-partition graph with unit weights and its community labels.

    A disconnected draw is retried with ``seed + 1``, up to ten attempts.
    """
    labels = np.repeat(np.arange(spec.K), spec.community_sizes())
    last = None
    for attempt in range(MAX_SBM_ATTEMPTS):
        rng = np.random.default_rng(spec.seed + attempt)
        i, j = _sbm_edges(spec, rng)
        W = csr_from_triplets(
            np.concatenate([i, j]), np.concatenate([j, i]), np.ones(2 * len(i)), (spec.n, spec.n)
        )
        try:
            return Graph.from_weights(W), labels
        except GraphError as exc:
            last = exc
            log.info("sbm seed %d rejected: %s", spec.seed + attempt, exc)
    raise BenchError(f"no connected SBM sample after {MAX_SBM_ATTEMPTS} attempts ({last})")


# ------------------------------------------------------------------ fidelity


def sample_fidelity(labels, fraction, omega0, seed, K=None):
    """Stratified sample: ``ceil(fraction * size)`` known nodes per class."""
    labels = np.asarray(labels, dtype=np.int64)
    if not 0 < fraction <= 1:
        raise BenchError("fidelity fraction must lie in (0, 1]")
    K = int(labels.max()) + 1 if K is None else K
    rng = np.random.default_rng(seed)
    nodes = []
    for c in range(K):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            raise BenchError(f"class {c} is empty")
        # guard against products like 0.1 * 30 = 3.0000000000000004
        m = math.ceil(round(fraction * len(members), 9))
        nodes.append(np.sort(rng.choice(members, size=m, replace=False)))
    nodes = np.concatenate(nodes)
    return mdl.Fidelity.from_labels(len(labels), K, nodes, labels[nodes], omega0)


def with_omega0(fid, omega0):
    """Same known nodes and labels with a different fidelity weight."""
    omega = np.where(fid.labeled, float(omega0), 0.0)
    return mdl.Fidelity(fid.U_hat, omega, float(omega0))


# ------------------------------------------------------------------- metrics


def _check_pair(predicted, truth):
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise BenchError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    return predicted, truth


def accuracy(predicted, truth, mask=None):
    """Percentage of correctly labelled nodes, optionally restricted to ``mask``."""
    predicted, truth = _check_pair(predicted, truth)
    if mask is not None:
        predicted, truth = predicted[mask], truth[mask]
    if len(truth) == 0:
        raise BenchError("no nodes to score")
    return 100.0 * float(np.mean(predicted == truth))


def confusion(predicted, truth, K=None):
    """``C[t, p]`` counts nodes of true class ``t`` predicted as ``p``."""
    predicted, truth = _check_pair(predicted, truth)
    if K is None:
        K = int(max(predicted.max(), truth.max())) + 1
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (truth, predicted), 1)
    return C


# --------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentConfig:
    """One dataset and the solvers to compare on it.

    ``fidelity`` fixes the known nodes (image scribbles); otherwise a
    stratified sample of ``fidelity_frac`` is redrawn every repeat.
    """

    dataset: str
    graph: Graph
    truth: np.ndarray
    solvers: tuple = ("gfw",)
    repeats: int = 1
    seed: int = 0
    eps: float = 50.0
    omega0: float = 1000.0
    pde_omega0: float = 100.0
    fidelity_frac: float = 1.0 / 3.0
    fidelity: mdl.Fidelity = None
    pde_options: pde.PdeOptions = pde.PdeOptions()
    fw_options: fw.FwOptions = fw.FwOptions()
    exclude_fidelity: bool = False
    build_time: float = 0.0
    K: int = None

    def __post_init__(self):
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise BenchError(f"unknown solver(s): {', '.join(sorted(unknown))}")
        if not self.solvers:
            raise BenchError("no solvers selected")
        if self.repeats < 1:
            raise BenchError("repeats must be positive")
        if self.eps <= 0 or self.omega0 < 0 or self.pde_omega0 < 0:
            raise BenchError("eps must be positive and omega0 nonnegative")

    @property
    def n_classes(self):
        if self.K is not None:
            return self.K
        if self.fidelity is not None:
            return self.fidelity.K
        return int(np.max(self.truth)) + 1


@dataclass
class ExperimentResult:
    solver: str
    repeat: object  # int, or "mean"
    accuracy: float
    wall_time: float
    iterations: float
    confusion: np.ndarray = None
    params: dict = field(default_factory=dict)
    eig_time: float = None
    one_shot: bool = False
    status: str = "ok"
    labels: np.ndarray = None


def repeat_seed(master, repeat):
    return master + SEED_STRIDE * repeat


def _solve(name, cfg, L_s, fid, eig, seed, eps=None):
    if name in PDE_SOLVERS:
        opts = replace(cfg.pde_options, seed=seed)
        pfid = with_omega0(fid, cfg.pde_omega0)
        run = pde.cs_solve if name == "cs" else pde.mbo_solve
        return run(L_s, pfid, opts, eig=eig)
    m = mdl.PenaltyModel(L_s, fid, cfg.eps if eps is None else eps)
    if name == "gfw":
        return fw.gfw_solve(m, opts=cfg.fw_options)
    if name == "fw":
        return fw.fw_solve(m, opts=cfg.fw_options)
    return fw.osfw_solve(m)


def _fidelity_for(cfg, seed):
    if cfg.fidelity is not None:
        return with_omega0(cfg.fidelity, cfg.omega0)
    return sample_fidelity(cfg.truth, cfg.fidelity_frac, cfg.omega0, seed, K=cfg.n_classes)


def _eigenpairs(cfg, L_s):
    """Eigenpairs shared by the PDE solvers, or the failure message."""
    if not any(s in PDE_SOLVERS for s in cfg.solvers):
        return None, None, None
    t0 = time.perf_counter()
    try:
        eig = pde.laplacian_eigenpairs(L_s, cfg.pde_options)
    except (ValueError, ConvergenceError) as exc:
        return None, None, f"error: {type(exc).__name__}: {exc}"
    return eig, time.perf_counter() - t0, None


def _score(cfg, labels, fid):
    if cfg.truth is None:
        return math.nan, None
    mask = ~fid.labeled if cfg.exclude_fidelity else None
    return accuracy(labels, cfg.truth, mask), confusion(labels, cfg.truth, cfg.n_classes)


def run_experiment(cfg, eps_values=None):
    """Run every solver ``cfg.repeats`` times; returns per-run results then means.

    ``eps_values`` overrides ``cfg.eps`` for the Frank-Wolfe solvers with a
    list of penalty parameters (one result per value per repeat).
    """
    L_s = sym_normalized_laplacian(cfg.graph)
    eig, eig_time, eig_error = _eigenpairs(cfg, L_s)
    results = []
    for r in range(cfg.repeats):
        seed = repeat_seed(cfg.seed, r)
        fid = _fidelity_for(cfg, seed)
        for name in cfg.solvers:
            is_pde = name in PDE_SOLVERS
            for eps in ([None] if is_pde or eps_values is None else eps_values):
                params = {
                    "eps": None if is_pde else (cfg.eps if eps is None else eps),
                    "omega0": cfg.pde_omega0 if is_pde else cfg.omega0,
                    "k_eig": cfg.pde_options.k_eig if is_pde else None,
                }
                res = ExperimentResult(name, r, math.nan, math.nan, math.nan, params=params,
                                       eig_time=eig_time if is_pde else None)
                results.append(res)
                if is_pde and eig_error:
                    res.status = eig_error
                    continue
                try:
                    rep = _solve(name, cfg, L_s, fid, eig, seed + 1, eps)
                except (ValueError, ArithmeticError, RuntimeError) as exc:
                    res.status = f"error: {type(exc).__name__}: {exc}"
                    log.warning("%s repeat %d failed: %s", name, r, exc)
                    continue
                res.labels = rep.labels
                res.accuracy, res.confusion = _score(cfg, rep.labels, fid)
                res.wall_time = rep.wall_time
                res.iterations = rep.iterations
                res.one_shot = rep.one_shot
    return results + mean_results(results)


def mean_results(results):
    """One mean row per solver (and penalty parameter) over successful runs."""
    groups = {}
    for res in results:
        if res.repeat == "mean":
            continue
        groups.setdefault((res.solver, res.params.get("eps")), []).append(res)
    means = []
    for (solver, _), rows in groups.items():
        ok = [x for x in rows if x.status == "ok"]
        mean = ExperimentResult(solver, "mean", math.nan, math.nan, math.nan,
                                params=dict(rows[0].params), eig_time=rows[0].eig_time)
        if ok:
            mean.accuracy = float(np.mean([x.accuracy for x in ok]))
            mean.wall_time = float(np.mean([x.wall_time for x in ok]))
            mean.iterations = float(np.mean([x.iterations for x in ok]))
            mean.one_shot = all(x.one_shot for x in ok)
            mean.confusion = sum(x.confusion for x in ok)
        mean.status = "ok" if len(ok) == len(rows) else f"{len(ok)}/{len(rows)} ok"
        means.append(mean)
    return means


def _sort_key(res):
    eps = res.params.get("eps")
    return (
        res.solver,
        math.inf if eps is None else eps,
        math.inf if res.repeat == "mean" else res.repeat,
    )


# ----------------------------------------------------------------------- CSV


def _fmt(x, spec):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, str):
        return x
    return format(x, spec)


def _time(x, timing):
    return _fmt(x, ".6f") if timing else ""


def results_table(results, cfg, timing=True):
    """Rows (as lists of strings) in the results CSV column order."""
    rows = []
    for res in sorted(results, key=_sort_key):
        p = res.params
        rows.append([
            cfg.dataset, res.solver, str(res.repeat), str(cfg.graph.n), str(cfg.n_classes),
            _fmt(p.get("eps"), "g"), _fmt(p.get("omega0"), "g"), _fmt(p.get("k_eig"), "d"),
            _time(cfg.build_time, timing), _time(res.eig_time, timing),
            _time(res.wall_time, timing),
            _fmt(res.iterations, "g"), _fmt(res.accuracy, ".4f"), res.status,
        ])
    return rows


def sweep_table(results, cfg, timing=True):
    rows = []
    for res in sorted(results, key=_sort_key):
        p = res.params
        t = res.wall_time
        log_t = math.log10(t) if timing and t and t > 0 else None
        rows.append([
            cfg.dataset, res.solver, str(res.repeat), _fmt(p.get("eps"), "g"),
            _fmt(p.get("omega0"), "g"), _fmt(res.iterations, "g"),
            str(bool(res.one_shot)).lower(), _fmt(res.accuracy, ".4f"),
            _time(t, timing), _fmt(log_t, ".6f"), res.status,
        ])
    return rows


def header_lines(cfg, synthetic):
    lines = [REPEAT_NOTE]
    if synthetic:
        lines.insert(0, SBM_NOTE)
    if cfg.exclude_fidelity:
        lines.append("accuracy excludes fidelity nodes")
    else:
        lines.append("accuracy counts all nodes, fidelity nodes included")
    return lines


def write_csv(path, columns, rows, comments=()):
    """CSV with ``#`` comment lines before the header; ``\\n`` line endings."""
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# -------------------------------------------------------------------- images


@dataclass(frozen=True)
class ImageParams:
    knn_k: int = 10
    sigma: float = 0.1
    omega0: float = 1e5
    spatial_scale: float = 0.0


def image_pipeline(image, scribbles, params=ImageParams(), truth_map=None):
    """k-NN graph over pixels, fidelity from scribbles and optional ground truth.

    Label maps use 255 for unlabelled pixels and ``0..K-1`` for classes.
    """
    image = np.asarray(image)
    scribbles = np.asarray(scribbles)
    if scribbles.shape != image.shape[:2]:
        raise BenchError(f"scribbles are {scribbles.shape}, image is {image.shape[:2]}")
    flat = scribbles.ravel().astype(np.int64)
    marked = flat != UNLABELED
    present = np.unique(flat[marked])
    if len(present) == 0:
        raise BenchError("no scribbled pixels")
    K = int(present.max()) + 1
    missing = sorted(set(range(K)) - set(present.tolist()))
    if missing:
        raise BenchError(f"class(es) {missing} have no scribbles")
    if K < 2:
        raise BenchError("need at least two scribbled classes")
    g = knn_gaussian_graph(image_features(image, params.spatial_scale), params.knn_k, params.sigma)
    nodes = np.flatnonzero(marked)
    fid = mdl.Fidelity.from_labels(g.n, K, nodes, flat[nodes], params.omega0)
    truth = None
    if truth_map is not None:
        truth_map = np.asarray(truth_map)
        if truth_map.shape != scribbles.shape:
            raise BenchError("ground-truth map and scribbles differ in size")
        truth = truth_map.ravel().astype(np.int64)
        if np.any(truth >= K):
            raise BenchError("ground truth has classes without scribbles or unlabelled pixels")
    return g, fid, truth
