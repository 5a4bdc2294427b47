"""Command-line interface: ``segment``, ``sweep``, ``check`` and ``gen-sbm``.

Every flag mirrors a key of an optional JSON config (``--config``); flags
given on the command line override values from the file.
"""
import argparse
from dataclasses import dataclass
import json
import logging
import math
from pathlib import Path
import sys
import time

import numpy as np

from . import bench, fw
from . import graph as gr
from . import model as mdl
from . import pde

log = logging.getLogger("gfwseg")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2

NETWORK_DEFAULTS = {"eps": 50.0, "omega0": 1000.0, "pde_omega0": 100.0, "mu": 100.0, "k_eig": 100}
IMAGE_DEFAULTS = {"eps": 0.1, "omega0": 1e5, "pde_omega0": 1e5, "mu": 0.1, "k_eig": 6}

DEFAULTS = {
    "input": None,
    "image": None,
    "scribbles": None,
    "truth": None,
    "n": None,
    "K": None,
    "avg_degree": 6.0,
    "mixing": 0.1,
    "solver": ["gfw"],
    "eps": None,
    "omega0": None,
    "pde_omega0": None,
    "sigma": 0.1,
    "knn_k": 10,
    "spatial_scale": 0.0,
    "k_eig": None,
    "tau": 0.1,
    "mu": None,
    "c": None,
    "pde_max_iter": 500,
    "max_iter": 30,
    "fidelity_frac": 1.0 / 3.0,
    "repeats": 1,
    "seed": 0,
    "out_dir": "out",
    "exclude_fidelity": False,
    "timing": True,
    "eps_grid": None,
    "omega0_grid": None,
    "classes": None,
}


class InputError(ValueError):
    pass


# --------------------------------------------------------------------- config


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _solvers(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_source_flags(p):
    p.add_argument("--input", help="edge list (i j [w] per line) or feature CSV")
    p.add_argument("--image", help="8-bit binary PPM image")
    p.add_argument("--scribbles", help="PGM label map, 255 = unlabelled")
    p.add_argument("--truth", help="ground-truth labels: text file, or PGM for images")
    p.add_argument("--n", type=int, help="SBM node count (synthetic input)")
    p.add_argument("--K", type=int, help="SBM community count")
    p.add_argument("--avg-degree", type=float, dest="avg_degree")
    p.add_argument("--mixing", type=float)
    p.add_argument("--sigma", type=float, help="Gaussian kernel width for k-NN graphs")
    p.add_argument("--knn-k", type=int, dest="knn_k")
    p.add_argument("--spatial-scale", type=float, dest="spatial_scale")
    p.add_argument("--seed", type=int)


def _add_model_flags(p):
    p.add_argument("--eps", type=float)
    p.add_argument("--omega0", type=float)
    p.add_argument("--fidelity-frac", type=float, dest="fidelity_frac")


def _add_run_flags(p):
    p.add_argument("--solver", type=_solvers, help="comma list of gfw,osfw,fw,cs,mbo")
    p.add_argument("--pde-omega0", type=float, dest="pde_omega0")
    p.add_argument("--k-eig", type=int, dest="k_eig")
    p.add_argument("--tau", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--pde-max-iter", type=int, dest="pde_max_iter")
    p.add_argument("--repeats", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--exclude-fidelity", action="store_const", const=True, dest="exclude_fidelity")
    p.add_argument("--no-timings", action="store_const", const=False, dest="timing",
                   help="leave time columns empty so outputs are byte-reproducible")


def build_parser():
    parser = argparse.ArgumentParser(prog="gfwseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="segment one dataset with one or more solvers")
    sweep = sub.add_parser("sweep", help="grid over eps and omega0")
    check = sub.add_parser("check", help="print spectral constants and thresholds")
    gen = sub.add_parser("gen-sbm", help="write a planted-partition edge list and labels")

    for p in (seg, sweep, check, gen):
        p.add_argument("--config", help="JSON file whose keys mirror the flags")
        _add_source_flags(p)
    for p in (seg, sweep, check):
        _add_model_flags(p)
    for p in (seg, sweep):
        _add_run_flags(p)
    sweep.add_argument("--eps-grid", type=_floats, dest="eps_grid")
    sweep.add_argument("--omega0-grid", type=_floats, dest="omega0_grid")
    check.add_argument("--classes", type=int, help="class count when no --truth is given")
    gen.add_argument("--out-dir", dest="out_dir")
    return parser


def load_config(args):
    """Defaults, then the JSON file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise InputError(f"{path}: expected a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise InputError(f"{path}: unknown key(s) {', '.join(sorted(unknown))}")
        cfg.update(data)
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            cfg[key] = value
    if isinstance(cfg["solver"], str):
        cfg["solver"] = _solvers(cfg["solver"])
    family = IMAGE_DEFAULTS if cfg["image"] else NETWORK_DEFAULTS
    for key, value in family.items():
        if cfg[key] is None:
            cfg[key] = value
    return cfg


# -------------------------------------------------------------------- inputs


@dataclass
class Dataset:
    name: str
    graph: gr.Graph
    truth: np.ndarray
    build_time: float
    fidelity: mdl.Fidelity = None
    shape: tuple = None  # image height, width
    synthetic: bool = False


def _existing(path, what):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{what} not found: {path}")
    return path


def read_labels(path):
    path = _existing(path, "label file")
    try:
        labels = np.loadtxt(path, dtype=np.int64, comments="#", ndmin=1)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if labels.ndim != 1 or labels.size == 0 or labels.min() < 0:
        raise InputError(f"{path}: expected one nonnegative class id per line")
    return labels


def write_labels(path, labels):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("".join(f"{int(x)}\n" for x in labels))


def load_dataset(cfg):
    t0 = time.perf_counter()
    if cfg["image"]:
        if not cfg["scribbles"]:
            raise InputError("--image needs --scribbles")
        image = gr.read_ppm(_existing(cfg["image"], "image"))
        scribbles = gr.read_pgm(_existing(cfg["scribbles"], "scribble map"))
        truth_map = gr.read_pgm(_existing(cfg["truth"], "ground-truth map")) if cfg["truth"] else None
        params = bench.ImageParams(cfg["knn_k"], cfg["sigma"], cfg["omega0"], cfg["spatial_scale"])
        g, fid, truth = bench.image_pipeline(image, scribbles, params, truth_map)
        return Dataset(Path(cfg["image"]).stem, g, truth, time.perf_counter() - t0,
                       fidelity=fid, shape=image.shape[:2])
    if cfg["input"]:
        path = _existing(cfg["input"], "input")
        if path.suffix.lower() == ".csv":
            g = gr.knn_gaussian_graph(gr.read_features(path), cfg["knn_k"], cfg["sigma"])
        else:
            g = gr.read_edge_list(path)
        truth = read_labels(cfg["truth"]) if cfg["truth"] else None
        if truth is not None and len(truth) != g.n:
            raise InputError(f"{cfg['truth']}: {len(truth)} labels for {g.n} nodes")
        return Dataset(path.stem, g, truth, time.perf_counter() - t0)
    if cfg["n"] is not None:
        spec = bench.SbmSpec(cfg["n"], cfg["K"] or 2, cfg["avg_degree"], cfg["mixing"], cfg["seed"])
        g, truth = bench.sbm_generate(spec)
        name = f"sbm-{spec.n}-{spec.K}-{spec.mixing:g}"
        return Dataset(name, g, truth, time.perf_counter() - t0, synthetic=True)
    raise InputError("no input: give --input, --image with --scribbles, or --n/--K for an SBM")


def experiment(cfg, data):
    if data.truth is None and data.fidelity is None:
        raise InputError("networks need --truth labels to sample fidelity and score accuracy")
    pde_opts = pde.PdeOptions(k_eig=cfg["k_eig"], tau=cfg["tau"], mu=cfg["mu"], c=cfg["c"],
                              max_iter=cfg["pde_max_iter"], seed=cfg["seed"])
    return bench.ExperimentConfig(
        dataset=data.name, graph=data.graph, truth=data.truth, solvers=tuple(cfg["solver"]),
        repeats=cfg["repeats"], seed=cfg["seed"], eps=cfg["eps"], omega0=cfg["omega0"],
        pde_omega0=cfg["pde_omega0"], fidelity_frac=cfg["fidelity_frac"], fidelity=data.fidelity,
        pde_options=pde_opts, fw_options=fw.FwOptions(max_iter=cfg["max_iter"]),
        exclude_fidelity=cfg["exclude_fidelity"], build_time=data.build_time,
    )


# ------------------------------------------------------------------- commands


def _out_dir(cfg):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_summary(results, timing):
    print(f"{'solver':<8}{'accuracy %':>12}{'solve s':>12}{'iters':>8}  status")
    for res in results:
        if res.repeat != "mean":
            continue
        acc = "-" if math.isnan(res.accuracy) else f"{res.accuracy:.2f}"
        t = f"{res.wall_time:.4f}" if timing and not math.isnan(res.wall_time) else "-"
        it = "-" if math.isnan(res.iterations) else f"{res.iterations:g}"
        print(f"{res.solver:<8}{acc:>12}{t:>12}{it:>8}  {res.status}")


def _failed(results):
    return any(r.status != "ok" for r in results)


def cmd_segment(cfg):
    data = load_dataset(cfg)
    ecfg = experiment(cfg, data)
    results = bench.run_experiment(ecfg)
    out = _out_dir(cfg)
    bench.write_csv(out / "results.csv", bench.RESULT_COLUMNS,
                    bench.results_table(results, ecfg, cfg["timing"]),
                    bench.header_lines(ecfg, data.synthetic))
    for res in results:
        if res.repeat != 0 or res.labels is None:
            continue
        write_labels(out / f"labels_{res.solver}.txt", res.labels)
        if data.shape is not None:
            gr.write_pgm(out / f"labels_{res.solver}.pgm", res.labels.reshape(data.shape))
    _print_summary(results, cfg["timing"])
    return EXIT_SOLVER if _failed(results) else EXIT_OK


def cmd_sweep(cfg):
    eps_grid = cfg["eps_grid"] or [cfg["eps"]]
    omega_grid = cfg["omega0_grid"] or [cfg["omega0"]]
    if not eps_grid or not omega_grid:
        raise InputError("empty sweep grid")
    solvers = [s for s in cfg["solver"] if s not in bench.PDE_SOLVERS]
    if not solvers:
        raise InputError("sweep needs at least one Frank-Wolfe solver (gfw, osfw, fw)")
    data = load_dataset(cfg)
    rows, failed, ecfg = [], False, None
    for omega0 in omega_grid:
        ecfg = experiment({**cfg, "solver": solvers, "omega0": omega0}, data)
        results = [r for r in bench.run_experiment(ecfg, eps_values=eps_grid) if r.repeat != "mean"]
        failed |= _failed(results)
        rows.extend(bench.sweep_table(results, ecfg, cfg["timing"]))
    out = _out_dir(cfg)
    comments = bench.header_lines(ecfg, data.synthetic)
    comments.append("grid eps=" + ",".join(f"{e:g}" for e in eps_grid)
                    + " omega0=" + ",".join(f"{w:g}" for w in omega_grid))
    bench.write_csv(out / "sweep.csv", bench.SWEEP_COLUMNS, rows, comments)
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return EXIT_SOLVER if failed else EXIT_OK


def check_report(cfg):
    """Spectral constants of the configured problem as ``(label, value)`` pairs."""
    data = load_dataset(cfg)
    L_s = gr.sym_normalized_laplacian(data.graph)
    n = data.graph.n
    if data.fidelity is not None:
        fid = bench.with_omega0(data.fidelity, cfg["omega0"])
    elif data.truth is not None:
        fid = bench.sample_fidelity(data.truth, cfg["fidelity_frac"], cfg["omega0"], cfg["seed"])
    else:
        K = cfg["classes"] or 2
        fid = mdl.Fidelity.from_labels(n, K, [], [], cfg["omega0"])
    m = mdl.PenaltyModel(L_s, fid, cfg["eps"])
    e_bar, e_tilde = mdl.eps_bar(m), mdl.eps_tilde(m)
    binary = cfg["eps"] <= e_bar
    one_shot = cfg["eps"] <= min(e_bar, e_tilde)
    return [
        ("n", n),
        ("K", m.K),
        ("fidelity nodes", int(fid.labeled.sum())),
        ("sparsity nnz(L_s)/n^2", L_s.nnz / float(n) ** 2),
        ("lambda_max(L_s)", m.lambda_max_laplacian),
        ("eps_bar", e_bar),
        ("eps_tilde", e_tilde),
        ("Lipschitz bound", mdl.lipschitz_bound(m)),
        ("eps", cfg["eps"]),
        ("binary minimizers", "guaranteed" if binary else "no binary guarantee"),
        ("one-shot", "guaranteed" if one_shot else "no one-shot guarantee"),
    ]


def cmd_check(cfg):
    for label, value in check_report(cfg):
        text = f"{value:.6g}" if isinstance(value, float) else str(value)
        print(f"{label:<24}{text}")
    return EXIT_OK


def cmd_gen_sbm(cfg):
    if cfg["n"] is None or cfg["K"] is None:
        raise InputError("gen-sbm needs --n and --K")
    spec = bench.SbmSpec(cfg["n"], cfg["K"], cfg["avg_degree"], cfg["mixing"], cfg["seed"])
    g, labels = bench.sbm_generate(spec)
    out = _out_dir(cfg)
    stem = f"sbm_{spec.n}_{spec.K}_{spec.mixing:g}_{spec.seed}"
    gr.write_edge_list(out / f"{stem}.edges", g, header=[
        f"planted partition n={spec.n} K={spec.K} avg_degree={spec.avg_degree:g} "
        f"mixing={spec.mixing:g} seed={spec.seed}",
        bench.SBM_NOTE,
    ])
    write_labels(out / f"{stem}.labels", labels)
    mean_degree = g.W.nnz / g.n
    print(f"wrote {out / (stem + '.edges')} ({g.W.nnz // 2} edges, mean degree {mean_degree:.2f})")
    return EXIT_OK


COMMANDS = {"segment": cmd_segment, "sweep": cmd_sweep, "check": cmd_check, "gen-sbm": cmd_gen_sbm}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (InputError, bench.BenchError, gr.GraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
