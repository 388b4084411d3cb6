"""Command-line surface: simulate, embed, cluster, isomirror, experiment, ingest.

Flags override values from an optional TOML/JSON config file (keys named
like the flags, underscores for dashes); every run writes a ``manifest.json``
echoing the fully resolved configuration and the library version.  Exit
codes: 0 success, 2 validation error, 3 numerical failure.

Heavy imports happen inside the command handlers so that ``--threads`` can
pin the BLAS thread count before numpy is loaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import NumericalError, ValidationError

__all__ = ["main", "build_parser"]


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} not found")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(path.read_text())
    return json.loads(path.read_text())


class _Resolver:
    """Flag value if given, else config-file value, else default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config
        self.resolved: dict = {}

    def get(self, name: str, default=None):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.config.get(name, default)
        self.resolved[name] = value
        return value

    def flag(self, name: str) -> bool:
        value = bool(getattr(self.args, name, False)) or bool(self.config.get(name, False))
        self.resolved[name] = value
        return value


def _write_manifest(out_dir: Path, command: str, resolved: dict) -> None:
    from . import __version__

    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "config": resolved, "version": __version__}
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(resolver: _Resolver) -> Path:
    out = resolver.get("out")
    if not out:
        raise ValidationError("--out <dir> is required")
    return Path(out)


def _require(value, flag: str):
    if value is None:
        raise ValidationError(f"{flag} is required")
    return value


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    from .experiments import empty_blockmodel, reference_blockmodel
    from .graphs import save_graph
    from .sampling import BlockModelSpec, sample_dmpsbm

    resolver = _Resolver(args, _load_config(args.config))
    out = _out_dir(resolver)
    seed = int(resolver.get("seed", 0))
    n = resolver.get("n")
    if resolver.flag("reference_sbm"):
        spec = reference_blockmodel(int(n) if n is not None else 1000)
    elif resolver.flag("empty"):
        spec = empty_blockmodel(int(_require(n, "--n")))
    else:
        spec = BlockModelSpec.from_file(_require(resolver.get("spec"), "--spec"))
    graph = sample_dmpsbm(spec, seed=seed)
    save_graph(graph, out)
    with open(out / "true_labels.csv", "w", newline="") as handle:
        handle.write("side,block,node,label\n")
        for k, labels in enumerate(spec.z):
            for i, lab in enumerate(labels):
                handle.write(f"left,{k},{i},{int(lab)}\n")
        for t, labels in enumerate(spec.upsilon):
            for i, lab in enumerate(labels):
                handle.write(f"right,{t},{i},{int(lab)}\n")
    (out / "blockmodel.json").write_text(spec.to_json() + "\n")
    _write_manifest(out, "simulate", resolver.resolved)
    print(f"simulated graph: n={graph.n} K={graph.K} T={graph.T} edges={graph.nnz} -> {out}")
    return 0


def _cmd_embed(args) -> int:
    from .embedding import duase, rescale_balanced, save_embedding, select_dimension
    from .graphs import build_unfolded, load_graph

    resolver = _Resolver(args, _load_config(args.config))
    out = _out_dir(resolver)
    graph = load_graph(_require(resolver.get("graph"), "--graph"))
    unfolded = build_unfolded(graph)
    auto = resolver.flag("auto_d")
    d = resolver.get("d")
    if auto:
        d_max = int(resolver.get("d_max", 15))
        probe = min(max(d_max + 1, 10), min(unfolded.rows, unfolded.cols))
        pair_probe = duase(unfolded, probe)
        d = select_dimension(pair_probe.singular_values, d_max=d_max)
        resolver.resolved["d"] = int(d)
    elif d is None:
        raise ValidationError("either --d or --auto-d is required")
    pair = duase(unfolded, int(d))
    if resolver.flag("rescale"):
        pair = rescale_balanced(pair)
    save_embedding(pair, out)
    _write_manifest(out, "embed", resolver.resolved)
    print(f"embedded at d={pair.d} (rescaled={pair.rescaled}) -> {out}")
    return 0


def _cmd_cluster(args) -> int:
    from .clustering import cluster_left, cluster_right
    from .embedding import load_embedding

    resolver = _Resolver(args, _load_config(args.config))
    out = _out_dir(resolver)
    pair = load_embedding(_require(resolver.get("embedding"), "--embedding"))
    side = resolver.get("side", "right")
    g = int(_require(resolver.get("g"), "--g"))
    seed = int(resolver.get("seed", 0))
    restarts = int(resolver.get("restarts", 5))
    pooled = resolver.flag("pooled")
    cluster = cluster_left if side == "left" else cluster_right
    result = cluster(pair, g, seed=seed, restarts=restarts, pooled=pooled)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as handle:
        handle.write("node,layer_or_time,label\n")
        for b, labels in enumerate(result.labels):
            for i, lab in enumerate(labels):
                handle.write(f"{i},{b},{int(lab)}\n")
    summary = [
        {
            "block": b,
            "means": fit.means.tolist(),
            "weights": fit.weights.tolist(),
            "log_likelihood": fit.log_likelihood,
            "converged": fit.converged,
            "collapsed": fit.collapsed,
        }
        for b, fit in enumerate(result.fits)
    ]
    (out / "fit_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "cluster", resolver.resolved)
    print(f"clustered {side} blocks into G={g} components -> {out}")
    return 0


def _cmd_isomirror(args) -> int:
    from .embedding import load_embedding
    from .isomirror import iso_mirror

    resolver = _Resolver(args, _load_config(args.config))
    out = _out_dir(resolver)
    pair = load_embedding(_require(resolver.get("embedding"), "--embedding"))
    side = resolver.get("side", "right")
    c = int(resolver.get("c", 2))
    mode = resolver.get("mode", "direct")
    norm = resolver.get("norm", "spectral")
    blocks = pair.X_hat_blocks if side == "left" else pair.Y_hat_blocks
    result = iso_mirror(blocks, mode=mode, c=c, norm=norm)
    labels = [f"{'k' if side == 'left' else 't'}{b}" for b in range(len(blocks))]
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "distance_matrix": result.D_hat.tolist(),
        "cmds_coords": result.cmds_coords.tolist(),
        "k": result.knn_k,
        "curve": result.curve.tolist(),
        "labels": labels,
        "mode": result.mode,
        "norm": result.norm,
    }
    (out / "isomirror.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    with open(out / "curve.csv", "w", newline="") as handle:
        handle.write("index_label,curve_value\n")
        for label, value in zip(labels, result.curve):
            handle.write(f"{label},{float(value)!r}\n")
    _write_manifest(out, "isomirror", resolver.resolved)
    print(f"iso-mirror over {side} blocks (k={result.knn_k}) -> {out}")
    return 0


def _cmd_experiment(args) -> int:
    from .experiments import run_experiment

    resolver = _Resolver(args, _load_config(args.config))
    out = _out_dir(resolver)
    name = _require(resolver.get("name"), "--name")
    seed = int(resolver.get("seed", 0))
    overrides = {
        "n": resolver.get("n"),
        "reps": resolver.get("reps"),
        "d": resolver.get("d"),
        "c": resolver.get("c"),
        "mode": resolver.get("mode"),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    for key in ("n", "reps", "d", "c"):
        if key in overrides:
            overrides[key] = int(overrides[key])
    report = run_experiment(name, seed=seed, **overrides)
    report.write(out)
    _write_manifest(out, "experiment", resolver.resolved)
    for line in report.summary_lines():
        print(line)
    return 0


def _cmd_ingest(args) -> int:
    from .graphs import EventTable, ingest_events, parse_timestamp, save_graph

    resolver = _Resolver(args, _load_config(args.config))
    out = _out_dir(resolver)
    table = EventTable.from_csv(_require(resolver.get("events"), "--events"))
    edges_raw = _require(resolver.get("bin_edges"), "--bin-edges")
    if isinstance(edges_raw, str):
        edges = [x.strip() for x in edges_raw.split(",") if x.strip()]
    else:
        edges = list(edges_raw)
    if len(edges) < 2:
        raise ValidationError("--bin-edges needs at least two edges")
    stamps = [parse_timestamp(e) for e in edges]
    bins = list(zip(stamps, stamps[1:]))
    layers_raw = resolver.get("layers")
    layer_order = None
    if layers_raw:
        layer_order = (
            [x.strip() for x in layers_raw.split(",")] if isinstance(layers_raw, str) else list(layers_raw)
        )
    strict = not resolver.flag("no_strict")
    result = ingest_events(table, bins, layer_order=layer_order, strict=strict)
    save_graph(result.graph, out)
    resolver.resolved.update(
        {
            "dropped_out_of_range": result.dropped_out_of_range,
            "dropped_self_loops": result.dropped_self_loops,
            "n_events": len(table),
        }
    )
    _write_manifest(out, "ingest", resolver.resolved)
    print(
        f"ingested {len(table)} events -> n={result.graph.n} K={result.graph.K} "
        f"T={result.graph.T} (dropped: {result.dropped_out_of_range} out-of-range, "
        f"{result.dropped_self_loops} self loops) -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duase",
        description="Doubly unfolded adjacency spectral embedding for dynamic multiplex graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--config", type=str, default=None, help="TOML/JSON config file; flags override")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap (0 = auto)")

    p = sub.add_parser("simulate", help="sample a blockmodel graph")
    common(p)
    p.add_argument("--spec", type=str, default=None, help="blockmodel JSON file")
    p.add_argument("--reference-sbm", action="store_true", dest="reference_sbm",
                   help="use the built-in 4-community reference blockmodel")
    p.add_argument("--empty", action="store_true", help="use an edge-free single-community model")
    p.add_argument("--n", type=int, default=None, help="node count for built-in models")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("embed", help="embed a saved graph")
    common(p)
    p.add_argument("--graph", type=str, default=None, help="graph directory or manifest")
    p.add_argument("--d", type=int, default=None, help="embedding dimension")
    p.add_argument("--auto-d", action="store_true", dest="auto_d",
                   help="pick d by the profile-likelihood elbow")
    p.add_argument("--d-max", type=int, default=None, dest="d_max",
                   help="candidate budget for --auto-d (default 15)")
    p.add_argument("--rescale", action="store_true", help="balance left/right embedding scales")
    p.set_defaults(handler=_cmd_embed)

    p = sub.add_parser("cluster", help="GMM-cluster embedding blocks")
    common(p)
    p.add_argument("--embedding", type=str, default=None, help="embedding directory")
    p.add_argument("--side", choices=("left", "right"), default=None)
    p.add_argument("--g", type=int, default=None, help="number of mixture components")
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--pooled", action="store_true", help="one GMM on the stacked blocks")
    p.set_defaults(handler=_cmd_cluster)

    p = sub.add_parser("isomirror", help="iso-mirror curve of embedding blocks")
    common(p)
    p.add_argument("--embedding", type=str, default=None, help="embedding directory")
    p.add_argument("--side", choices=("left", "right"), default=None)
    p.add_argument("--c", type=int, default=None, help="CMDS dimension (default 2)")
    p.add_argument("--mode", choices=("direct", "procrustes"), default=None)
    p.add_argument("--norm", choices=("spectral", "frobenius"), default=None)
    p.set_defaults(handler=_cmd_isomirror)

    p = sub.add_parser("experiment", help="run a named end-to-end experiment")
    common(p)
    p.add_argument("--name", choices=("sbm-clusters", "error-scaling", "isomirror-sbm"), default=None)
    p.add_argument("--n", type=int, default=None, help="override node count")
    p.add_argument("--reps", type=int, default=None, help="override replicate count")
    p.add_argument("--d", type=int, default=None, help="override embedding dimension")
    p.add_argument("--c", type=int, default=None, help="override CMDS dimension")
    p.add_argument("--mode", choices=("direct", "procrustes"), default=None)
    p.set_defaults(handler=_cmd_experiment)

    p = sub.add_parser("ingest", help="bin an event CSV into a graph")
    common(p)
    p.add_argument("--events", type=str, default=None, help="CSV with source,target,layer,timestamp")
    p.add_argument("--bin-edges", type=str, default=None, dest="bin_edges",
                   help="comma-separated bin edges (epoch seconds or YYYY-MM-DD)")
    p.add_argument("--layers", type=str, default=None, help="comma-separated layer order")
    p.add_argument("--no-strict", action="store_true", dest="no_strict",
                   help="first-appearance indexing and lenient layer handling")
    p.set_defaults(handler=_cmd_ingest)

    return parser


def _pin_threads(args: argparse.Namespace) -> None:
    threads = getattr(args, "threads", None)
    if threads and threads > 0 and "numpy" not in sys.modules:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(threads))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _pin_threads(args)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
