"""Dynamic multiplex graph container, double unfolding, and event ingestion.

A dynamic multiplex graph stores one binary ``n x n`` adjacency matrix per
(layer, time) pair.  The double unfolding arranges the ``K*T`` matrices into
a single ``nK x nT`` block matrix, layers stacked vertically and time points
horizontally; every spectral routine in :mod:`duase.embedding` operates on
that matrix.
"""

from __future__ import annotations

import csv
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

__all__ = [
    "DynamicMultiplexGraph",
    "UnfoldedMatrix",
    "EventTable",
    "IngestResult",
    "build_unfolded",
    "unstack_left",
    "unstack_right",
    "restack",
    "ingest_events",
    "parse_timestamp",
    "save_graph",
    "load_graph",
]

EDGE_FILE = "edges.csv"
MANIFEST_FILE = "graph.json"


def _as_binary_csr(block, n: int) -> sp.csr_array:
    """Normalize an adjacency block to a canonical binary int8 CSR array."""
    if sp.issparse(block):
        mat = sp.csr_array(block)
    else:
        mat = sp.csr_array(np.asarray(block))
    if mat.shape != (n, n):
        raise ValidationError(f"adjacency block has shape {mat.shape}, expected {(n, n)}")
    mat.sum_duplicates()
    mat.eliminate_zeros()
    if mat.nnz and not np.all(mat.data == 1):
        raise ValidationError("adjacency entries must be 0 or 1")
    if mat.nnz and mat.diagonal().any():
        raise ValidationError("adjacency diagonal must be zero (no self loops)")
    out = mat.astype(np.int8)
    out.indices = out.indices.astype(np.int32, copy=False)
    out.indptr = out.indptr.astype(np.int32, copy=False)
    return out


@dataclass(eq=False)
class DynamicMultiplexGraph:
    """Binary adjacency matrices ``A[k, t]`` on a shared node set.

    Parameters
    ----------
    n, K, T:
        Node, layer and time-point counts.
    adjacency:
        Mapping ``(k, t) -> n x n`` binary matrix (sparse or dense), 0-based
        keys.  Missing slots are legal and materialize as empty matrices.
    directed:
        If False, every block must be symmetric.
    node_labels, layer_labels, time_labels:
        Optional identifier lists; lengths must match n, K, T.

    The object is immutable after construction and safe for concurrent reads.
    """

    n: int
    K: int
    T: int
    adjacency: Mapping[tuple[int, int], sp.csr_array]
    directed: bool = True
    node_labels: tuple[str, ...] | None = None
    layer_labels: tuple[str, ...] | None = None
    time_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n < 1 or self.K < 1 or self.T < 1:
            raise ValidationError("n, K and T must all be positive")
        blocks: dict[tuple[int, int], sp.csr_array] = {}
        for key, block in dict(self.adjacency).items():
            k, t = key
            if not (0 <= k < self.K and 0 <= t < self.T):
                raise ValidationError(f"block key {key} outside 0..{self.K - 1} x 0..{self.T - 1}")
            mat = _as_binary_csr(block, self.n)
            if not self.directed and (mat != mat.T).nnz:
                raise ValidationError(f"block {key} is not symmetric but directed=False")
            blocks[k, t] = mat
        for k in range(self.K):
            for t in range(self.T):
                blocks.setdefault((k, t), sp.csr_array((self.n, self.n), dtype=np.int8))
        self.adjacency = blocks
        for name, labels, count in (
            ("node_labels", self.node_labels, self.n),
            ("layer_labels", self.layer_labels, self.K),
            ("time_labels", self.time_labels, self.T),
        ):
            if labels is not None:
                labels = tuple(str(x) for x in labels)
                if len(labels) != count:
                    raise ValidationError(f"{name} has length {len(labels)}, expected {count}")
                setattr(self, name, labels)

    def block(self, k: int, t: int) -> sp.csr_array:
        return self.adjacency[k, t]

    @property
    def nnz(self) -> int:
        return sum(int(b.nnz) for b in self.adjacency.values())


@dataclass(eq=False)
class UnfoldedMatrix:
    """The ``nK x nT`` block matrix of all adjacency (or probability) blocks.

    ``block_shape`` is ``(n, K, T)``; block ``(k, t)`` occupies rows
    ``k*n:(k+1)*n`` and columns ``t*n:(t+1)*n``.
    """

    matrix: sp.csr_array | np.ndarray
    block_shape: tuple[int, int, int]

    def __post_init__(self):
        n, K, T = self.block_shape
        if self.matrix.shape != (n * K, n * T):
            raise ValidationError(
                f"unfolded matrix has shape {self.matrix.shape}, expected {(n * K, n * T)}"
            )

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        if sp.issparse(self.matrix):
            return int(self.matrix.nnz)
        return int(np.count_nonzero(self.matrix))

    def block(self, k: int, t: int):
        n, K, T = self.block_shape
        if not (0 <= k < K and 0 <= t < T):
            raise ValidationError(f"block ({k}, {t}) out of range")
        sub = self.matrix[k * n : (k + 1) * n, t * n : (t + 1) * n]
        return sub.toarray() if sp.issparse(sub) else np.asarray(sub)


def build_unfolded(graph: DynamicMultiplexGraph) -> UnfoldedMatrix:
    """Assemble the doubly unfolded adjacency matrix of `graph`.

    Layers index the row blocks and time points the column blocks, so entry
    ``(k*n + i, t*n + j)`` of the result equals ``A[k, t][i, j]``.  Sparsity
    is preserved: the nonzero count equals the sum over blocks.
    """
    rows = [[graph.block(k, t) for t in range(graph.T)] for k in range(graph.K)]
    matrix = sp.block_array(rows, format="csr")
    return UnfoldedMatrix(matrix=matrix, block_shape=(graph.n, graph.K, graph.T))


def _unstack(M: np.ndarray, n: int, count: int, what: str) -> list[np.ndarray]:
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValidationError(f"{what}: expected a 2-D matrix")
    if M.shape[0] % n:
        raise ValidationError(f"{what}: {M.shape[0]} rows not divisible by n={n}")
    if M.shape[0] != n * count:
        raise ValidationError(f"{what}: expected {n * count} rows, got {M.shape[0]}")
    return [M[b * n : (b + 1) * n].copy() for b in range(count)]


def unstack_left(M: np.ndarray, n: int, K: int) -> list[np.ndarray]:
    """Split an ``nK x d`` stack into K consecutive ``n x d`` blocks."""
    return _unstack(M, n, K, "unstack_left")


def unstack_right(M: np.ndarray, n: int, T: int) -> list[np.ndarray]:
    """Split an ``nT x d`` stack into T consecutive ``n x d`` blocks."""
    return _unstack(M, n, T, "unstack_right")


def restack(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Inverse of the unstack operations (vertical concatenation)."""
    return np.vstack([np.asarray(b) for b in blocks])


# ---------------------------------------------------------------------------
# Event ingestion
# ---------------------------------------------------------------------------

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def parse_timestamp(value) -> int:
    """Parse an integer epoch-second or ``YYYY-MM-DD`` timestamp."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        stamp = datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise ValidationError(f"unparseable timestamp {value!r}") from exc
    return int((stamp - _EPOCH).total_seconds())


@dataclass
class EventTable:
    """Raw ``(source, target, layer, timestamp)`` records before binning."""

    records: list[tuple[str, str, str, int]] = field(default_factory=list)

    @classmethod
    def from_csv(cls, path: str | Path) -> "EventTable":
        """Read records from a CSV file with header ``source,target,layer,timestamp``."""
        records = []
        with open(path, newline="") as handle:
            reader = csv.DictReader(handle)
            expected = {"source", "target", "layer", "timestamp"}
            if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
                raise ValidationError(
                    f"event CSV must have header source,target,layer,timestamp, got {reader.fieldnames}"
                )
            for row in reader:
                records.append(
                    (row["source"], row["target"], row["layer"], parse_timestamp(row["timestamp"]))
                )
        return cls(records=records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class IngestResult:
    graph: DynamicMultiplexGraph
    dropped_out_of_range: int
    dropped_self_loops: int


def _normalize_bins(time_bins: Sequence) -> list[tuple[int, int]]:
    bins = []
    for interval in time_bins:
        lo, hi = interval
        lo, hi = parse_timestamp(lo), parse_timestamp(hi)
        if lo >= hi:
            raise ValidationError(f"empty time bin [{lo}, {hi})")
        bins.append((lo, hi))
    for (_, hi), (lo, _) in zip(bins, bins[1:]):
        if lo < hi:
            raise ValidationError("time bins must be disjoint and sorted")
    return bins


def ingest_events(
    table: EventTable,
    time_bins: Sequence,
    layer_order: Sequence[str] | None = None,
    node_labels: Sequence[str] | None = None,
    strict: bool = True,
) -> IngestResult:
    """Bin an event table into a dynamic multiplex graph.

    Each half-open bin ``[lo, hi)`` becomes one time point; ``A[k, t][i, j] = 1``
    iff at least one (i -> j, layer k) event falls in bin t.  Self events are
    dropped, events outside every bin are dropped, and both counts are
    reported.  The node set is the union of sources and targets over all
    records.

    With ``strict=True`` (the default) node and layer indices follow the
    lexicographic order of their labels, so shuffled input files produce
    identical graphs; with ``strict=False`` indices follow first appearance.
    An unknown layer is an error only when `layer_order` is supplied and
    strict mode is on.
    """
    bins = _normalize_bins(time_bins)
    if not bins:
        raise ValidationError("at least one time bin is required")
    starts = [lo for lo, _ in bins]

    seen_nodes: list[str] = []
    seen_set: set[str] = set()
    seen_layers: list[str] = []
    for src, dst, layer, _ in table.records:
        for name in (src, dst):
            if name not in seen_set:
                seen_set.add(name)
                seen_nodes.append(name)
        if layer not in seen_layers:
            seen_layers.append(layer)

    if node_labels is not None:
        nodes = [str(x) for x in node_labels]
        unknown = seen_set.difference(nodes)
        if unknown:
            raise ValidationError(f"events reference nodes outside node_labels: {sorted(unknown)}")
    else:
        nodes = sorted(seen_nodes) if strict else seen_nodes
    if not nodes:
        raise ValidationError("empty node set: no events and no node_labels")
    node_index = {name: i for i, name in enumerate(nodes)}

    if layer_order is not None:
        layers = [str(x) for x in layer_order]
        unknown = set(seen_layers).difference(layers)
        if unknown and strict:
            raise ValidationError(f"unknown layers {sorted(unknown)}")
        if unknown:
            layers = layers + [x for x in seen_layers if x not in layers]
    else:
        layers = sorted(seen_layers) if strict else seen_layers
    if not layers:
        raise ValidationError("empty layer set")
    layer_index = {name: k for k, name in enumerate(layers)}

    dropped_self = 0
    dropped_range = 0
    cells: dict[tuple[int, int], set[tuple[int, int]]] = {}
    for src, dst, layer, stamp in table.records:
        if src == dst:
            dropped_self += 1
            continue
        pos = bisect_right(starts, stamp) - 1
        if pos < 0 or stamp >= bins[pos][1]:
            dropped_range += 1
            continue
        k = layer_index.get(layer)
        if k is None:  # non-strict with layer_order: unreachable, layers extended above
            dropped_range += 1
            continue
        cells.setdefault((k, pos), set()).add((node_index[src], node_index[dst]))

    n = len(nodes)
    adjacency = {}
    for (k, t), pairs in cells.items():
        ij = np.array(sorted(pairs), dtype=np.int64)
        adjacency[k, t] = sp.csr_array(
            (np.ones(len(ij), dtype=np.int8), (ij[:, 0], ij[:, 1])), shape=(n, n)
        )
    graph = DynamicMultiplexGraph(
        n=n,
        K=len(layers),
        T=len(bins),
        adjacency=adjacency,
        directed=True,
        node_labels=tuple(nodes),
        layer_labels=tuple(layers),
        time_labels=tuple(f"[{lo},{hi})" for lo, hi in bins),
    )
    return IngestResult(graph=graph, dropped_out_of_range=dropped_range, dropped_self_loops=dropped_self)


# ---------------------------------------------------------------------------
# Serialization: JSON manifest + 0-based "k,t,i,j" edge list
# ---------------------------------------------------------------------------


def save_graph(graph: DynamicMultiplexGraph, out_dir: str | Path) -> Path:
    """Write ``graph.json`` and ``edges.csv`` (lines ``k,t,i,j``, 0-based)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n": graph.n,
        "K": graph.K,
        "T": graph.T,
        "directed": graph.directed,
        "node_labels": list(graph.node_labels) if graph.node_labels else None,
        "layer_labels": list(graph.layer_labels) if graph.layer_labels else None,
        "time_labels": list(graph.time_labels) if graph.time_labels else None,
        "edge_file": EDGE_FILE,
        "nnz": graph.nnz,
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    with open(out / EDGE_FILE, "w", newline="") as handle:
        for k in range(graph.K):
            for t in range(graph.T):
                coo = graph.block(k, t).tocoo()
                for i, j in sorted(zip(coo.row.tolist(), coo.col.tolist())):
                    handle.write(f"{k},{t},{i},{j}\n")
    return out / MANIFEST_FILE


def load_graph(path: str | Path) -> DynamicMultiplexGraph:
    """Load a graph saved by :func:`save_graph` (directory or manifest path)."""
    path = Path(path)
    manifest_path = path / MANIFEST_FILE if path.is_dir() else path
    manifest = json.loads(manifest_path.read_text())
    n, K, T = manifest["n"], manifest["K"], manifest["T"]
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    edge_path = manifest_path.parent / manifest.get("edge_file", EDGE_FILE)
    with open(edge_path, newline="") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            k, t, i, j = (int(x) for x in line.split(","))
            edges.setdefault((k, t), []).append((i, j))
    adjacency = {}
    for (k, t), pairs in edges.items():
        ij = np.array(pairs, dtype=np.int64)
        adjacency[k, t] = sp.csr_array(
            (np.ones(len(ij), dtype=np.int8), (ij[:, 0], ij[:, 1])), shape=(n, n)
        )
    labels = {
        name: tuple(manifest[name]) if manifest.get(name) else None
        for name in ("node_labels", "layer_labels", "time_labels")
    }
    return DynamicMultiplexGraph(
        n=n, K=K, T=T, adjacency=adjacency, directed=manifest.get("directed", True), **labels
    )
