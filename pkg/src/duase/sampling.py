"""Generative samplers for dynamic multiplex graphs.

Two parameterizations are supported: explicit latent-position matrices (one
``n x d`` block per layer for sources, per time point for destinations, edge
probability = inner product) and the blockmodel special case where positions
are point masses indexed by community labels.

Randomness comes from the counter-based Philox generator.  Block ``(k, t)``
always draws from the substream ``SeedSequence(seed, spawn_key=(k, t))``, so
the sampling order of blocks (including concurrent sampling) never affects
the output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ValidationError
from .graphs import DynamicMultiplexGraph, UnfoldedMatrix

__all__ = [
    "LatentPositions",
    "BlockModelSpec",
    "sample_dmprdpg",
    "sample_dmpsbm",
    "sbm_latent_positions",
    "latent_positions_from_spec",
    "expected_unfolded",
    "save_positions",
    "load_positions",
]

PROB_TOL = 1e-12


def _block_rng(seed: int, k: int, t: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k, t))))


@dataclass(eq=False)
class LatentPositions:
    """Layer-specific source positions and time-specific destination positions.

    ``X_blocks[k]`` and ``Y_blocks[t]`` are ``n x d`` matrices; the edge
    probability for (i -> j) in layer k at time t is ``X_blocks[k][i] @
    Y_blocks[t][j]``.  When a sparsity factor ``rho < 1`` is used, the
    unscaled positions ``xi_blocks``/``nu_blocks`` satisfy
    ``X = sqrt(rho) * xi`` and ``Y = sqrt(rho) * nu``.
    """

    X_blocks: list[np.ndarray]
    Y_blocks: list[np.ndarray]
    rho: float = 1.0
    xi_blocks: list[np.ndarray] | None = None
    nu_blocks: list[np.ndarray] | None = None

    def __post_init__(self):
        self.X_blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.X_blocks]
        self.Y_blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.Y_blocks]
        if not self.X_blocks or not self.Y_blocks:
            raise ValidationError("need at least one X block and one Y block")
        n, d = self.X_blocks[0].shape
        for b in self.X_blocks + self.Y_blocks:
            if b.shape != (n, d):
                raise ValidationError("all position blocks must share one (n, d) shape")
        if not 0.0 < self.rho <= 1.0:
            raise ValidationError(f"rho must be in (0, 1], got {self.rho}")

    @property
    def n(self) -> int:
        return self.X_blocks[0].shape[0]

    @property
    def d(self) -> int:
        return self.X_blocks[0].shape[1]

    @property
    def K(self) -> int:
        return len(self.X_blocks)

    @property
    def T(self) -> int:
        return len(self.Y_blocks)

    @property
    def X(self) -> np.ndarray:
        return np.vstack(self.X_blocks)

    @property
    def Y(self) -> np.ndarray:
        return np.vstack(self.Y_blocks)

    def unscaled(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Return (xi, nu) blocks, dividing out sqrt(rho) when not stored."""
        if self.xi_blocks is not None and self.nu_blocks is not None:
            return list(self.xi_blocks), list(self.nu_blocks)
        root = np.sqrt(self.rho)
        return [b / root for b in self.X_blocks], [b / root for b in self.Y_blocks]

    def validate(self) -> None:
        """Check probability and scaling invariants (raises on violation)."""
        for k, Xk in enumerate(self.X_blocks):
            for t, Yt in enumerate(self.Y_blocks):
                P = Xk @ Yt.T
                if P.min() < -PROB_TOL or P.max() > 1.0 + PROB_TOL:
                    raise ValidationError(
                        f"X[{k}] . Y[{t}] products outside [0, 1]: "
                        f"range [{P.min():.3g}, {P.max():.3g}]"
                    )
        if self.xi_blocks is not None:
            root = np.sqrt(self.rho)
            for scaled, raw in zip(self.X_blocks + self.Y_blocks,
                                   list(self.xi_blocks) + list(self.nu_blocks or [])):
                if not np.allclose(scaled, root * np.asarray(raw), atol=1e-12):
                    raise ValidationError("scaled positions do not equal sqrt(rho) * unscaled")


@dataclass(eq=False)
class BlockModelSpec:
    """Community labels and connection-probability matrices of the blockmodel.

    ``z[k]`` holds the layer-k community of every node (values in
    ``0..G1-1``), ``upsilon[t]`` the time-t community (``0..G2-1``), and
    ``B[(k, t)]`` the ``G1 x G2`` matrix of between-group edge probabilities.
    """

    G1: int
    G2: int
    z: list[np.ndarray]
    upsilon: list[np.ndarray]
    B: Mapping[tuple[int, int], np.ndarray]

    def __post_init__(self):
        self.z = [np.asarray(labels, dtype=np.int64) for labels in self.z]
        self.upsilon = [np.asarray(labels, dtype=np.int64) for labels in self.upsilon]
        if not self.z or not self.upsilon:
            raise ValidationError("need at least one z list and one upsilon list")
        n = len(self.z[0])
        for labels in self.z:
            if len(labels) != n:
                raise ValidationError("all z lists must have equal length")
            if labels.min() < 0 or labels.max() >= self.G1:
                raise ValidationError(f"z labels must lie in 0..{self.G1 - 1}")
        for labels in self.upsilon:
            if len(labels) != n:
                raise ValidationError("all upsilon lists must have the same length as z")
            if labels.min() < 0 or labels.max() >= self.G2:
                raise ValidationError(f"upsilon labels must lie in 0..{self.G2 - 1}")
        B = {}
        for key, mat in dict(self.B).items():
            mat = np.asarray(mat, dtype=float)
            if mat.shape != (self.G1, self.G2):
                raise ValidationError(f"B{key} has shape {mat.shape}, expected {(self.G1, self.G2)}")
            if mat.min() < 0.0 or mat.max() > 1.0:
                raise ValidationError(f"B{key} entries must lie in [0, 1]")
            B[tuple(key)] = mat
        for k in range(self.K):
            for t in range(self.T):
                if (k, t) not in B:
                    raise ValidationError(f"missing B block ({k}, {t})")
        self.B = B

    @property
    def n(self) -> int:
        return len(self.z[0])

    @property
    def K(self) -> int:
        return len(self.z)

    @property
    def T(self) -> int:
        return len(self.upsilon)

    def to_json(self) -> str:
        payload = {
            "G1": self.G1,
            "G2": self.G2,
            "z": [labels.tolist() for labels in self.z],
            "upsilon": [labels.tolist() for labels in self.upsilon],
            "B": {f"{k},{t}": self.B[k, t].tolist() for k in range(self.K) for t in range(self.T)},
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BlockModelSpec":
        payload = json.loads(text)
        try:
            B = {}
            for key, mat in payload["B"].items():
                k, t = (int(x) for x in key.split(","))
                B[k, t] = np.asarray(mat, dtype=float)
            return cls(
                G1=int(payload["G1"]),
                G2=int(payload["G2"]),
                z=[np.asarray(x) for x in payload["z"]],
                upsilon=[np.asarray(x) for x in payload["upsilon"]],
                B=B,
            )
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"malformed blockmodel JSON: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "BlockModelSpec":
        return cls.from_json(Path(path).read_text())


def _sample_block(P: np.ndarray, rng: np.random.Generator, undirected: bool) -> sp.csr_array:
    if P.min() < -PROB_TOL or P.max() > 1.0 + PROB_TOL:
        raise ValidationError(
            f"edge probabilities outside [0, 1]: range [{P.min():.3g}, {P.max():.3g}]"
        )
    n = P.shape[0]
    draws = rng.random((n, n))
    A = draws < np.clip(P, 0.0, 1.0)
    np.fill_diagonal(A, False)
    if undirected:
        A = np.triu(A, 1)
        A = A | A.T
    return sp.csr_array(A.astype(np.int8))


def sample_dmprdpg(pos: LatentPositions, seed: int) -> DynamicMultiplexGraph:
    """Draw a graph with independent edges ``A[k,t][i,j] ~ Bernoulli(X[k][i] @ Y[t][j])``.

    The diagonal is forced to zero and the output is directed.  Identical
    (positions, seed) pairs give bit-identical graphs.
    """
    pos.validate()
    adjacency = {}
    for k, Xk in enumerate(pos.X_blocks):
        for t, Yt in enumerate(pos.Y_blocks):
            adjacency[k, t] = _sample_block(Xk @ Yt.T, _block_rng(seed, k, t), undirected=False)
    return DynamicMultiplexGraph(
        n=pos.n, K=pos.K, T=pos.T, adjacency=adjacency, directed=True
    )


def sample_dmpsbm(spec: BlockModelSpec, seed: int, undirected: bool = False) -> DynamicMultiplexGraph:
    """Draw a blockmodel graph: edge probability ``B[k,t][z[k][i], upsilon[t][j]]``.

    With ``undirected=True`` every B block must be symmetric and the z and
    upsilon labels must coincide; the upper triangle is sampled and mirrored.
    """
    if undirected:
        all_labels = [np.asarray(x) for x in spec.z] + [np.asarray(x) for x in spec.upsilon]
        for labels in all_labels[1:]:
            if not np.array_equal(all_labels[0], labels):
                raise ValidationError("undirected sampling requires z == upsilon everywhere")
        for key, mat in spec.B.items():
            if not np.allclose(mat, mat.T):
                raise ValidationError(f"undirected sampling requires symmetric B{key}")
    adjacency = {}
    for k in range(spec.K):
        zk = spec.z[k]
        for t in range(spec.T):
            P = spec.B[k, t][np.ix_(zk, spec.upsilon[t])]
            adjacency[k, t] = _sample_block(P, _block_rng(seed, k, t), undirected)
    return DynamicMultiplexGraph(
        n=spec.n, K=spec.K, T=spec.T, adjacency=adjacency, directed=not undirected
    )


def sbm_latent_positions(
    spec: BlockModelSpec, rank_tol: float = 1e-10
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Recover group latent positions from the stacked B matrix.

    The ``G1*K x G2*T`` stack of all B blocks is factorized at its numerical
    rank d (singular values above ``rank_tol`` relative to the largest), and
    the two factors are unstacked into K ``G1 x d`` source-group positions and
    T ``G2 x d`` destination-group positions whose inner products reproduce
    every ``B[k, t]``.
    """
    from .embedding import truncated_svd  # local import: avoids module cycle

    stack = np.block([[spec.B[k, t] for t in range(spec.T)] for k in range(spec.K)])
    values = np.linalg.svd(stack, compute_uv=False)
    d = int(np.count_nonzero(values > rank_tol * values[0])) if values[0] > 0 else 1
    U, s, V = truncated_svd(stack, d, method="dense")
    root = np.sqrt(s)
    mu = [U[k * spec.G1 : (k + 1) * spec.G1] * root for k in range(spec.K)]
    lam = [V[t * spec.G2 : (t + 1) * spec.G2] * root for t in range(spec.T)]
    worst = max(
        float(np.abs(mu[k] @ lam[t].T - spec.B[k, t]).max())
        for k in range(spec.K)
        for t in range(spec.T)
    )
    if worst > 1e-8:
        raise NumericalError(f"blockmodel factorization residual {worst:.3g} exceeds 1e-8")
    return mu, lam


def latent_positions_from_spec(spec: BlockModelSpec) -> LatentPositions:
    """Expand a blockmodel into node-level point-mass latent positions."""
    mu, lam = sbm_latent_positions(spec)
    X_blocks = [mu[k][spec.z[k]] for k in range(spec.K)]
    Y_blocks = [lam[t][spec.upsilon[t]] for t in range(spec.T)]
    return LatentPositions(X_blocks=X_blocks, Y_blocks=Y_blocks, rho=1.0)


def expected_unfolded(model: LatentPositions | BlockModelSpec) -> UnfoldedMatrix:
    """Build the unfolded probability matrix ``P`` with blocks ``X[k] @ Y[t].T``.

    The diagonal of each block is kept (only sampled adjacency matrices zero
    it), so ``P`` is exactly the rank-d product of the stacked positions.
    """
    if isinstance(model, BlockModelSpec):
        blocks = [
            [model.B[k, t][np.ix_(model.z[k], model.upsilon[t])] for t in range(model.T)]
            for k in range(model.K)
        ]
        n, K, T = model.n, model.K, model.T
    else:
        blocks = [[Xk @ Yt.T for Yt in model.Y_blocks] for Xk in model.X_blocks]
        n, K, T = model.n, model.K, model.T
    return UnfoldedMatrix(matrix=np.block(blocks), block_shape=(n, K, T))


# ---------------------------------------------------------------------------
# Position serialization: per-block CSV + manifest (format in README)
# ---------------------------------------------------------------------------


def _write_block(path: Path, block: np.ndarray) -> None:
    d = block.shape[1]
    with open(path, "w", newline="") as handle:
        handle.write("node," + ",".join(f"dim{j + 1}" for j in range(d)) + "\n")
        for i, row in enumerate(block):
            handle.write(f"{i}," + ",".join(repr(float(x)) for x in row) + "\n")


def _read_block(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as handle:
        next(handle)  # header
        for line in handle:
            rows.append([float(x) for x in line.strip().split(",")[1:]])
    return np.asarray(rows, dtype=float)


def save_positions(pos: LatentPositions, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, block in enumerate(pos.X_blocks):
        _write_block(out / f"X_k{k}.csv", block)
    for t, block in enumerate(pos.Y_blocks):
        _write_block(out / f"Y_t{t}.csv", block)
    manifest = {"n": pos.n, "d": pos.d, "K": pos.K, "T": pos.T, "rho": pos.rho}
    (out / "positions.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / "positions.json"


def load_positions(path: str | Path) -> LatentPositions:
    path = Path(path)
    base = path if path.is_dir() else path.parent
    manifest = json.loads((base / "positions.json").read_text())
    X_blocks = [_read_block(base / f"X_k{k}.csv") for k in range(manifest["K"])]
    Y_blocks = [_read_block(base / f"Y_t{t}.csv") for t in range(manifest["T"])]
    return LatentPositions(X_blocks=X_blocks, Y_blocks=Y_blocks, rho=manifest.get("rho", 1.0))
