"""Iso-mirror pipeline: block distances -> CMDS -> kNN geodesics -> 1-D curve.

Given the per-time (or per-layer) embedding blocks, the pipeline computes a
pairwise distance matrix between blocks, embeds it with classical
multidimensional scaling, builds the smallest symmetrized k-nearest-neighbor
graph that is connected, and runs 1-D classical scaling on the geodesic
distances.  The resulting curve summarizes global drift over time indices
(changepoints show up as jumps) or similarity structure across layers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, csgraph_from_dense, shortest_path
from scipy.spatial.distance import cdist

from .embedding import procrustes_align
from .errors import ValidationError

__all__ = [
    "IsoMirrorResult",
    "pairwise_block_distances",
    "cmds",
    "minimal_connected_knn",
    "isomap_1d",
    "iso_mirror",
]

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class IsoMirrorResult:
    """All pipeline stages for S blocks: the S x S distance matrix, the CMDS
    coordinates, the neighbor count that first gave a connected graph, and
    the 1-D curve (sign fixed by forcing the anchor index nonpositive)."""

    D_hat: np.ndarray
    cmds_coords: np.ndarray
    knn_k: int
    curve: np.ndarray
    orientation_anchor: int
    mode: str
    norm: str


def _block_norm(diff: np.ndarray, norm: str) -> float:
    if norm == "spectral":
        return float(np.linalg.svd(diff, compute_uv=False)[0])
    if norm == "frobenius":
        return float(np.linalg.norm(diff))
    raise ValidationError(f"unknown norm {norm!r}")


def pairwise_block_distances(
    blocks: Sequence[np.ndarray], mode: str = "direct", norm: str = "spectral"
) -> np.ndarray:
    """Pairwise distances ``n^{-1/2} ||block_t - block_s||`` between blocks.

    ``mode="direct"`` compares blocks as-is, which is appropriate when all
    blocks come from one joint embedding and live in a shared coordinate
    system.  ``mode="procrustes"`` first maps block s onto block t with the
    Frobenius-optimal orthogonal transformation, making the distance
    invariant to per-pair rotations.  The norm is spectral by default (the
    largest singular value of the difference); Frobenius is available behind
    the `norm` flag.
    """
    if mode not in ("direct", "procrustes"):
        raise ValidationError(f"unknown mode {mode!r}")
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    if len(blocks) < 2:
        raise ValidationError("need at least two blocks")
    shape = blocks[0].shape
    for b in blocks:
        if b.shape != shape:
            raise ValidationError("all blocks must share one shape")
    scale = 1.0 / np.sqrt(shape[0])
    S = len(blocks)
    D = np.zeros((S, S))
    for t in range(S):
        for s in range(t + 1, S):
            if mode == "procrustes":
                Q = procrustes_align(blocks[t], blocks[s]).W
                diff = blocks[t] - blocks[s] @ Q
            else:
                diff = blocks[t] - blocks[s]
            D[t, s] = D[s, t] = scale * _block_norm(diff, norm)
    return D


def cmds(D: np.ndarray, c: int) -> np.ndarray:
    """Classical multidimensional scaling of a distance matrix into R^c.

    Double-centers the squared distances, eigendecomposes, and scales the top
    c eigenvectors by the square roots of their eigenvalues.  Negative
    eigenvalues (non-Euclidean input) are clamped to zero with a logged
    warning.  Column signs follow the largest-magnitude-entry-positive rule.
    """
    D = np.asarray(D, dtype=float)
    S = D.shape[0]
    if D.shape != (S, S):
        raise ValidationError("distance matrix must be square")
    if not np.allclose(D, D.T, atol=1e-8):
        raise ValidationError("distance matrix must be symmetric")
    if np.abs(np.diag(D)).max(initial=0.0) > 1e-12:
        raise ValidationError("distance matrix must have a zero diagonal")
    if not 1 <= c < S:
        raise ValidationError(f"need 1 <= c < S, got c={c}, S={S}")
    J = np.eye(S) - np.full((S, S), 1.0 / S)
    B = -0.5 * J @ (D * D) @ J
    eigvals, eigvecs = np.linalg.eigh(B)
    top = np.argsort(eigvals)[::-1][:c]
    vals = eigvals[top]
    if vals.min(initial=0.0) < -1e-10 * max(abs(eigvals).max(), 1e-300):
        logger.warning(
            "CMDS input is not Euclidean: clamping negative eigenvalues %s to zero",
            vals[vals < 0],
        )
    coords = eigvecs[:, top] * np.sqrt(np.maximum(vals, 0.0))
    anchor = np.argmax(np.abs(coords), axis=0)
    signs = np.where(coords[anchor, np.arange(c)] < 0, -1.0, 1.0)
    return coords * signs


def minimal_connected_knn(points: np.ndarray) -> tuple[int, np.ndarray]:
    """Smallest k whose symmetrized kNN graph is connected, plus that graph.

    An edge exists when either endpoint lists the other among its k nearest
    neighbors (ties broken by lower index); weights are Euclidean distances.
    Returns ``(k, weights)`` where non-edges hold ``inf`` and the diagonal 0,
    so zero-length edges between coincident points stay distinguishable.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    S = points.shape[0]
    if S < 2:
        raise ValidationError("need at least two points")
    dist = cdist(points, points)
    # stable argsort keeps equal-distance neighbors in index order
    order = np.argsort(dist, axis=1, kind="stable")
    for k in range(1, S):
        mask = np.zeros((S, S), dtype=bool)
        for i in range(S):
            neighbors = [j for j in order[i] if j != i][:k]
            mask[i, neighbors] = True
        mask |= mask.T
        weights = np.where(mask, dist, np.inf)
        np.fill_diagonal(weights, 0.0)
        n_comp, _ = connected_components(
            csgraph_from_dense(weights, null_value=np.inf), directed=False
        )
        if n_comp == 1:
            return k, weights
    raise AssertionError("k = S - 1 always yields a connected graph")  # pragma: no cover


def _geodesics(weights: np.ndarray) -> np.ndarray:
    geo = shortest_path(csgraph_from_dense(weights, null_value=np.inf), directed=False)
    if not np.all(np.isfinite(geo)):
        raise ValidationError("neighbor graph is not connected")
    return geo


def isomap_1d(points: np.ndarray, anchor: int = 0) -> np.ndarray:
    """1-D manifold coordinates: geodesic distances on the minimal connected
    kNN graph followed by 1-D classical scaling.

    The curve is defined up to sign; the value at `anchor` (default: first
    index) is forced nonpositive, making the output deterministic.
    """
    k, weights = minimal_connected_knn(points)
    curve = cmds(_geodesics(weights), 1)[:, 0]
    if curve[anchor] > 0:
        curve = -curve
    return curve


def iso_mirror(
    blocks: Sequence[np.ndarray],
    mode: str = "direct",
    c: int = 2,
    norm: str = "spectral",
    anchor: int = 0,
) -> IsoMirrorResult:
    """Full pipeline over one side's embedding blocks (times or layers).

    Composes :func:`pairwise_block_distances`, :func:`cmds` into R^c and the
    1-D geodesic scaling, recording every intermediate.  Right blocks give a
    time curve for global changepoint inspection; left blocks give a layer
    similarity curve.
    """
    D = pairwise_block_distances(blocks, mode=mode, norm=norm)
    coords = cmds(D, c)
    k, weights = minimal_connected_knn(coords)
    curve = cmds(_geodesics(weights), 1)[:, 0]
    if curve[anchor] > 0:
        curve = -curve
    return IsoMirrorResult(
        D_hat=D,
        cmds_coords=coords,
        knn_k=k,
        curve=curve,
        orientation_anchor=anchor,
        mode=mode,
        norm=norm,
    )
