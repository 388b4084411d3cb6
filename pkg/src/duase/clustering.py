"""Gaussian mixture clustering of embedding blocks and evaluation metrics.

Rows of a noisy embedding block concentrate around their community's latent
position with asymptotically Gaussian, generally anisotropic errors, so the
blocks are clustered with a full-covariance mixture fitted by EM from
k-means++ starts.  Hungarian matching between fitted components and
ground-truth group means supports the overlap diagnostics used in the
experiments, and the adjusted Rand index scores recovered labelings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp
from scipy.spatial.distance import cdist

from .embedding import EmbeddingPair
from .errors import ValidationError

__all__ = [
    "GmmFit",
    "BlockClustering",
    "fit_gmm",
    "cluster_left",
    "cluster_right",
    "adjusted_rand_index",
    "match_components",
]

COV_FLOOR_SCALE = 1e-6
REL_TOL = 1e-8
MAX_ITER = 500


@dataclass(eq=False)
class GmmFit:
    """Fitted mixture: component count G, means (G x d), full covariances
    (G x d x d), simplex weights, argmax-responsibility hard labels, total
    log-likelihood, and the per-iteration log-likelihood trace of the winning
    restart."""

    G: int
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    hard_labels: np.ndarray
    log_likelihood: float
    converged: bool
    collapsed: bool
    loglik_trace: np.ndarray


def _kmeanspp_centers(points: np.ndarray, G: int, rng: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, G):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(m))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, m - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _log_gaussian(points: np.ndarray, mu: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = points.shape[1]
    chol = np.linalg.cholesky(cov)
    diff = points - mu
    z = np.linalg.solve(chol, diff.T)
    quad = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))


def _floor_covariance(cov: np.ndarray, floor: float) -> tuple[np.ndarray, bool]:
    """Raise the minimum eigenvalue to at least `floor` (diagonal shift)."""
    eigmin = float(np.linalg.eigvalsh(cov)[0])
    if eigmin > floor:
        return cov, False
    shift = floor - eigmin + 1e-3 * floor + 1e-300
    return cov + shift * np.eye(cov.shape[0]), True


def _fit_once(points: np.ndarray, G: int, rng: np.random.Generator, floor: float,
              max_iter: int, rel_tol: float):
    m, d = points.shape
    centers = _kmeanspp_centers(points, G, rng)
    assign = np.argmin(cdist(points, centers), axis=1)
    resp = np.zeros((m, G))
    resp[np.arange(m), assign] = 1.0

    loglik = -np.inf
    trace = []
    converged = False
    collapsed = False
    for _ in range(max_iter):
        # M-step
        counts = resp.sum(axis=0) + 1e-300
        weights = counts / m
        means = (resp.T @ points) / counts[:, None]
        covs = np.empty((G, d, d))
        collapsed = False
        for g in range(G):
            diff = points - means[g]
            cov = (resp[:, g][:, None] * diff).T @ diff / counts[g]
            covs[g], floored = _floor_covariance(cov, floor)
            collapsed = collapsed or floored
        # E-step
        log_prob = np.column_stack(
            [np.log(weights[g] + 1e-300) + _log_gaussian(points, means[g], covs[g]) for g in range(G)]
        )
        norm = logsumexp(log_prob, axis=1)
        new_loglik = float(norm.sum())
        resp = np.exp(log_prob - norm[:, None])
        trace.append(new_loglik)
        if np.isfinite(loglik) and abs(new_loglik - loglik) <= rel_tol * (abs(loglik) + 1e-300):
            loglik = new_loglik
            converged = True
            break
        loglik = new_loglik

    return GmmFit(
        G=G,
        means=means,
        covariances=covs,
        weights=weights,
        hard_labels=np.argmax(resp, axis=1),
        log_likelihood=loglik,
        converged=converged,
        collapsed=collapsed,
        loglik_trace=np.asarray(trace),
    )


def fit_gmm(
    points: np.ndarray,
    G: int,
    seed: int = 0,
    restarts: int = 5,
    max_iter: int = MAX_ITER,
    rel_tol: float = REL_TOL,
) -> GmmFit:
    """Fit a full-covariance Gaussian mixture by EM, best of `restarts` runs.

    Each restart draws a k-means++ initialization from its own Philox
    substream of `seed` and runs EM until the relative log-likelihood change
    drops below `rel_tol` (or `max_iter` iterations).  Covariances are kept
    SPD by enforcing a minimum eigenvalue of ``1e-6 * trace(global cov) / d``.
    Degenerate input (all points identical with G > 1) returns a collapsed,
    non-converged fit instead of raising.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = points.shape
    if G < 1:
        raise ValidationError(f"G must be >= 1, got {G}")
    if m <= G * d:
        raise ValidationError(f"need more than G*d = {G * d} points, got {m}")

    centered = points - points.mean(axis=0)
    global_trace = float(np.sum(centered * centered) / m)
    floor = COV_FLOOR_SCALE * global_trace / d

    if global_trace <= 0.0 and G > 1:
        return GmmFit(
            G=G,
            means=np.repeat(points[:1], G, axis=0),
            covariances=np.zeros((G, d, d)),
            weights=np.full(G, 1.0 / G),
            hard_labels=np.zeros(m, dtype=np.int64),
            log_likelihood=np.nan,
            converged=False,
            collapsed=True,
            loglik_trace=np.array([]),
        )

    best: GmmFit | None = None
    for r in range(max(1, restarts)):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(r,))))
        fit = _fit_once(points, G, rng, floor, max_iter, rel_tol)
        if best is None or fit.log_likelihood > best.log_likelihood:
            best = fit
    return best


@dataclass(eq=False)
class BlockClustering:
    """Per-block labels and fits for one embedding side."""

    side: str
    labels: list[np.ndarray]
    fits: list[GmmFit]
    pooled: bool


def _cluster_side(blocks, side, G, seed, restarts, pooled):
    if pooled:
        stacked = np.vstack(blocks)
        fit = fit_gmm(stacked, G, seed=seed, restarts=restarts)
        n = blocks[0].shape[0]
        labels = [fit.hard_labels[b * n : (b + 1) * n] for b in range(len(blocks))]
        return BlockClustering(side=side, labels=labels, fits=[fit], pooled=True)
    fits = [
        fit_gmm(block, G, seed=seed + offset, restarts=restarts)
        for offset, block in enumerate(blocks)
    ]
    return BlockClustering(
        side=side, labels=[fit.hard_labels for fit in fits], fits=fits, pooled=False
    )


def cluster_left(
    pair: EmbeddingPair, G: int, seed: int = 0, restarts: int = 5, pooled: bool = False
) -> BlockClustering:
    """Cluster each layer block of the left embedding into G components.

    With ``pooled=True`` a single mixture is fitted on the stacked ``nK x d``
    matrix and its labels are split back per layer.
    """
    return _cluster_side(pair.X_hat_blocks, "left", G, seed, restarts, pooled)


def cluster_right(
    pair: EmbeddingPair, G: int, seed: int = 0, restarts: int = 5, pooled: bool = False
) -> BlockClustering:
    """Mirror of :func:`cluster_left` over the time blocks of the right embedding."""
    return _cluster_side(pair.Y_hat_blocks, "right", G, seed, restarts, pooled)


def adjusted_rand_index(a: Sequence[int], b: Sequence[int]) -> float:
    """Chance-corrected pair-counting agreement between two labelings."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("labelings must be 1-D sequences of equal length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    contingency = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(contingency, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) // 2

    sum_cells = comb2(contingency).sum()
    sum_rows = comb2(contingency.sum(axis=1)).sum()
    sum_cols = comb2(contingency.sum(axis=0)).sum()
    total = comb2(len(a))
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def match_components(means: np.ndarray, reference_means: np.ndarray) -> np.ndarray:
    """Hungarian match of fitted components to reference group means.

    Returns ``perm`` with ``perm[g]`` = index of the fitted component assigned
    to reference group g (minimum total Euclidean mean distance).
    """
    means = np.asarray(means, dtype=float)
    reference_means = np.asarray(reference_means, dtype=float)
    if means.shape != reference_means.shape:
        raise ValidationError("component and reference mean arrays must have equal shape")
    cost = cdist(reference_means, means)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(reference_means), dtype=np.int64)
    perm[rows] = cols
    return perm
