"""Spectral embedding of the doubly unfolded matrix and supporting numerics.

The embedding is the truncated rank-d SVD ``A ~ U D V^T`` of the ``nK x nT``
unfolding: the left factor ``U D^{1/2}`` unstacks into K layer-specific node
configurations and the right factor ``V D^{1/2}`` into T time-specific ones.
This module also provides dimension selection by the two-segment
profile-likelihood elbow, orthogonal/general-linear alignment between point
configurations, the per-node worst-case (two-to-infinity) error metric, and
the plug-in asymptotic covariance of the embedding rows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, svds

from .errors import ConvergenceError, NumericalError, ValidationError
from .graphs import DynamicMultiplexGraph, UnfoldedMatrix, build_unfolded, unstack_left, unstack_right
from .sampling import BlockModelSpec, LatentPositions, latent_positions_from_spec

__all__ = [
    "EmbeddingPair",
    "AlignmentMap",
    "CltCovariance",
    "truncated_svd",
    "duase",
    "rescale_balanced",
    "select_dimension",
    "procrustes_align",
    "general_align",
    "two_to_inf_error",
    "estimate_clt_covariance",
    "save_embedding",
    "load_embedding",
]

logger = logging.getLogger(__name__)

DENSE_CUTOFF = 2000  # below this size the dense LAPACK path is cheaper and exact

# Fixed ARPACK starting vector seed; Philox is counter-based, so the start
# vector (hence the whole iteration) is reproducible across runs.
_V0_SEED = 0x0D0A5E


def _fix_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Make the largest-magnitude entry of each U column positive (ties: lowest index)."""
    cols = np.arange(U.shape[1])
    anchor = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[anchor, cols] < 0, -1.0, 1.0)
    return U * signs, V * signs


def truncated_svd(
    M,
    d: int,
    tol: float = 1e-10,
    method: str = "auto",
    max_restarts: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-d singular triplets of a sparse or dense matrix.

    Parameters
    ----------
    M:
        Sparse array/matrix or 2-D ndarray.
    d:
        Number of singular triplets, ``1 <= d <= min(M.shape)``.  A d beyond
        the numerical rank simply yields trailing values near zero.
    tol:
        Acceptance threshold for the residual ``||M V - U diag(s)||_F <=
        tol * s[0]``.
    method:
        ``"auto"`` uses implicitly restarted Lanczos (ARPACK) on large sparse
        inputs and dense LAPACK below a 2000 x 2000 cutoff, ``"dense"`` and
        ``"lanczos"`` force a path.
    max_restarts:
        Lanczos restart budget before giving up (default ``10 * d``).

    Returns
    -------
    (U, s, V):
        ``U`` is rows x d, ``s`` the descending singular values, ``V`` cols x d.
        Signs are deterministic: the largest-magnitude entry of each U column
        is positive, with V negated correspondingly.
    """
    rows, cols = M.shape
    if d < 1:
        raise ValidationError(f"d must be >= 1, got {d}")
    if d > min(rows, cols):
        raise ValidationError(f"d={d} exceeds min(rows, cols)={min(rows, cols)}")
    if method not in ("auto", "dense", "lanczos"):
        raise ValidationError(f"unknown SVD method {method!r}")

    small = rows < DENSE_CUTOFF and cols < DENSE_CUTOFF
    use_dense = method == "dense" or (method == "auto" and (small or d >= min(rows, cols)))
    if method == "lanczos" and d >= min(rows, cols):
        raise ValidationError("lanczos path requires d < min(rows, cols)")

    if use_dense:
        dense = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        U, s, Vt = np.linalg.svd(dense.astype(float, copy=False), full_matrices=False)
        U, s, V = U[:, :d], s[:d], Vt[:d].T
    else:
        A = M.astype(np.float64) if sp.issparse(M) else np.asarray(M, dtype=np.float64)
        v0 = np.random.Generator(np.random.Philox(_V0_SEED)).standard_normal(min(rows, cols))
        maxiter = (max_restarts if max_restarts is not None else 10 * d)
        try:
            U, s, Vt = svds(
                A,
                k=d,
                ncv=min(max(2 * d + 1, 20), min(rows, cols)),
                tol=0,
                v0=v0,
                maxiter=maxiter,
            )
        except ArpackNoConvergence as exc:
            raise ConvergenceError(f"Lanczos SVD did not converge within {maxiter} restarts") from exc
        order = np.argsort(s)[::-1]
        U, s, V = U[:, order], s[order], Vt[order].T

    U, V = _fix_signs(U, V)
    if s[0] > 0:
        residual = np.linalg.norm((M @ V) - U * s)
        if residual > tol * s[0]:
            raise NumericalError(
                f"SVD residual {residual:.3g} exceeds tol * sigma_1 = {tol * s[0]:.3g}"
            )
    return U, s, V


@dataclass(eq=False)
class EmbeddingPair:
    """Left (per-layer) and right (per-time) embedding blocks.

    ``X_hat_blocks[k]`` and ``Y_hat_blocks[t]`` are ``n x d``.  Until
    rescaled, the stacked factors satisfy ``X^T X = Y^T Y = diag(s)``.
    ``inactive_left[k]`` lists nodes with no activity as a source in layer k
    (their embedding rows are ~0); likewise ``inactive_right[t]`` for
    destinations at time t.
    """

    X_hat_blocks: list[np.ndarray]
    Y_hat_blocks: list[np.ndarray]
    singular_values: np.ndarray
    d: int
    rescaled: bool = False
    inactive_left: list[np.ndarray] | None = None
    inactive_right: list[np.ndarray] | None = None

    def __post_init__(self):
        self.singular_values = np.asarray(self.singular_values, dtype=float)
        if len(self.singular_values) != self.d:
            raise ValidationError("singular_values length must equal d")
        if np.any(np.diff(self.singular_values) > 1e-12) or np.any(self.singular_values < -1e-12):
            raise ValidationError("singular values must be nonnegative and descending")

    @property
    def n(self) -> int:
        return self.X_hat_blocks[0].shape[0]

    @property
    def K(self) -> int:
        return len(self.X_hat_blocks)

    @property
    def T(self) -> int:
        return len(self.Y_hat_blocks)

    @property
    def X_hat(self) -> np.ndarray:
        return np.vstack(self.X_hat_blocks)

    @property
    def Y_hat(self) -> np.ndarray:
        return np.vstack(self.Y_hat_blocks)


def _zero_rows_cols(matrix) -> tuple[np.ndarray, np.ndarray]:
    if sp.issparse(matrix):
        csr = matrix.tocsr()
        row_nnz = np.diff(csr.indptr)
        col_nnz = np.diff(csr.tocsc().indptr)
    else:
        row_nnz = np.count_nonzero(matrix, axis=1)
        col_nnz = np.count_nonzero(matrix, axis=0)
    return row_nnz == 0, col_nnz == 0


def duase(
    source: DynamicMultiplexGraph | UnfoldedMatrix,
    d: int,
    tol: float = 1e-10,
    method: str = "auto",
) -> EmbeddingPair:
    """Embed a dynamic multiplex graph (or a prebuilt unfolding) into R^d.

    Computes the rank-d truncated SVD of the unfolded matrix and unstacks
    ``U D^{1/2}`` into K layer blocks and ``V D^{1/2}`` into T time blocks.
    With K = T = 1 this reduces to the adjacency spectral embedding of a
    single directed graph.
    """
    unfolded = build_unfolded(source) if isinstance(source, DynamicMultiplexGraph) else source
    n, K, T = unfolded.block_shape
    matrix = unfolded.matrix.astype(np.float64) if sp.issparse(unfolded.matrix) else unfolded.matrix
    U, s, V = truncated_svd(matrix, d, tol=tol, method=method)
    root = np.sqrt(s)
    zero_rows, zero_cols = _zero_rows_cols(unfolded.matrix)
    return EmbeddingPair(
        X_hat_blocks=unstack_left(U * root, n, K),
        Y_hat_blocks=unstack_right(V * root, n, T),
        singular_values=s,
        d=d,
        rescaled=False,
        inactive_left=[np.flatnonzero(zero_rows[k * n : (k + 1) * n]) for k in range(K)],
        inactive_right=[np.flatnonzero(zero_cols[t * n : (t + 1) * n]) for t in range(T)],
    )


def rescale_balanced(pair: EmbeddingPair) -> EmbeddingPair:
    """Equalize left/right embedding magnitudes without changing their product.

    The raw factors carry scales of order ``(T/K)^{1/4}`` on the left and
    ``(K/T)^{1/4}`` on the right; multiplying by ``(K/T)^{1/4}`` and
    ``(T/K)^{1/4}`` respectively balances them and leaves ``X Y^T`` invariant.
    """
    if pair.rescaled:
        raise ValidationError("embedding pair already rescaled")
    left = (pair.K / pair.T) ** 0.25
    right = (pair.T / pair.K) ** 0.25
    return EmbeddingPair(
        X_hat_blocks=[b * left for b in pair.X_hat_blocks],
        Y_hat_blocks=[b * right for b in pair.Y_hat_blocks],
        singular_values=pair.singular_values.copy(),
        d=pair.d,
        rescaled=True,
        inactive_left=pair.inactive_left,
        inactive_right=pair.inactive_right,
    )


def select_dimension(singular_values: Sequence[float], d_max: int | None = None) -> int:
    """Profile-likelihood elbow of a singular-value scree.

    Splits the (descending) sequence into a head and a tail at every
    candidate d, models both segments as Gaussians with a common pooled
    variance, and returns the split maximizing the profile log-likelihood.
    Ties and pathological no-gap sequences resolve to the smallest d (the
    criterion is well defined but unreliable without a visible gap).
    """
    values = np.sort(np.asarray(singular_values, dtype=float))[::-1]
    m = len(values)
    if m < 3:
        raise ValidationError(f"need at least 3 singular values, got {m}")
    q_max = m - 1 if d_max is None else max(1, min(int(d_max), m - 1))
    best_d, best_loglik = 1, -np.inf
    for q in range(1, q_max + 1):
        head, tail = values[:q], values[q:]
        pooled = (np.sum((head - head.mean()) ** 2) + np.sum((tail - tail.mean()) ** 2)) / m
        loglik = np.inf if pooled < 1e-300 else -0.5 * m * np.log(pooled)
        if loglik > best_loglik:
            best_d, best_loglik = q, loglik
    return best_d


@dataclass(eq=False)
class AlignmentMap:
    """Invertible map W aligning an estimated configuration onto a target.

    Both constructors use the convention ``A_hat ~ A @ W``, so the aligned
    estimate is ``A_hat @ W^{-1}``.  Orthogonal maps satisfy ``W^T W = I``;
    general-linear maps carry their condition number and fit residual.
    """

    W: np.ndarray
    kind: str  # "orthogonal" | "general-linear"
    condition_number: float | None = None
    residual: float | None = None
    degenerate: bool = False

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ValidationError("alignment matrix must be square")
        if self.kind not in ("orthogonal", "general-linear"):
            raise ValidationError(f"unknown alignment kind {self.kind!r}")

    def apply_inverse(self, M: np.ndarray) -> np.ndarray:
        """Return ``M @ W^{-1}``."""
        M = np.asarray(M, dtype=float)
        if self.kind == "orthogonal":
            return M @ self.W.T
        return np.linalg.solve(self.W.T, M.T).T


def procrustes_align(A: np.ndarray, B: np.ndarray) -> AlignmentMap:
    """Orthogonal Q minimizing ``||A - B Q||_F``, from the SVD of ``B^T A``.

    A degenerate cross product (rank-deficient ``B^T A``) still returns a
    valid minimizer but flags it, since the optimum is then not unique.
    """
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValidationError(f"shape mismatch {A.shape} vs {B.shape}")
    U, s, Vt = np.linalg.svd(B.T @ A)
    Q = U @ Vt
    degenerate = bool(s[-1] <= 1e-12 * max(s[0], 1e-300))
    return AlignmentMap(W=Q, kind="orthogonal", degenerate=degenerate)


def general_align(A_hat: np.ndarray, A: np.ndarray) -> AlignmentMap:
    """Least-squares invertible W with ``A_hat ~ A @ W``.

    Solves the forward regression ``min_W ||A W - A_hat||_F`` and reports the
    alignment residual ``||A_hat W^{-1} - A||_F``.  A must have full column
    rank.
    """
    A_hat, A = np.asarray(A_hat, dtype=float), np.asarray(A, dtype=float)
    if A.shape != A_hat.shape:
        raise ValidationError(f"shape mismatch {A_hat.shape} vs {A.shape}")
    d = A.shape[1]
    if np.linalg.matrix_rank(A) < d:
        raise ValidationError("target configuration is rank-deficient")
    W, *_ = np.linalg.lstsq(A, A_hat, rcond=None)
    w_svals = np.linalg.svd(W, compute_uv=False)
    if w_svals[-1] <= 1e-14 * max(w_svals[0], 1e-300):
        raise NumericalError("fitted alignment matrix is numerically singular")
    result = AlignmentMap(
        W=W, kind="general-linear", condition_number=float(w_svals[0] / w_svals[-1])
    )
    result.residual = float(np.linalg.norm(result.apply_inverse(A_hat) - A))
    return result


def two_to_inf_error(
    A_hat: np.ndarray, A: np.ndarray, align: AlignmentMap | np.ndarray | None = None
) -> float:
    """Worst row error ``max_i ||(A_hat W^{-1} - A)_i||_2`` (W = I if align is None)."""
    A_hat, A = np.asarray(A_hat, dtype=float), np.asarray(A, dtype=float)
    if A.shape != A_hat.shape:
        raise ValidationError(f"shape mismatch {A_hat.shape} vs {A.shape}")
    if align is None:
        aligned = A_hat
    elif isinstance(align, AlignmentMap):
        aligned = align.apply_inverse(A_hat)
    else:
        aligned = np.linalg.solve(np.asarray(align, dtype=float).T, A_hat.T).T
    return float(np.max(np.linalg.norm(aligned - A, axis=1)))


@dataclass(eq=False)
class CltCovariance:
    """Plug-in asymptotic covariance of one embedding row.

    ``covariance`` is the sandwich ``delta^{-1} v delta^{-1}`` where ``delta``
    is the average empirical second-moment matrix of the opposite-side
    unscaled positions and ``v`` the mixing-weighted second-moment matrix of
    the central limit theorem (dense regime uses Bernoulli variance weights
    ``p(1-p)``, the sparse regime drops the ``(1-p)`` factor).
    """

    covariance: np.ndarray
    v: np.ndarray
    delta: np.ndarray
    side: str
    regime: str


def estimate_clt_covariance(
    source: LatentPositions | BlockModelSpec,
    side: str,
    index: int,
    block: int = 0,
) -> CltCovariance:
    """Asymptotic covariance of ``sqrt(nT) (X_hat W^{-1} - X)`` rows (or the right mirror).

    For ``side="left"`` the conditioning value is the unscaled position of
    node `index` in layer `block`, and the expectation runs over the
    empirical distribution of the unscaled right positions across all time
    points; ``side="right"`` mirrors the roles (scaling ``sqrt(nK)``,
    expectation over layers).  Known truth is required, so this applies to
    simulation settings only.
    """
    if side not in ("left", "right"):
        raise ValidationError(f"side must be 'left' or 'right', got {side!r}")
    positions = source if isinstance(source, LatentPositions) else latent_positions_from_spec(source)
    xi_blocks, nu_blocks = positions.unscaled()
    regime = "dense" if positions.rho == 1.0 else "sparse"

    if side == "left":
        own, other = xi_blocks, nu_blocks
    else:
        own, other = nu_blocks, xi_blocks
    if not 0 <= block < len(own):
        raise ValidationError(f"block {block} out of range")
    x = own[block][index]

    d = positions.d
    v = np.zeros((d, d))
    delta = np.zeros((d, d))
    for atoms in other:
        inner = atoms @ x
        weights = inner * (1.0 - inner) if regime == "dense" else inner
        v += (atoms * weights[:, None]).T @ atoms / atoms.shape[0]
        delta += atoms.T @ atoms / atoms.shape[0]
    v /= len(other)
    delta /= len(other)

    dsv = np.linalg.svd(delta, compute_uv=False)
    if dsv[-1] <= 1e-12 * max(dsv[0], 1e-300):
        raise NumericalError("second-moment matrix is singular; covariance undefined")
    inv = np.linalg.inv(delta)
    return CltCovariance(covariance=inv @ v @ inv, v=v, delta=delta, side=side, regime=regime)


# ---------------------------------------------------------------------------
# Embedding serialization: one CSV per block + manifest
# ---------------------------------------------------------------------------

MANIFEST_FILE = "embedding.json"


def _write_block_csv(path: Path, block: np.ndarray) -> None:
    d = block.shape[1]
    with open(path, "w", newline="") as handle:
        handle.write("node," + ",".join(f"dim{j + 1}" for j in range(d)) + "\n")
        for i, row in enumerate(block):
            handle.write(f"{i}," + ",".join(repr(float(x)) for x in row) + "\n")


def _read_block_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as handle:
        next(handle)
        for line in handle:
            rows.append([float(x) for x in line.strip().split(",")[1:]])
    return np.asarray(rows, dtype=float)


def save_embedding(pair: EmbeddingPair, out_dir: str | Path) -> Path:
    """Write ``X_k<k>.csv`` / ``Y_t<t>.csv`` blocks plus ``embedding.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, blockmat in enumerate(pair.X_hat_blocks):
        _write_block_csv(out / f"X_k{k}.csv", blockmat)
    for t, blockmat in enumerate(pair.Y_hat_blocks):
        _write_block_csv(out / f"Y_t{t}.csv", blockmat)
    manifest = {
        "n": pair.n,
        "K": pair.K,
        "T": pair.T,
        "d": pair.d,
        "rescaled": pair.rescaled,
        "singular_values": [repr(float(x)) for x in pair.singular_values],
        "inactive_left": [b.tolist() for b in pair.inactive_left] if pair.inactive_left else None,
        "inactive_right": [b.tolist() for b in pair.inactive_right] if pair.inactive_right else None,
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / MANIFEST_FILE


def load_embedding(path: str | Path) -> EmbeddingPair:
    """Load an embedding saved by :func:`save_embedding`."""
    path = Path(path)
    base = path if path.is_dir() else path.parent
    manifest = json.loads((base / MANIFEST_FILE).read_text())
    X_blocks = [_read_block_csv(base / f"X_k{k}.csv") for k in range(manifest["K"])]
    Y_blocks = [_read_block_csv(base / f"Y_t{t}.csv") for t in range(manifest["T"])]
    inactive_left = manifest.get("inactive_left")
    inactive_right = manifest.get("inactive_right")
    return EmbeddingPair(
        X_hat_blocks=X_blocks,
        Y_hat_blocks=Y_blocks,
        singular_values=np.array([float(x) for x in manifest["singular_values"]]),
        d=manifest["d"],
        rescaled=manifest["rescaled"],
        inactive_left=[np.asarray(b, dtype=int) for b in inactive_left] if inactive_left else None,
        inactive_right=[np.asarray(b, dtype=int) for b in inactive_right] if inactive_right else None,
    )
