"""Doubly unfolded adjacency spectral embedding for dynamic multiplex graphs.

A dynamic multiplex graph (n shared nodes, K layers, T time points) is
unfolded into a single nK x nT block matrix whose truncated SVD yields
layer-specific source embeddings and time-specific destination embeddings in
one shot.  On top of the embedding the package provides generative samplers,
Gaussian-mixture clustering of embedding blocks, and the iso-mirror curve for
global changepoint and layer-similarity analysis.
"""

from .errors import ConvergenceError, DuaseError, NumericalError, ValidationError
from .graphs import (
    DynamicMultiplexGraph,
    EventTable,
    IngestResult,
    UnfoldedMatrix,
    build_unfolded,
    ingest_events,
    load_graph,
    restack,
    save_graph,
    unstack_left,
    unstack_right,
)
from .sampling import (
    BlockModelSpec,
    LatentPositions,
    expected_unfolded,
    latent_positions_from_spec,
    load_positions,
    sample_dmprdpg,
    sample_dmpsbm,
    save_positions,
    sbm_latent_positions,
)
from .embedding import (
    AlignmentMap,
    CltCovariance,
    EmbeddingPair,
    duase,
    estimate_clt_covariance,
    general_align,
    load_embedding,
    procrustes_align,
    rescale_balanced,
    save_embedding,
    select_dimension,
    truncated_svd,
    two_to_inf_error,
)
from .clustering import (
    BlockClustering,
    GmmFit,
    adjusted_rand_index,
    cluster_left,
    cluster_right,
    fit_gmm,
    match_components,
)
from .isomirror import (
    IsoMirrorResult,
    cmds,
    iso_mirror,
    isomap_1d,
    minimal_connected_knn,
    pairwise_block_distances,
)

__version__ = "0.1.0"
