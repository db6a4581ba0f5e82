"""Geodesic clustering with tangent information on Riemannian manifolds.

Sphere, Grassmannian and SPD geometry, local tangent estimation, weighted
sparse coding, the GCT/TGCT clustering methods with SMC/SCR/EKM baselines,
six synthetic benchmark datasets and the clustering-rate metric.
"""

__version__ = "0.1.0"

from .clustering import (
    METHODS,
    ClusterResult,
    EkmParams,
    GctParams,
    ScrParams,
    SmcParams,
    TgctParams,
    default_params,
    embed_euclidean,
    gct_affinity,
    kmeans,
    run_method,
    scr_affinity,
    smc_affinity,
    spectral_cluster,
    tgct_affinity,
)
from .datasets import (
    DATASET_IDS,
    Dataset,
    DatasetSpec,
    generate,
    load_dataset,
    noise_sweep,
    save_dataset,
    two_great_circles,
)
from .evaluation import Summary, TrialResult, clustering_rate, summarize
from .exceptions import (
    AllZeroSpectrum,
    CutLocus,
    DegenerateNeighborhood,
    EigenFailure,
    EmptyCandidates,
    InvalidPoint,
    InvalidSpec,
    ManifoldMismatch,
    ParseError,
    TangencyViolation,
    TangentClustError,
    VersionMismatch,
)
from .manifolds import Grassmannian, Sphere, Spd, manifold_from_tag
from .sparse_coding import SparseCode, SparseCodeProblem, solve_sparse_code, solve_sparse_codes
