"""Similarity-based representation factorization.

Factorizes partially observed symmetric similarity matrices into sparse
non-negative embeddings, selects the rank by leakage-aware cross-validation,
and tests interpretable hypotheses about the recovered dimensions.
"""

__version__ = "0.1.0"

from .consensus import ConsensusResult, align, consensus_fit, hungarian
from .evaluate import (
    RidgeConfig,
    TripletScore,
    explained_variance,
    link_auc,
    ridge_predict,
    triplet_accuracy,
)
from .hyptest import (
    DesignMatrix,
    PowerResult,
    bh_correct,
    factorial_design,
    mantel_test,
    power_experiment,
    sparse_correlated_design,
    srf_dimension_test,
)
from .rank import Calibration, CvConfig, CvCurve, calibrate, cross_validate, nystrom_complete
from .simmat import (
    AssociationCounts,
    DenseSimilarity,
    FeatureMatrix,
    SimilarityError,
    TripletCounts,
    linear_kernel,
    ppmi_similarity,
    preprocess_associations,
    rbf_kernel,
    symmetrize_clip,
    triplet_similarity,
)
from .simulate import (
    GroundTruth,
    add_noise_to_snr,
    dirichlet_embedding,
    factor_alignment,
    hoyer_sparsity,
    knn_impute,
    make_ground_truth,
    median_impute,
    normalized_entropy,
    parallel_analysis,
    random_missing_mask,
    relative_factor_error,
    scree_rank,
)
from .solver import FitResult, SolverConfig, SolverState, fit, masked_loss

__all__ = [
    "AssociationCounts",
    "Calibration",
    "ConsensusResult",
    "CvConfig",
    "CvCurve",
    "DenseSimilarity",
    "DesignMatrix",
    "FeatureMatrix",
    "FitResult",
    "GroundTruth",
    "PowerResult",
    "RidgeConfig",
    "SimilarityError",
    "SolverConfig",
    "SolverState",
    "TripletCounts",
    "TripletScore",
    "add_noise_to_snr",
    "align",
    "bh_correct",
    "calibrate",
    "consensus_fit",
    "cross_validate",
    "dirichlet_embedding",
    "explained_variance",
    "factor_alignment",
    "factorial_design",
    "fit",
    "hoyer_sparsity",
    "hungarian",
    "knn_impute",
    "linear_kernel",
    "link_auc",
    "make_ground_truth",
    "mantel_test",
    "masked_loss",
    "median_impute",
    "normalized_entropy",
    "nystrom_complete",
    "parallel_analysis",
    "power_experiment",
    "ppmi_similarity",
    "preprocess_associations",
    "random_missing_mask",
    "rbf_kernel",
    "relative_factor_error",
    "ridge_predict",
    "scree_rank",
    "sparse_correlated_design",
    "srf_dimension_test",
    "symmetrize_clip",
    "triplet_accuracy",
    "triplet_similarity",
]
