from .clustering import (
    ClusterReport,
    SpectralClusterer,
    clustering_scores,
    contingency_scores,
    knn_affinity,
    silhouette,
    spectral_cluster,
    spectral_cluster_full,
)
from .diagnostics import (
    ClassMetrics,
    DiagnosticReport,
    aggregate_folds,
    align_clusters,
    diagnostic_metrics,
    diagnostic_report,
)
from .distances import (
    DistanceReport,
    category_sd,
    centroid,
    cross_category_stats,
    distance_report,
    fold_statistics,
    normalize_fold,
)
from .image import (
    CdfTable,
    HarmonizationReport,
    ImageMetrics,
    intensity_change_cdf,
    masked_image_metrics,
    ssim_map_2d,
)
from .projection import project_2d

__all__ = [
    "CdfTable",
    "ClassMetrics",
    "ClusterReport",
    "DiagnosticReport",
    "DistanceReport",
    "HarmonizationReport",
    "ImageMetrics",
    "SpectralClusterer",
    "aggregate_folds",
    "align_clusters",
    "category_sd",
    "centroid",
    "clustering_scores",
    "contingency_scores",
    "cross_category_stats",
    "diagnostic_metrics",
    "diagnostic_report",
    "distance_report",
    "fold_statistics",
    "intensity_change_cdf",
    "knn_affinity",
    "masked_image_metrics",
    "normalize_fold",
    "project_2d",
    "silhouette",
    "spectral_cluster",
    "spectral_cluster_full",
    "ssim_map_2d",
]
