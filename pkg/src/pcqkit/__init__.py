"""pcqkit: full-reference point cloud quality metrics, fusion, benchmarking."""

__version__ = "0.1.0"

from .cloud import BoundingBox, PointCloud, bounding_box, infer_bit_depth
from .config import Config, load_config
from .evaluation import correlation_stats, error_stats, evaluate, fit_logistic
from .io_ply import load_ply, save_ply
from .metrics.graphsim import graphsim_score, msgraphsim_score
from .metrics.pcqm import (build_correspondence, compute_pcqm_features,
                           pcqm_aggregate)
from .metrics.pointssim import pointssim_score
from .metrics.psnr import compute_d1, compute_d2, compute_yuv
from .pipeline import (FEATURE_COLUMNS, FeatureTable, compute_pair_metrics,
                       extract_features, load_manifest, read_features_csv,
                       write_features_csv)
from .regression import (MODEL_REGISTRY, FusionModel, MinMaxScaler, RbfSvr,
                         RidgeRegression, group_kfold, make_model, rfe_rank)
from .spatial import (Neighborhood, SpatialIndex, build_index, knn_query,
                      radius_query)
from .surface import estimate_normals

__all__ = [
    "BoundingBox", "PointCloud", "bounding_box", "infer_bit_depth",
    "Config", "load_config",
    "load_ply", "save_ply",
    "SpatialIndex", "Neighborhood", "build_index", "knn_query", "radius_query",
    "estimate_normals",
    "compute_d1", "compute_d2", "compute_yuv",
    "pointssim_score",
    "build_correspondence", "compute_pcqm_features", "pcqm_aggregate",
    "graphsim_score", "msgraphsim_score",
    "FEATURE_COLUMNS", "FeatureTable", "compute_pair_metrics",
    "extract_features", "load_manifest", "read_features_csv",
    "write_features_csv",
    "MinMaxScaler", "RidgeRegression", "RbfSvr", "rfe_rank", "group_kfold",
    "MODEL_REGISTRY", "FusionModel", "make_model",
    "fit_logistic", "correlation_stats", "error_stats", "evaluate",
    "__version__",
]
