"""Unsupervised road-network map-to-map matching."""

from .graph import (
    BoundingBox,
    EdgeFeatures,
    GeoNode,
    GraphValidationError,
    PseudoCoordinates,
    Road,
    RoadGraph,
    build_pseudo_coordinates,
    edge_features,
    normalized_degree,
)
from .formats import MapFormatError, load_graph, save_graph
from .matching import (
    Assignment,
    SimilarityMatrix,
    TrainConfig,
    TrainingDivergenceError,
    feature_similarity,
    fuse,
    hard_assign,
    hungarian,
    matching_loss,
    pairwise_pseudo_distance,
    sinkhorn,
    struct_diff,
    train_pair,
)

__all__ = [
    "Assignment",
    "BoundingBox",
    "EdgeFeatures",
    "GeoNode",
    "GraphValidationError",
    "MapFormatError",
    "PseudoCoordinates",
    "Road",
    "RoadGraph",
    "SimilarityMatrix",
    "TrainConfig",
    "TrainingDivergenceError",
    "build_pseudo_coordinates",
    "edge_features",
    "feature_similarity",
    "fuse",
    "hard_assign",
    "hungarian",
    "load_graph",
    "matching_loss",
    "normalized_degree",
    "pairwise_pseudo_distance",
    "save_graph",
    "sinkhorn",
    "struct_diff",
    "train_pair",
]
