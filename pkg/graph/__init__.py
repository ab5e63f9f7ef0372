from graph.graph_core import (
    DataSplit,
    Graph,
    GraphValidationError,
    Labels,
    build_graph,
    degrees,
    edge_homophily,
    normalized_adjacency,
    validate,
)
from graph.linalg import ShapeError, mean_abs, spmm

__all__ = [
    "DataSplit",
    "Graph",
    "GraphValidationError",
    "Labels",
    "ShapeError",
    "build_graph",
    "degrees",
    "edge_homophily",
    "mean_abs",
    "normalized_adjacency",
    "spmm",
    "validate",
]
