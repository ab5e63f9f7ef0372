"""
Graph representation, degree/normalization utilities and homophily measurement.

Graphs are undirected, unweighted and simple. The adjacency is kept in
compressed-row form with every undirected edge stored twice, so it can be
handed to scipy.sparse without copying.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class GraphValidationError(ValueError):
    """Raised when a graph, label vector or split violates its invariants."""


@dataclass(frozen=True)
class IngestStats:
    """Counters reported when an edge list is turned into a Graph."""
    duplicates_removed: int = 0
    self_loops_removed: int = 0


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    _adjacency: Optional[sp.csr_array] = field(default=None, repr=False, compare=False)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges M."""
        return int(self.col_indices.shape[0] // 2)

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[v]:self.row_offsets[v + 1]]

    def adjacency(self) -> sp.csr_array:
        """Raw 0/1 adjacency A as a float64 CSR matrix (cached)."""
        if self._adjacency is None:
            data = np.ones(self.col_indices.shape[0], dtype=np.float64)
            adj = sp.csr_array(
                (data, self.col_indices, self.row_offsets),
                shape=(self.num_nodes, self.num_nodes),
            )
            object.__setattr__(self, "_adjacency", adj)
        return self._adjacency

    def edge_list(self) -> np.ndarray:
        """Unordered edges as an (M, 2) array with u < v, sorted."""
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))
        keep = rows < self.col_indices
        return np.stack([rows[keep], self.col_indices[keep]], axis=1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    __hash__ = None

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[Tuple[int, int]]) -> "Graph":
        graph, _ = build_graph(num_nodes, edges)
        return graph


def build_graph(num_nodes: int, edges: Iterable[Tuple[int, int]]) -> Tuple[Graph, IngestStats]:
    """
    Symmetrize an edge list (either orientation), strip self-loops and drop
    duplicates. Returns the graph and the counters of what was removed.
    """
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphValidationError(f"edge list must have shape (M, 2), got {arr.shape}")
    if num_nodes < 0:
        raise GraphValidationError("num_nodes must be non-negative")
    if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
        raise GraphValidationError(
            f"edge endpoint out of range [0, {num_nodes}): min={arr.min()}, max={arr.max()}"
        )

    loops = arr[:, 0] == arr[:, 1]
    n_loops = int(loops.sum())
    arr = arr[~loops]

    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    undirected = np.unique(np.stack([lo, hi], axis=1), axis=0) if arr.size else arr
    n_dupes = int(arr.shape[0] - undirected.shape[0])

    if n_loops:
        logger.info(f"Stripped {n_loops} self-loop(s) at ingestion")
    if n_dupes:
        logger.info(f"Deduplicated {n_dupes} repeated edge(s) at ingestion")

    src = np.concatenate([undirected[:, 0], undirected[:, 1]])
    dst = np.concatenate([undirected[:, 1], undirected[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    counts = np.bincount(src, minlength=num_nodes)
    row_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])

    graph = Graph(num_nodes=num_nodes, row_offsets=row_offsets, col_indices=dst.astype(np.int64))
    return graph, IngestStats(duplicates_removed=n_dupes, self_loops_removed=n_loops)


@dataclass(frozen=True, eq=False)
class Labels:
    values: np.ndarray
    num_classes: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        object.__setattr__(self, "values", values)
        if self.num_classes < 2:
            raise GraphValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if values.size and (values.min() < 0 or values.max() >= self.num_classes):
            raise GraphValidationError(f"label values must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class DataSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))

    def validate(self, num_nodes: int) -> None:
        if self.train.size == 0 or self.valid.size == 0:
            raise GraphValidationError("train and valid sets must be non-empty")
        parts = np.concatenate([self.train, self.valid, self.test])
        if parts.size and (parts.min() < 0 or parts.max() >= num_nodes):
            raise GraphValidationError(f"split index out of range [0, {num_nodes})")
        if np.unique(parts).size != parts.size:
            raise GraphValidationError("train/valid/test sets must be pairwise disjoint")

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("train", "valid", "test")}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataSplit):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("train", "valid", "test"))

    __hash__ = None


def degrees(g: Graph) -> np.ndarray:
    return np.diff(g.row_offsets)


def validate(g: Graph) -> List[str]:
    """Return every invariant violation found; an empty list means the graph is valid."""
    violations: List[str] = []
    n = g.num_nodes
    if g.row_offsets.shape[0] != n + 1:
        violations.append(f"row_offsets has length {g.row_offsets.shape[0]}, expected {n + 1}")
        return violations
    if g.row_offsets[0] != 0 or g.row_offsets[-1] != g.col_indices.shape[0]:
        violations.append("row_offsets must start at 0 and end at len(col_indices)")
        return violations
    if np.any(np.diff(g.row_offsets) < 0):
        violations.append("row_offsets is not non-decreasing")
        return violations
    if g.col_indices.size and (g.col_indices.min() < 0 or g.col_indices.max() >= n):
        violations.append("col_indices out of range")
        return violations

    rows = np.repeat(np.arange(n), np.diff(g.row_offsets))
    cols = g.col_indices
    if np.any(rows == cols):
        violations.append(f"self-loop at node(s) {sorted(set(rows[rows == cols].tolist()))[:5]}")
    pairs = rows * n + cols
    if np.unique(pairs).size != pairs.size:
        violations.append("duplicate entries within a row")
    reverse = cols * n + rows
    if not np.array_equal(np.sort(pairs), np.sort(reverse)):
        violations.append("adjacency is not symmetric")
    return violations


def check_graph(g: Graph) -> Graph:
    """Raise GraphValidationError unless validate(g) is clean."""
    problems = validate(g)
    if problems:
        raise GraphValidationError("; ".join(problems))
    return g


def edge_homophily(g: Graph, labels: Labels) -> float:
    """Fraction of undirected edges whose endpoints share a label."""
    if len(labels) != g.num_nodes:
        raise GraphValidationError(
            f"labels has length {len(labels)} but graph has {g.num_nodes} nodes"
        )
    if g.num_edges == 0:
        warnings.warn("edge homophily of an edgeless graph is defined as 0", RuntimeWarning)
        return 0.0
    edges = g.edge_list()
    same = labels.values[edges[:, 0]] == labels.values[edges[:, 1]]
    return float(same.sum() / g.num_edges)


def normalized_adjacency(g: Graph, self_loops: bool = False) -> sp.csr_array:
    """
    D^{-1/2} A D^{-1/2} on the sparsity pattern of A. Degree-0 rows stay zero.
    With self_loops=True the GCN-style D~^{-1/2}(A+I)D~^{-1/2} is returned instead.
    """
    adj = g.adjacency()
    if self_loops:
        adj = (adj + sp.eye_array(g.num_nodes, dtype=np.float64, format="csr")).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    scale = sp.diags_array(inv_sqrt, format="csr")
    out = sp.csr_array(scale @ adj @ scale)
    out.sort_indices()
    return out


def relabel(g: Graph, perm: np.ndarray) -> Graph:
    """Graph with node i renamed perm[i]."""
    perm = np.asarray(perm, dtype=np.int64)
    edges = g.edge_list()
    return Graph.from_edges(g.num_nodes, perm[edges] if edges.size else edges)


def disjoint_union(g1: Graph, g2: Graph) -> Graph:
    e1 = g1.edge_list()
    e2 = g2.edge_list() + g1.num_nodes
    return Graph.from_edges(g1.num_nodes + g2.num_nodes, np.concatenate([e1, e2]))
