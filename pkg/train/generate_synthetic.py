"""
Synthetic graphs across the homophily spectrum.

gen_homophily_graph builds syn-cora-style graphs: balanced labels, edges added
slot by slot as same-class or cross-class pairs, class-conditional features.
It controls edge homophily (not the exact sampler of any published
benchmark): exactly round(h*M) of the M edge slots are same-class, so the
realized homophily equals h up to 1/M.

gen_gaussian_regular builds the two-class d-regular graphs with scalar
Gaussian features used to check aggregated feature distributions.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np
import scipy.sparse as sp
from tqdm import tqdm

from graph.graph_core import Graph, Labels, degrees
from train.prepare_dataset import DatasetBundle
from train.utils import derive_rng

logger = logging.getLogger(__name__)

# --- Configuration ---
SYN_NUM_NODES = 1490
SYN_NUM_CLASSES = 5
SYN_AVG_DEGREE = 4
SYN_FEATURE_DIM = 50
SYN_CLASS_SEPARATION = 1.0
SYN_FEATURE_STD = 0.5
SWEEP_LEVELS = tuple(round(0.1 * i, 1) for i in range(11))
MAX_ATTEMPTS_PER_EDGE = 1000
MAX_PAIRING_ROUNDS = 200
MAX_RESTARTS = 50


class InfeasibleSpecError(ValueError):
    """The requested graph cannot exist (or could not be sampled) under the spec."""


@dataclass(frozen=True)
class SynSpec:
    num_nodes: int = SYN_NUM_NODES
    num_classes: int = SYN_NUM_CLASSES
    homophily: float = 0.5
    avg_degree: int = SYN_AVG_DEGREE
    feature_dim: int = SYN_FEATURE_DIM
    class_separation: float = SYN_CLASS_SEPARATION
    feature_std: float = SYN_FEATURE_STD
    pool_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError(f"homophily must lie in [0, 1], got {self.homophily}")
        if self.num_classes < 2 or self.num_nodes < self.num_classes:
            raise ValueError("need num_classes >= 2 and at least one node per class")
        if self.avg_degree < 0 or (self.avg_degree * self.num_nodes) % 2 != 0:
            raise ValueError(
                f"avg_degree * num_nodes must be even and non-negative, got {self.avg_degree} * {self.num_nodes}")

    @property
    def num_edges(self) -> int:
        return self.avg_degree * self.num_nodes // 2


@dataclass(frozen=True)
class GaussianClassSpec:
    mu1: float
    sigma1: float
    mu2: float
    sigma2: float
    degree: int = 5
    homophily: float = 1.0

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ValueError(f"sigmas must be positive, got {self.sigma1}, {self.sigma2}")
        if self.degree < 1:
            raise ValueError(f"degree must be >= 1, got {self.degree}")
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError(f"homophily must lie in [0, 1], got {self.homophily}")


def _balanced_labels(n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % num_classes)


def _check_feasible(spec: SynSpec, labels: np.ndarray, n_intra: int, n_cross: int) -> None:
    sizes = np.bincount(labels, minlength=spec.num_classes)
    intra_pairs = int((sizes * (sizes - 1) // 2).sum())
    cross_pairs = int((spec.num_nodes * (spec.num_nodes - 1)) // 2 - intra_pairs)
    if n_intra > intra_pairs:
        raise InfeasibleSpecError(
            f"homophily {spec.homophily} needs {n_intra} same-class edges but only {intra_pairs} pairs exist")
    if n_cross > cross_pairs:
        raise InfeasibleSpecError(
            f"homophily {spec.homophily} needs {n_cross} cross-class edges but only {cross_pairs} pairs exist")


def class_feature_pool(spec: SynSpec, labels: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-class Gaussian pools in R^feature_dim. Class means sit on distinct axes,
    scaled so any two means are class_separation apart.
    """
    dim, c = spec.feature_dim, spec.num_classes
    if dim >= c:
        means = np.eye(c, dim) * (spec.class_separation / math.sqrt(2.0))
    else:
        directions = rng.normal(size=(c, dim))
        means = directions / np.linalg.norm(directions, axis=1, keepdims=True) * (spec.class_separation / math.sqrt(2.0))
    per_class = spec.pool_size or math.ceil(spec.num_nodes / c)
    pool_labels = np.repeat(np.arange(c), per_class)
    pool = means[pool_labels] + spec.feature_std * rng.normal(size=(pool_labels.size, dim))
    return pool, pool_labels


def draw_features(labels: np.ndarray, pool: np.ndarray, pool_labels: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Each node takes a random row (with replacement) from its class's pool."""
    features = np.empty((labels.size, pool.shape[1]))
    for c in np.unique(labels):
        rows = np.flatnonzero(pool_labels == c)
        if rows.size == 0:
            raise InfeasibleSpecError(f"feature pool has no rows for class {c}")
        nodes = np.flatnonzero(labels == c)
        features[nodes] = pool[rows[rng.integers(rows.size, size=nodes.size)]]
    return features


def gen_homophily_graph(spec: SynSpec, feature_pool: Optional[Tuple[np.ndarray, np.ndarray]] = None
                        ) -> Tuple[Graph, Labels, np.ndarray]:
    """
    Sample a graph with edge homophily round(h*M)/M. `feature_pool` is an
    optional (features, labels) pair imported from a real dataset.

    Edges are not drawn same-class independently with probability h: a
    shuffled slot list fixes exactly round(h*M) same-class edges, which has the
    same expected homophily with zero variance across seeds.
    """
    n = spec.num_nodes
    labels = _balanced_labels(n, spec.num_classes, derive_rng(spec.seed, 'labels'))
    m = spec.num_edges
    n_intra = int(math.floor(spec.homophily * m + 0.5))
    _check_feasible(spec, labels, n_intra, m - n_intra)

    rng = derive_rng(spec.seed, 'graph')
    slots = rng.permutation(np.r_[np.ones(n_intra, dtype=bool), np.zeros(m - n_intra, dtype=bool)])
    members = [np.flatnonzero(labels == c) for c in range(spec.num_classes)]

    edges: Set[Tuple[int, int]] = set()
    for intra in slots:
        for _ in range(MAX_ATTEMPTS_PER_EDGE):
            u = int(rng.integers(n))
            if intra:
                pool = members[labels[u]]
                v = int(pool[rng.integers(pool.size)])
            else:
                v = int(rng.integers(n))
                if labels[v] == labels[u]:
                    continue
            key = (u, v) if u < v else (v, u)
            if u != v and key not in edges:
                edges.add(key)
                break
        else:
            raise InfeasibleSpecError(f"could not place a {'same' if intra else 'cross'}-class edge "
                                      f"after {MAX_ATTEMPTS_PER_EDGE} draws; graph too dense for the requested homophily")

    graph = Graph.from_edges(n, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2))
    if feature_pool is None:
        feature_pool = class_feature_pool(spec, labels, derive_rng(spec.seed, 'features'))
    features = draw_features(labels, feature_pool[0], feature_pool[1], derive_rng(spec.seed, 'features', 1))
    return graph, Labels(labels, spec.num_classes), features


def make_bundle(spec: SynSpec, feature_pool: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                name: Optional[str] = None) -> DatasetBundle:
    graph, labels, features = gen_homophily_graph(spec, feature_pool)
    return DatasetBundle(graph=graph, features=features, labels=labels,
                         name=name or f"syn-h{spec.homophily:.1f}-s{spec.seed}")


def homophily_sweep(base: SynSpec, levels: Sequence[float] = SWEEP_LEVELS,
                    feature_pool: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> List[DatasetBundle]:
    """One bundle per homophily level; every level shares the seed, so labels and features match."""
    bundles = []
    for h in tqdm(levels, desc="Generating sweep", disable=len(levels) < 2):
        bundles.append(make_bundle(replace(base, homophily=float(h)), feature_pool))
    return bundles


def _pair_stubs(stubs: np.ndarray, rng: np.random.Generator, edges: Set[Tuple[int, int]],
                partner_stubs: Optional[np.ndarray] = None) -> bool:
    """
    Randomly match stubs into new simple edges, re-drawing only the pairs that
    collide (self-loop or existing edge). With partner_stubs the matching is
    bipartite between the two stub lists.
    """
    pending, pending_b = stubs, partner_stubs
    for _ in range(MAX_PAIRING_ROUNDS):
        if pending.size == 0:
            return True
        if pending_b is None:
            shuffled = rng.permutation(pending)
            left, right = shuffled[0::2], shuffled[1::2]
        else:
            left, right = rng.permutation(pending), rng.permutation(pending_b)
        retry_left, retry_right = [], []
        for u, v in zip(left.tolist(), right.tolist()):
            key = (u, v) if u < v else (v, u)
            if u != v and key not in edges:
                edges.add(key)
            else:
                retry_left.append(u)
                retry_right.append(v)
        if pending_b is None:
            pending = np.array(retry_left + retry_right, dtype=np.int64)
        else:
            pending, pending_b = np.array(retry_left, dtype=np.int64), np.array(retry_right, dtype=np.int64)
    return False


def gen_gaussian_regular(spec: GaussianClassSpec, n: int, seed: int) -> Tuple[Graph, Labels, np.ndarray]:
    """
    Two equal classes; every node gets round(h*d) same-class and d - round(h*d)
    cross-class neighbours by configuration-model pairing. Features are
    N(mu_c, sigma_c^2), returned as an N×1 matrix.
    """
    if n < 2 or n % 2:
        raise InfeasibleSpecError(f"need an even number of nodes for two equal classes, got {n}")
    half = n // 2
    d = spec.degree
    k_in = int(math.floor(spec.homophily * d + 0.5))
    k_out = d - k_in
    if k_in > half - 1 or k_out > half:
        raise InfeasibleSpecError(f"degree {d} with homophily {spec.homophily} does not fit classes of {half} nodes")

    labels = np.repeat(np.array([0, 1]), half)
    members = [np.arange(half), np.arange(half, n)]
    intra_stubs = [np.repeat(m, k_in) for m in members]
    if (half * k_in) % 2:
        # odd stub count inside a class: the last node of each class loses one same-class stub
        intra_stubs = [s[:-1] for s in intra_stubs]
        logger.warning(f"parity adjustment: {half} nodes x {k_in} same-class stubs is odd; "
                       f"nodes {half - 1} and {n - 1} get degree {d - 1}")

    rng = derive_rng(seed, 'graph')
    for attempt in range(MAX_RESTARTS):
        edges: Set[Tuple[int, int]] = set()
        ok = all(_pair_stubs(s, rng, edges) for s in intra_stubs)
        ok = ok and _pair_stubs(np.repeat(members[0], k_out), rng, edges, np.repeat(members[1], k_out))
        if ok:
            break
        logger.debug(f"stub pairing stalled on attempt {attempt}; restarting")
    else:
        raise InfeasibleSpecError(f"stub pairing failed after {MAX_RESTARTS} restarts")

    graph = Graph.from_edges(n, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2))
    frng = derive_rng(seed, 'features')
    mu = np.where(labels == 0, spec.mu1, spec.mu2)
    sigma = np.where(labels == 0, spec.sigma1, spec.sigma2)
    features = (mu + sigma * frng.normal(size=n)).reshape(-1, 1)
    return graph, Labels(labels, 2), features


def mean_aggregate(graph: Graph, features: np.ndarray) -> np.ndarray:
    """Mean over neighbours (excluding the node itself); isolated nodes get 0."""
    deg = degrees(graph).astype(np.float64)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / deg[deg > 0]
    features = np.asarray(features, dtype=np.float64)
    squeeze = features.ndim == 1
    x = features.reshape(-1, 1) if squeeze else features
    out = sp.diags_array(inv) @ (graph.adjacency() @ x)
    return out.ravel() if squeeze else out
