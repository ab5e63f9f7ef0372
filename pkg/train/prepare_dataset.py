import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from graph.graph_core import DataSplit, Graph, GraphValidationError, Labels, build_graph, check_graph, degrees, edge_homophily
from train.utils import derive_rng

logger = logging.getLogger(__name__)

# --- Configuration ---
EDGES_FILE = 'edges.tsv'
FEATURES_FILE = 'features.csv'
SPARSE_FEATURES_FILE = 'features_sparse.tsv'
LABELS_FILE = 'labels.csv'
META_FILE = 'meta.json'
SPLITS_FILE = 'splits.json'

SPLIT_POLICIES = ('planetoid', 'fractional', 'per_class')
PLANETOID_TRAIN_PER_CLASS = 20
PLANETOID_NUM_VALID = 500
PLANETOID_NUM_TEST = 1000
FRACTIONS = (0.5, 0.25, 0.25)
PER_CLASS_TRAIN = 20
PER_CLASS_VALID = 30


class BundleFormatError(ValueError):
    """A dataset directory is missing a file or its members disagree."""


@dataclass(eq=False)
class DatasetBundle:
    graph: Graph
    features: np.ndarray
    labels: Labels
    name: str
    splits: List[DataSplit] = field(default_factory=list)

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise BundleFormatError(f"{self.name}: features have {self.features.shape[0]} rows, graph has {n} nodes")
        if len(self.labels) != n:
            raise BundleFormatError(f"{self.name}: {len(self.labels)} labels for {n} nodes")
        for split in self.splits:
            split.validate(n)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return self.labels.num_classes


def _require(directory: str, filename: str) -> str:
    path = os.path.join(directory, filename)
    if not os.path.exists(path):
        raise FileNotFoundError(f"Dataset file not found: {path}")
    return path


def load_bundle(directory: str) -> DatasetBundle:
    """
    Read a dataset directory (edges.tsv, features.csv or features_sparse.tsv,
    labels.csv, meta.json, optional splits.json) into a validated bundle.
    """
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"Dataset directory not found: {directory}")
    with open(_require(directory, META_FILE), 'r') as f:
        meta = json.load(f)
    missing = [k for k in ('name', 'num_nodes', 'num_features', 'num_classes') if k not in meta]
    if missing:
        raise BundleFormatError(f"{META_FILE} is missing key(s) {missing}")
    n, dim, num_classes = int(meta['num_nodes']), int(meta['num_features']), int(meta['num_classes'])

    edges_path = _require(directory, EDGES_FILE)
    if os.path.getsize(edges_path) == 0:
        edges = np.zeros((0, 2), dtype=np.int64)
    else:
        edges = pd.read_csv(edges_path, sep=r'\s+', header=None, comment='#', dtype=np.int64).to_numpy()
    if edges.size and edges.shape[1] != 2:
        raise BundleFormatError(f"{EDGES_FILE} must have exactly two integer columns, found {edges.shape[1]}")
    graph, stats = build_graph(n, edges)
    check_graph(graph)
    if stats.duplicates_removed:
        logger.info(f"{meta['name']}: removed {stats.duplicates_removed} duplicate edge line(s)")

    if meta.get('sparse', False):
        triples = pd.read_csv(_require(directory, SPARSE_FEATURES_FILE), sep=r'\s+', header=None, comment='#')
        if triples.shape[1] != 3:
            raise BundleFormatError(f"{SPARSE_FEATURES_FILE} must have row, col, value columns")
        rows, cols = triples[0].to_numpy(np.int64), triples[1].to_numpy(np.int64)
        if rows.size and (rows.max() >= n or cols.max() >= dim or min(rows.min(), cols.min()) < 0):
            raise BundleFormatError(f"{SPARSE_FEATURES_FILE} references an entry outside {n}×{dim}")
        features = sp.coo_array((triples[2].to_numpy(np.float64), (rows, cols)), shape=(n, dim)).toarray()
    else:
        features = pd.read_csv(_require(directory, FEATURES_FILE), header=None, dtype=np.float64).to_numpy()
    if features.shape != (n, dim):
        raise BundleFormatError(f"features have shape {features.shape}, {META_FILE} declares {(n, dim)}")
    if not np.all(np.isfinite(features)):
        raise BundleFormatError("features contain non-finite values")

    label_values = pd.read_csv(_require(directory, LABELS_FILE), header=None, dtype=np.int64)[0].to_numpy()
    if label_values.shape[0] != n:
        raise BundleFormatError(f"{LABELS_FILE} has {label_values.shape[0]} rows, {META_FILE} declares {n} nodes")
    labels = Labels(label_values, num_classes)

    splits = []
    splits_path = os.path.join(directory, SPLITS_FILE)
    if os.path.exists(splits_path):
        with open(splits_path, 'r') as f:
            splits = [DataSplit(**s) for s in json.load(f)]

    bundle = DatasetBundle(graph=graph, features=np.ascontiguousarray(features), labels=labels,
                           name=str(meta['name']), splits=splits)
    logger.info(f"Loaded {bundle.name}: {n} nodes, {graph.num_edges} edges, {dim} features, {num_classes} classes")
    return bundle


def save_bundle(bundle: DatasetBundle, directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    edges = bundle.graph.edge_list()
    pd.DataFrame(edges).to_csv(os.path.join(directory, EDGES_FILE), sep='\t', header=False, index=False)
    pd.DataFrame(bundle.features).to_csv(os.path.join(directory, FEATURES_FILE), header=False, index=False,
                                         float_format='%.17g')
    pd.DataFrame(bundle.labels.values).to_csv(os.path.join(directory, LABELS_FILE), header=False, index=False)
    meta = {
        'name': bundle.name,
        'num_nodes': bundle.num_nodes,
        'num_features': bundle.num_features,
        'num_classes': bundle.num_classes,
        'sparse': False,
    }
    with open(os.path.join(directory, META_FILE), 'w') as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    if bundle.splits:
        with open(os.path.join(directory, SPLITS_FILE), 'w') as f:
            json.dump([s.to_dict() for s in bundle.splits], f)
    logger.info(f"Saved bundle '{bundle.name}' to {directory}")
    return directory


def sample_splits(labels: Labels, policy: str, seed: int, index: int = 0) -> DataSplit:
    """
    planetoid: 20 per class train, 500 valid and 1000 test from the remainder.
    fractional: 50% / 25% / 25% of all nodes.
    per_class: 20 per class train, 30 per class valid, remainder test.
    """
    if policy not in SPLIT_POLICIES:
        raise ValueError(f"Unknown split policy '{policy}'. Expected one of {SPLIT_POLICIES}")
    rng = derive_rng(seed, 'split', index)
    values = labels.values
    n = values.shape[0]

    if policy == 'fractional':
        order = rng.permutation(n)
        n_train, n_valid = int(FRACTIONS[0] * n), int(FRACTIONS[1] * n)
        split = DataSplit(np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_valid]),
                          np.sort(order[n_train + n_valid:]))
        split.validate(n)
        return split

    per_class_valid = PER_CLASS_VALID if policy == 'per_class' else 0
    need = PER_CLASS_TRAIN + per_class_valid if policy == 'per_class' else PLANETOID_TRAIN_PER_CLASS
    train, valid, rest = [], [], []
    for c in range(labels.num_classes):
        members = rng.permutation(np.flatnonzero(values == c))
        if members.size < need:
            raise GraphValidationError(
                f"class {c} has {members.size} nodes; the {policy} policy needs at least {need}")
        n_train = PLANETOID_TRAIN_PER_CLASS if policy == 'planetoid' else PER_CLASS_TRAIN
        train.append(members[:n_train])
        valid.append(members[n_train:n_train + per_class_valid])
        rest.append(members[n_train + per_class_valid:])
    train, valid, rest = np.concatenate(train), np.concatenate(valid), np.concatenate(rest)

    if policy == 'per_class':
        split = DataSplit(np.sort(train), np.sort(valid), np.sort(rest))
    else:
        rest = rng.permutation(np.sort(rest))
        if rest.size < PLANETOID_NUM_VALID + PLANETOID_NUM_TEST:
            raise GraphValidationError(
                f"planetoid policy needs {PLANETOID_NUM_VALID + PLANETOID_NUM_TEST} non-train nodes, "
                f"only {rest.size} remain")
        split = DataSplit(np.sort(train), np.sort(rest[:PLANETOID_NUM_VALID]),
                          np.sort(rest[PLANETOID_NUM_VALID:PLANETOID_NUM_VALID + PLANETOID_NUM_TEST]))
    split.validate(n)
    return split


def describe_bundle(bundle: DatasetBundle) -> Dict[str, Any]:
    """Dataset statistics: classes, nodes, edges, features, average degree, edge homophily."""
    return {
        'name': bundle.name,
        'classes': bundle.num_classes,
        'nodes': bundle.num_nodes,
        'edges': bundle.graph.num_edges,
        'features': bundle.num_features,
        'degree': float(degrees(bundle.graph).mean()) if bundle.num_nodes else 0.0,
        'edge_homophily': edge_homophily(bundle.graph, bundle.labels) if bundle.graph.num_edges else 0.0,
    }


def export_csv(table: Union[pd.DataFrame, Sequence[Dict[str, Any]]], path: str,
               columns: Optional[Iterable[str]] = None) -> str:
    """
    Write a table as UTF-8, RFC-4180 style CSV. An empty table with known
    columns produces a header-only file.
    """
    if isinstance(table, pd.DataFrame):
        frame = table if columns is None else table.loc[:, list(columns)]
    else:
        frame = pd.DataFrame(list(table), columns=list(columns) if columns is not None else None)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, encoding='utf-8', lineterminator='\r\n', float_format='%.10g')
    return path


def export_run(record: Any, path: str) -> str:
    """Serialize a run record (anything with to_dict()) to pretty, key-sorted JSON."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(record.to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_run(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Run record not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
