import numpy as np
import pytest

from graph.graph_core import DataSplit, Graph, Labels
from train.prepare_dataset import DatasetBundle, save_bundle


@pytest.fixture
def rings():
    """Two 10-node rings, one per class, one-hot class features and one stored split."""
    edges = [(i, (i + 1) % 10) for i in range(10)] + [(10 + i, 10 + (i + 1) % 10) for i in range(10)]
    labels = np.repeat([0, 1], 10)
    split = DataSplit(train=[0, 1, 10, 11], valid=[2, 3, 12, 13], test=[4, 5, 6, 7, 8, 9, 14, 15, 16, 17, 18, 19])
    return DatasetBundle(graph=Graph.from_edges(20, edges), features=np.eye(2)[labels],
                         labels=Labels(labels, 2), name='rings', splits=[split])


@pytest.fixture
def rings_dir(rings, tmp_path):
    return save_bundle(rings, str(tmp_path / 'rings'))
