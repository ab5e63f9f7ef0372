import numpy as np
import pytest

from graph.graph_core import (
    DataSplit,
    Graph,
    GraphValidationError,
    Labels,
    build_graph,
    check_graph,
    degrees,
    disjoint_union,
    edge_homophily,
    normalized_adjacency,
    relabel,
    validate,
)


def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


def test_build_graph_symmetrizes_and_dedups():
    g, stats = build_graph(4, [(0, 1), (1, 0), (2, 3), (2, 3), (1, 1)])
    assert g.num_edges == 2
    assert stats.duplicates_removed == 2
    assert stats.self_loops_removed == 1
    assert validate(g) == []
    assert g.edge_list().tolist() == [[0, 1], [2, 3]]


def test_build_graph_rejects_out_of_range_endpoint():
    with pytest.raises(GraphValidationError):
        build_graph(3, [(0, 3)])


def test_empty_graph_is_valid():
    g = Graph.from_edges(5, [])
    assert g.num_edges == 0
    assert validate(g) == []
    assert degrees(g).tolist() == [0] * 5


def test_neighbors_are_sorted():
    g = Graph.from_edges(4, [(0, 3), (0, 1), (0, 2)])
    assert g.neighbors(0).tolist() == [1, 2, 3]
    assert g.neighbors(3).tolist() == [0]


def test_validate_reports_asymmetry():
    g = Graph(num_nodes=2, row_offsets=np.array([0, 1, 1]), col_indices=np.array([1]))
    problems = validate(g)
    assert any("symmetric" in p for p in problems)
    with pytest.raises(GraphValidationError):
        check_graph(g)


def test_validate_reports_bad_offsets():
    g = Graph(num_nodes=2, row_offsets=np.array([0, 1]), col_indices=np.array([1]))
    assert validate(g)


def test_edge_homophily_values():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert edge_homophily(g, Labels(np.array([0, 0, 1, 1]), 2)) == pytest.approx(2 / 3)
    assert edge_homophily(g, Labels(np.array([0, 0, 0, 0]), 2)) == 1.0
    assert edge_homophily(g, Labels(np.array([0, 1, 0, 1]), 2)) == 0.0


def test_edge_homophily_edgeless_warns():
    g = Graph.from_edges(3, [])
    with pytest.warns(RuntimeWarning):
        assert edge_homophily(g, Labels(np.array([0, 1, 0]), 2)) == 0.0


def test_edge_homophily_length_mismatch():
    with pytest.raises(GraphValidationError):
        edge_homophily(path3(), Labels(np.array([0, 1]), 2))


def test_labels_validation():
    with pytest.raises(GraphValidationError):
        Labels(np.array([0, 0]), 1)
    with pytest.raises(GraphValidationError):
        Labels(np.array([0, 2]), 2)


def test_normalized_adjacency_path():
    a_hat = normalized_adjacency(path3()).toarray()
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(a_hat, [[0, s, 0], [s, 0, s], [0, s, 0]])
    np.testing.assert_allclose(a_hat, a_hat.T)


def test_normalized_adjacency_isolated_row_is_zero():
    g = Graph.from_edges(3, [(0, 1)])
    a_hat = normalized_adjacency(g).toarray()
    assert np.all(a_hat[2] == 0)


def test_normalized_adjacency_self_loops_has_unit_spectral_radius():
    g = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])
    eig = np.linalg.eigvalsh(normalized_adjacency(g, self_loops=True).toarray())
    assert eig.max() == pytest.approx(1.0)


def test_relabel_preserves_degree_multiset():
    g = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    h = relabel(g, np.array([3, 2, 1, 0]))
    assert degrees(h).tolist() == [1, 1, 1, 3]
    assert sorted(degrees(h).tolist()) == sorted(degrees(g).tolist())


def test_disjoint_union_offsets_second_graph():
    u = disjoint_union(path3(), Graph.from_edges(2, [(0, 1)]))
    assert u.num_nodes == 5
    assert u.edge_list().tolist() == [[0, 1], [1, 2], [3, 4]]


def test_graph_equality():
    assert path3() == Graph.from_edges(3, [(2, 1), (1, 0)])
    assert path3() != Graph.from_edges(3, [(0, 1)])


def test_split_validation():
    DataSplit([0], [1], [2]).validate(3)
    with pytest.raises(GraphValidationError):
        DataSplit([0], [0], [2]).validate(3)
    with pytest.raises(GraphValidationError):
        DataSplit([], [1], [2]).validate(3)
    with pytest.raises(GraphValidationError):
        DataSplit([0], [1], [5]).validate(3)
