import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radiotrace import graph
from radiotrace.sim import L_SHAPE

UNIT = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def square(side):
    return UNIT * side


def test_polygon_helpers():
    assert graph.polygon_area(UNIT) == pytest.approx(1.0)
    assert graph.polygon_area(L_SHAPE) == pytest.approx(14 * 14 - 7 * 7)
    closed = np.vstack([UNIT, UNIT[:1]])
    assert graph.as_polygon(closed).shape == (4, 2)
    with pytest.raises(ValueError):
        graph.as_polygon(np.zeros((2, 2)))


def test_point_in_polygon_boundary_inside():
    assert graph.point_in_polygon([0.5, 0.5], UNIT)
    assert graph.point_in_polygon([1.0, 0.3], UNIT)
    assert graph.point_in_polygon([0.0, 0.0], UNIT)
    assert not graph.point_in_polygon([1.0 + 1e-6, 0.3], UNIT)
    assert not graph.point_in_polygon([10.0, 10.0], L_SHAPE)
    assert graph.point_in_polygon([7.0, 10.0], L_SHAPE)


def test_unit_square_nodes_row_major():
    nodes, rc = graph.build_nodes(UNIT, 0.5)
    np.testing.assert_allclose(nodes, [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    np.testing.assert_array_equal(rc, [[0, 0], [0, 1], [1, 0], [1, 1]])


def test_spacing_too_large():
    with pytest.raises(ValueError):
        graph.build_nodes(UNIT, 2.0)
    with pytest.raises(ValueError):
        graph.build_nodes(UNIT, 0.0)


def test_lshape_nodes_avoid_notch():
    nodes, _ = graph.build_nodes(L_SHAPE, 0.5)
    in_notch = (nodes[:, 0] > 7.0) & (nodes[:, 1] > 7.0)
    assert not in_notch.any()
    assert graph.points_in_polygon(nodes, L_SHAPE).all()


def test_segment_in_region_examples():
    assert graph.segment_in_region([0.1, 0.1], [0.9, 0.8], UNIT)
    assert not graph.segment_in_region([12.0, 3.0], [3.0, 12.0], L_SHAPE)
    assert graph.segment_in_region([3.0, 3.0], [3.0, 3.0], L_SHAPE)
    assert graph.segment_in_region([1.0, 6.0], [13.0, 6.0], L_SHAPE)
    # one endpoint outside
    assert not graph.segment_in_region([0.5, 0.5], [1.5, 0.5], UNIT)


def test_segment_through_reflex_corner():
    # grazes the notch corner (7, 7) from inside both arms
    assert graph.segment_in_region([6.0, 8.0], [8.0, 6.0], L_SHAPE)
    assert not graph.segment_in_region([6.0, 6.0], [8.0, 8.0], L_SHAPE)
    # runs along the notch wall
    assert graph.segment_in_region([7.0, 8.0], [7.0, 13.0], L_SHAPE)


def test_zero_dmax_only_self_loops():
    nodes, _ = graph.build_nodes(UNIT, 0.25)
    src, dst = graph.build_edges(nodes, 0.0, UNIT)
    np.testing.assert_array_equal(src, dst)
    assert len(src) == len(nodes)


def test_edge_at_exact_dmax():
    nodes = np.array([[0.2, 0.5], [0.7, 0.5]])
    src, dst = graph.build_edges(nodes, 0.5, UNIT)
    assert len(src) == 4
    src, dst = graph.build_edges(nodes, 0.5 - 1e-6, UNIT)
    assert len(src) == 2


def test_three_by_three_eight_connected():
    g = graph.build_graph(square(3.0), 1.0, np.sqrt(2.0))
    assert g.n_nodes == 9
    degrees = np.diff(g.indptr)
    # corner 3 neighbors, edge 5, center 8, plus self
    assert sorted(degrees.tolist()) == [4, 4, 4, 4, 6, 6, 6, 6, 9]
    center = int(np.argmin(np.linalg.norm(g.nodes - 1.5, axis=1)))
    assert degrees[center] == 9


def test_isolated_node_row():
    g = graph.graph_from_nodes(np.array([[0.5, 0.5]]), UNIT, 1.0, 1.0)
    assert g.n_edges == 1
    assert np.exp(g.log_p[0]) == pytest.approx(1.0)


def test_two_node_kernel_closed_form():
    region = np.array([[0, 0], [2, 0], [2, 1], [0, 1]], float)
    g = graph.graph_from_nodes(np.array([[0.5, 0.5], [1.5, 0.5]]), region, 1.0, 1.0)
    assert np.exp(g.edge_log_prob(0, 0)) == pytest.approx(0.6225, abs=1e-4)
    assert np.exp(g.edge_log_prob(0, 1)) == pytest.approx(0.3775, abs=1e-4)
    assert g.edge_log_prob(0, 1) == pytest.approx(-np.log1p(np.exp(0.5)))


def test_missing_edge_log_prob():
    g = graph.build_graph(UNIT, 0.25, 0.3)
    far = int(np.argmax(np.linalg.norm(g.nodes - g.nodes[0], axis=1)))
    assert g.edge_log_prob(0, far) == -np.inf


def test_default_sigma_and_validation():
    g = graph.build_graph(UNIT, 0.25, 0.6)
    assert g.sigma_m == pytest.approx(0.3)
    with pytest.raises(ValueError):
        graph.build_graph(UNIT, 0.25, -1.0)
    with pytest.raises(ValueError):
        graph.build_graph(UNIT, 0.25, 0.5, sigma_m=0.0)


def test_lshape_edges_stay_inside_dense_sampling():
    g = graph.build_graph(L_SHAPE, 1.0, 1.5)
    s = np.linspace(0, 1, 101)
    for i, j in zip(g.src, g.dst):
        pts = g.nodes[i][None] + s[:, None] * (g.nodes[j] - g.nodes[i])[None]
        assert graph.points_in_polygon(pts, L_SHAPE).all()


def test_nearest_node_and_neighbors():
    g = graph.build_graph(UNIT, 0.5, 0.5)
    np.testing.assert_array_equal(g.nearest_node([[0.3, 0.2], [0.8, 0.8]]), [0, 3])
    np.testing.assert_array_equal(g.neighbors(0), [0, 1, 2])


def test_export_csv(tmp_path):
    g = graph.build_graph(UNIT, 0.5, 0.5)
    graph.export_graph_csv(g, tmp_path / "n.csv", tmp_path / "e.csv")
    nodes = np.loadtxt(tmp_path / "n.csv", delimiter=",", skiprows=1)
    edges = np.loadtxt(tmp_path / "e.csv", delimiter=",", skiprows=1)
    assert nodes.shape == (4, 5)
    assert edges.shape == (g.n_edges, 4)
    for i in range(4):
        assert edges[edges[:, 0] == i, 3].sum() == pytest.approx(1.0, abs=1e-9)


@st.composite
def random_graphs(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(1, 25))
    nodes = rng.uniform(0.0, 3.0, size=(n, 2))
    d_max = draw(st.floats(0.0, 2.0))
    sigma = draw(st.floats(0.05, 2.0))
    return graph.graph_from_nodes(nodes, square(3.0), d_max, sigma)


@settings(max_examples=100, deadline=None)
@given(g=random_graphs())
def test_transitions_row_stochastic(g):
    P = g.transitions
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-9)
    assert P.nnz == g.n_edges
    assert (P.data > 0).all()


@settings(max_examples=100, deadline=None)
@given(g=random_graphs())
def test_edges_symmetric_and_monotone(g):
    pairs = set(zip(g.src.tolist(), g.dst.tolist()))
    assert all((j, i) in pairs for i, j in pairs)
    assert all((i, i) in pairs for i in range(g.n_nodes))
    P = g.transitions.toarray()
    for i in range(g.n_nodes):
        js = np.flatnonzero(P[i])
        d = np.linalg.norm(g.nodes[js] - g.nodes[i], axis=1)
        order = np.argsort(d)
        strictly_closer = np.diff(d[order]) > 1e-12
        assert np.all(np.diff(P[i, js][order])[strictly_closer] < 0)
