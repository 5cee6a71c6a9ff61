from __future__ import annotations

import numpy as np
import pytest

from hcot import hgroup, otcore
from hcot.congestion import lattice
from hcot.congestion.lattice import build_lattice, c_phi, snap_measure, weighted_length
from hcot.density import GridField


@pytest.fixture(scope="module")
def unit():
    return build_lattice([0, 0, -0.25], [1, 1, 1.25], 0.5)


def test_first_step_from_identity(unit):
    e = unit.locate_point([0, 0, 0])[0]
    np.testing.assert_allclose(unit.coords(unit.step([e], 0, 1)[0]), [0.5, 0.0, 0.0])


def test_step_with_vertical_shift(unit):
    q = unit.locate_point([0.5, 0.5, 0.0])[0]
    head = unit.step([q], 0, 1)[0]
    np.testing.assert_allclose(unit.coords(head), [1.0, 0.5, -0.125])
    assert unit.vertical_spacing == 0.125


def test_edges_are_exact_group_translations():
    lat = build_lattice([-0.5, -0.5, -0.5, -0.5, -0.2], [0.5, 0.5, 0.5, 0.5, 0.2], 0.25)
    net = lat.network
    tail, head = lat.coords(net.tail), lat.coords(net.head)
    from hcot.congestion.wardrop import edge_axes
    step = np.zeros_like(tail)
    step[np.arange(len(tail)), edge_axes(lat)] = lat.h
    np.testing.assert_array_equal(hgroup.compose(tail, step), head)


def test_degree_bounded_by_stencil():
    for n, lo, hi in [(1, [0, 0, -0.25], [1, 1, 0.25]), (2, [0] * 4 + [-0.1], [0.5] * 4 + [0.1])]:
        lat = build_lattice(lo, hi, 0.25)
        deg = np.bincount(np.concatenate([lat.network.tail, lat.network.head]), minlength=lat.num_nodes)
        assert deg.max() <= 4 * n
        assert deg.max() == 4 * n


def test_neighbors_symmetric(unit):
    for node in range(unit.num_nodes):
        for v in unit.neighbors(node):
            assert node in unit.neighbors(v)


def test_build_errors():
    with pytest.raises(ValueError):
        build_lattice([0.1, 0.1, 0.01], [0.2, 0.2, 0.02], 0.5)
    with pytest.raises(ValueError):
        build_lattice([0, 0, 0], [1, 1, 1], 0.0)
    with pytest.raises(ValueError):
        build_lattice([0, 0], [1, 1], 0.5)


def test_axis_aligned_distances_exact():
    lat = build_lattice([0, 0, -0.125], [1, 1, 0.125], 1 / 16)
    src = lat.node_id([[0, 0, 0]])
    dst = lat.node_id([[m, 0, 0] for m in range(1, 17)] + [[0, m, 0] for m in range(1, 17)])
    table = c_phi(lat, 1.0, src, dst)[0]
    expected = np.concatenate([np.arange(1, 17), np.arange(1, 17)]) / 16
    np.testing.assert_array_equal(table, expected)
    # explicit Dijkstra agrees with the implicit BFS
    np.testing.assert_allclose(c_phi(lat, np.ones(lat.num_nodes), src, dst)[0], expected, rtol=1e-15)


def test_scalar_weight_scales_distances():
    lat = build_lattice([0, 0, -0.25], [1, 1, 0.25], 0.125)
    src, dst = [0], [lat.num_nodes - 1, lat.num_nodes // 2]
    np.testing.assert_allclose(c_phi(lat, 3.0, src, dst), 3 * c_phi(lat, 1.0, src, dst))


def test_triangle_inequality_random_weights():
    lat = build_lattice([0, 0, -0.125], [0.5, 0.5, 0.125], 0.125)
    rng = np.random.default_rng(0)
    nodes = rng.choice(lat.num_nodes, 10, replace=False)
    D = c_phi(lat, rng.uniform(0.1, 2, lat.num_nodes), nodes, nodes)
    for i in range(10):
        for j in range(10):
            for k in range(10):
                if np.isfinite(D[i, j]) and np.isfinite(D[j, k]):
                    assert D[i, k] <= D[i, j] + D[j, k] + 1e-12


def test_disconnected_pairs_are_infinite():
    lat = build_lattice([0, 0, 0], [0.5, 0.5, 0], 0.25)
    src = lat.node_id([[0, 0, 0]])
    dst = lat.node_id([[1, 0, 0], [1, 1, 0]])
    table = c_phi(lat, 1.0, src, dst)[0]
    assert table[0] == 0.25 and table[1] == np.inf
    assert c_phi(lat, np.ones(lat.num_nodes), src, dst)[0][1] == np.inf


def _path(lat, start, moves):
    nodes = [start]
    for j, s in moves:
        nodes.append(int(lat.step([nodes[-1]], j, s)[0]))
    return nodes


def test_weighted_length_rules(unit):
    start = unit.locate_point([0, 0, 0])[0]
    path = _path(unit, start, [(0, 1), (1, 1), (0, 1)])
    assert weighted_length(unit, 1.0, path) == pytest.approx(1.5)
    assert weighted_length(unit, 2.5, path) == pytest.approx(2.5 * 1.5)
    # trapezoid is exact for a weight linear along the edge
    phi = unit.coords(np.arange(unit.num_nodes))[:, 0] + 1.0
    edge = path[:2]
    assert weighted_length(unit, phi, edge) == pytest.approx(0.5 * (1.0 + 1.5) / 2)
    with pytest.raises(ValueError):
        weighted_length(unit, 1.0, [path[0], path[2]])
    with pytest.raises(ValueError):
        weighted_length(unit, -1.0, path)


def test_cphi_below_every_path_length():
    lat = build_lattice([0, 0, -0.125], [0.5, 0.5, 0.125], 0.125)
    rng = np.random.default_rng(1)
    phi = rng.uniform(0.2, 3, lat.num_nodes)
    start = lat.locate_point([0, 0, 0])[0]
    for _ in range(20):
        moves = [(int(rng.integers(2)), 1) for _ in range(4)]
        path = _path(lat, start, moves)
        if min(path) < 0:
            continue
        assert c_phi(lat, phi, [path[0]], [path[-1]])[0, 0] <= weighted_length(lat, phi, path) + 1e-12


def test_snap_atom_on_node_unchanged(unit):
    m = snap_measure(unit, otcore.DiscreteMeasure([[0.5, 0.5, 0.125], [0, 0, 0]], [0.3, 0.7]))
    np.testing.assert_allclose(unit.coords(m.nodes), [[0, 0, 0], [0.5, 0.5, 0.125]])
    np.testing.assert_allclose(m.mass, [0.7, 0.3])


def test_snap_ties_go_to_lower_index(unit):
    m = snap_measure(unit, otcore.DiscreteMeasure([[0.25, 0.0, 0.0]], [1.0]))
    np.testing.assert_allclose(unit.coords(m.nodes), [[0.0, 0.0, 0.0]])
    m = snap_measure(unit, otcore.DiscreteMeasure([[0.25, 0.75, 0.0625]], [1.0]))
    np.testing.assert_allclose(unit.coords(m.nodes), [[0.0, 0.5, 0.0]])


def test_snap_grid_conserves_mass(unit):
    rng = np.random.default_rng(2)
    g = GridField([0, 0, -0.2], [1, 1, 1.2], (5, 5, 5), rng.uniform(0, 1, 125))
    g = g.with_values(g.values / g.mass())
    m = snap_measure(unit, g)
    assert m.total == pytest.approx(1.0, abs=1e-12)


def test_vertical_pair_coarse_lattice_exceeds_cc_distance():
    lat = build_lattice([-0.25, -0.25, -1 / 32], [1.25, 1.25, 1 + 1 / 32], 1 / 8)
    src, dst = lat.locate_point([[0, 0, 0], [0, 0, 1]])
    d = c_phi(lat, 1.0, [src], [dst])[0, 0]
    assert np.sqrt(4 * np.pi) < d <= 4.0 + 1e-12


def test_holder_diagnostic_exponent():
    lat = build_lattice([0, 0, -0.25], [1, 1, 0.25], 1 / 16)
    slope, alpha = lattice.holder_diagnostic(lat, 1.25, seed=0)
    assert alpha == pytest.approx(0.2)
    assert slope >= alpha - 0.1
