from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcot import geodesy, otcore
from hcot.otcore import DiscreteMeasure


def _vertices(a, b):
    """Every vertex of the transportation polytope, by basis enumeration."""
    m, k = len(a), len(b)
    A = np.zeros((m + k, m * k))
    for i in range(m):
        A[i, i * k:(i + 1) * k] = 1
    for j in range(k):
        A[m + j, j::k] = 1
    rhs = np.concatenate([a, b])
    out = []
    for cols in itertools.combinations(range(m * k), m + k - 1):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < m + k - 1:
            continue
        sol, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.abs(sub @ sol - rhs).max() > 1e-12 or sol.min() < -1e-12:
            continue
        x = np.zeros(m * k)
        x[list(cols)] = np.clip(sol, 0, None)
        out.append(x.reshape(m, k))
    return out


def _random_instance(seed, m, k):
    rng = np.random.default_rng(seed)
    wa, wb = rng.uniform(0.1, 1, m), rng.uniform(0.1, 1, k)
    mu = DiscreteMeasure.normalized(rng.uniform(-1, 1, (m, 3)), wa)
    nu = DiscreteMeasure.normalized(rng.uniform(-1, 1, (k, 3)), wb)
    return mu, nu


@pytest.mark.parametrize("seed,m,k", [(0, 2, 2), (1, 2, 3), (2, 3, 3), (3, 4, 3), (4, 4, 4), (5, 3, 4)])
def test_matches_vertex_enumeration(seed, m, k):
    mu, nu = _random_instance(seed, m, k)
    res = otcore.solve_kantorovich(mu, nu)
    best = min(float(np.sum(v * res.cost)) for v in _vertices(mu.weights, nu.weights))
    assert res.value == pytest.approx(best, abs=1e-9)
    assert abs(res.duality_gap) <= 1e-9
    assert res.plan.marginal_error() <= 1e-12


def test_kantorovich_potential_is_lipschitz_and_tight():
    mu, nu = _random_instance(7, 4, 4)
    res = otcore.solve_kantorovich(mu, nu)
    rep = otcore.verify_potential(res.plan, res.potential)
    assert rep.ok, rep
    assert res.potential.value(mu, nu) == pytest.approx(res.value, abs=1e-9)


def test_cyclical_monotonicity_on_optimal_plan():
    mu, nu = _random_instance(8, 4, 4)
    res = otcore.solve_kantorovich(mu, nu)
    rep = otcore.check_cyclical_monotonicity(res.plan, res.cost)
    assert rep.exhaustive and rep.ok(1e-9)


def test_cyclical_monotonicity_flags_bad_plan():
    mu = DiscreteMeasure([[0, 0, 0], [1, 0, 0]], [0.5, 0.5])
    nu = DiscreteMeasure([[0, 0.1, 0], [1, 0.1, 0]], [0.5, 0.5])
    crossed = otcore.TransportPlan([[0, 0.5], [0.5, 0]], mu, nu)
    rep = otcore.check_cyclical_monotonicity(crossed, otcore.cost_matrix(mu, nu))
    assert rep.worst_violation > 1.0
    assert rep.worst_cycle == ((0, 1), (1, 0))


def test_single_atom_target():
    mu, _ = _random_instance(9, 3, 1)
    nu = DiscreteMeasure.dirac([0.0, 0.0, 0.0])
    res = otcore.solve_kantorovich(mu, nu)
    np.testing.assert_allclose(res.plan.gamma[:, 0], mu.weights)
    expected = float(mu.weights @ geodesy.cc_distance(mu.points, nu.points[0]))
    assert res.value == pytest.approx(expected, rel=1e-12)


def test_squared_cost_potentials():
    mu, nu = _random_instance(10, 3, 3)
    res = otcore.solve_kantorovich(mu, nu, kind="cc_squared")
    f, g = res.potential.u_source, -res.potential.u_target
    assert np.all(f[:, None] + g[None, :] <= res.cost + 1e-9)
    assert abs(res.duality_gap) <= 1e-9


def _on_one_geodesic(seed):
    rng = np.random.default_rng(seed)
    p = geodesy.solve_geodesic([0.0, 0.0, 0.0], rng.uniform(-1, 1, 3)).params
    s = np.sort(rng.uniform(0, 1, 6))
    pts = geodesy.geodesic_point(p, s)
    src = rng.permutation(6)[:3]
    dst = np.setdiff1d(np.arange(6), src)
    src = np.sort(src)
    a, b = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
    return DiscreteMeasure(pts[src], a), DiscreteMeasure(pts[dst], b)


@pytest.mark.parametrize("seed", range(6))
def test_secondary_is_monotone_on_a_geodesic(seed):
    mu, nu = _on_one_geodesic(seed)
    plan = otcore.solve_secondary(mu, nu)
    np.testing.assert_allclose(plan.gamma, otcore.monotone_coupling(mu.weights, nu.weights), atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_secondary_matches_lexicographic_enumeration(seed):
    mu, nu = _random_instance(20 + seed, 3, 3)
    D = otcore.cost_matrix(mu, nu)
    verts = _vertices(mu.weights, nu.weights)
    opt1 = min(float(np.sum(v * D)) for v in verts)
    face = [v for v in verts if np.sum(v * D) <= opt1 + 1e-10]
    opt2 = min(float(np.sum(v * D**2)) for v in face)
    plan = otcore.solve_secondary(mu, nu)
    assert plan.cost(D) == pytest.approx(opt1, abs=1e-9)
    assert plan.cost(D**2) == pytest.approx(opt2, abs=1e-9)


def test_secondary_breaks_ties_of_primary():
    # collinear on the x_1 axis: every coupling costs the same, the squared cost picks the sorted one
    mu = DiscreteMeasure([[0, 0, 0], [1, 0, 0]], [0.5, 0.5])
    nu = DiscreteMeasure([[2, 0, 0], [3, 0, 0]], [0.5, 0.5])
    plan = otcore.solve_secondary(mu, nu)
    np.testing.assert_allclose(plan.gamma, [[0.5, 0], [0, 0.5]], atol=1e-12)


def test_monotone_coupling_north_west():
    g = otcore.monotone_coupling([0.5, 0.5], [0.25, 0.75])
    np.testing.assert_allclose(g, [[0.25, 0.25], [0.0, 0.5]])


def test_solve_transport_accepts_unnormalized_mass():
    gamma, value, f, g = otcore.solve_transport([2.0, 1.0], [1.0, 2.0], [[1.0, 2.0], [3.0, 1.0]])
    np.testing.assert_allclose(gamma.sum(axis=1), [2.0, 1.0])
    assert value == pytest.approx(f @ [2.0, 1.0] + g @ [1.0, 2.0])
    with pytest.raises(ValueError):
        otcore.solve_transport([1.0], [2.0], [[1.0]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10))
def test_value_scales_with_cost(seed, lam):
    mu, nu = _random_instance(seed, 3, 3)
    C = otcore.cost_matrix(mu, nu)
    base = otcore.solve_kantorovich(mu, nu, C)
    scaled = otcore.solve_kantorovich(mu, nu, lam * C)
    assert scaled.value == pytest.approx(lam * base.value, rel=1e-9, abs=1e-12)
    assert scaled.plan.cost(C) == pytest.approx(base.value, rel=1e-9, abs=1e-12)


def test_relabeling_and_w1_triangle():
    rng = np.random.default_rng(30)
    a, b, c = (_random_instance(31 + i, 4, 4)[0] for i in range(3))
    w = lambda p, q: otcore.solve_kantorovich(p, q).value
    assert w(a, c) <= w(a, b) + w(b, c) + 1e-9
    perm = rng.permutation(4)
    a2 = DiscreteMeasure(a.points[perm], a.weights[perm])
    assert w(a2, b) == pytest.approx(w(a, b), abs=1e-12)


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure([[0, 0, 0]], [0.5])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0, 0, 0], [0, 0, 0]], [0.5, 0.5])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0, 0, 0], [1, 0, 0]], [1.5, -0.5])
    m = DiscreteMeasure.from_dict({"points": [[0, 0, 0]], "weights": [1.0]})
    assert m.to_dict() == {"points": [[0.0, 0.0, 0.0]], "weights": [1.0]}


def test_cost_matrix_custom_and_errors():
    mu, nu = _random_instance(40, 2, 2)
    C = otcore.cost_matrix(mu, nu, "custom", table=[[1, 2], [3, 4]])
    assert C.shape == (2, 2)
    with pytest.raises(ValueError):
        otcore.cost_matrix(mu, nu, "custom")
    with pytest.raises(ValueError):
        otcore.cost_matrix(mu, nu, "euclid")
    with pytest.raises(ValueError):
        otcore.solve_kantorovich(mu, nu, C=[[1, np.inf], [1, 1]])
