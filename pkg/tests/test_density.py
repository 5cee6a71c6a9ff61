from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from hcot import density, geodesy, otcore
from hcot.density import GridField
from hcot.otcore import DiscreteMeasure

BIG = GridField([-1.5, -1.5, -2.5], [2.5, 2.5, 3.5], (16, 16, 16))


def _plan(seed, k=8):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure.normalized(rng.uniform(0, 1, (k, 3)), rng.uniform(0.1, 1, k))
    nu = DiscreteMeasure.normalized(rng.uniform(0, 1, (k, 3)), rng.uniform(0.1, 1, k))
    return otcore.solve_kantorovich(mu, nu)


def test_grid_field_basics():
    g = GridField([0, 0, 0], [1, 2, 4], (2, 2, 2), np.ones(8) / 8)
    assert g.cell_volume == pytest.approx(1.0)
    assert g.mass() == pytest.approx(1.0)
    flat, inside = g.locate([[0.1, 0.1, 0.1], [0.9, 1.9, 3.9], [2, 0, 0]])
    np.testing.assert_array_equal(flat[:2], [0, 7])
    np.testing.assert_array_equal(inside, [True, True, False])
    assert g.value_at([5.0, 0, 0]) == 0.0
    assert g.to_csv().splitlines()[0] == "cell,value"
    with pytest.raises(ValueError):
        GridField([0, 0], [1, 1, 1], (2, 2, 2))


def test_lp_norm_of_uniform_density():
    f = density.ball_field([0, 0, 0], 0.5, [-0.5] * 3, [0.5] * 3, (16, 16, 16))
    vol = np.count_nonzero(f.values) * f.cell_volume
    for p in (1.0, 1.2, 2.0):
        assert density.lp_norm(f, p).norm == pytest.approx(vol ** ((1 - p) / p), rel=1e-12)
    assert density.lp_norm(f, np.inf).norm == pytest.approx(1 / vol)
    with pytest.raises(ValueError):
        density.lp_norm(f, 0.5)


def test_interpolation_endpoints_and_mass():
    res = _plan(0, 4)
    m0 = density.interpolate(res.plan, 0.0)
    assert {tuple(p) for p in m0.points} <= {tuple(p) for p in res.plan.source.points}
    m1 = density.interpolate(res.plan, 1.0)
    assert {tuple(p) for p in m1.points} <= {tuple(p) for p in res.plan.target.points}
    for t in np.linspace(0, 1, 9):
        assert density.interpolate(res.plan, t).weights.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_transport_density_mass_identity(seed):
    res = _plan(seed)
    field = density.transport_density(res.plan, BIG, steps=1024)
    assert field.mass() == pytest.approx(res.value, abs=1e-6)


def test_transport_density_of_a_segment():
    mu = DiscreteMeasure.dirac([0.0, 0.0, 0.0])
    nu = DiscreteMeasure.dirac([1.0, 0.0, 0.0])
    plan = otcore.TransportPlan([[1.0]], mu, nu)
    grid = GridField([0.0, -0.5, -0.5], [1.0, 0.5, 0.5], (4, 1, 1))
    field = density.transport_density(plan, grid, steps=1024)
    np.testing.assert_allclose(field.values.ravel() * grid.cell_volume, 0.25, atol=1e-15)


def test_transport_density_is_linear_in_the_plan():
    res = _plan(5, 4)
    g1 = np.outer(res.plan.source.weights, res.plan.target.weights)
    p_a = res.plan
    p_b = otcore.TransportPlan(g1, res.plan.source, res.plan.target)
    mix = otcore.TransportPlan(0.3 * p_a.gamma + 0.7 * p_b.gamma, p_a.source, p_a.target)
    lhs = density.transport_density(mix, BIG, 256).values
    rhs = 0.3 * density.transport_density(p_a, BIG, 256).values + 0.7 * density.transport_density(p_b, BIG, 256).values
    assert np.abs(lhs - rhs).max() * BIG.cell_volume <= 1e-9


def test_transport_density_rejects_small_box():
    res = _plan(1, 4)
    with pytest.raises(ValueError):
        density.transport_density(res.plan, GridField([0.4] * 3, [0.6] * 3, (2, 2, 2)))


def _ball(shape=(16, 16, 16)):
    return density.ball_field([0, 0, 0], 0.5, [-0.5] * 3, [0.5] * 3, shape)


def test_norm_estimator_against_cell_quadrature():
    # single target atom: the interpolation is x -> S_t(x, y); quadrature over the cells
    # with a finite-difference Jacobian is an independent estimate of ||mu_t||_p
    mu = _ball()
    y = np.array([1.5, 0.0, 0.3])
    nu = DiscreteMeasure.dirac(y)
    t, p = 0.5, 1.2
    rep = density.interpolation_bound_check(mu, nu, t, p, samples=100_000, seed=3)
    cells = mu.centers().reshape(-1, 3)
    rho = mu.values.ravel()
    keep = rho > 0
    det = geodesy.jacobian_det(cells[keep], y, t)
    ref = (np.sum(rho[keep] ** p * det ** (1 - p)) * mu.cell_volume) ** (1 / p)
    assert rep.norm_t == pytest.approx(ref, abs=3 * rep.se_norm_t + 2e-3 * ref)
    assert rep.holds


def test_interpolation_bound_and_vacuous_two_sided():
    mu = _ball()
    nu = DiscreteMeasure([[1.5, 0.0, 0.3], [-0.4, 1.4, -0.2]], [0.5, 0.5])
    rep = density.interpolation_bound_check(mu, nu, 0.5, 1.2, samples=20_000, seed=0)
    assert rep.holds and rep.norm_t <= rep.bound * 1.1
    assert rep.two_sided_bound == np.inf and rep.two_sided_holds
    assert sum(rep.assignment_masses) == 20_000
    np.testing.assert_allclose(np.array(rep.assignment_masses) / 20_000, nu.weights, atol=1e-3)


def test_target_side_reverses_time():
    mu = _ball()
    nu = DiscreteMeasure.dirac([1.5, 0.0, 0.3])
    a = density.interpolation_bound_check(mu, nu, 0.25, 1.2, samples=5000, seed=1, side="source")
    b = density.interpolation_bound_check(mu, nu, 0.75, 1.2, samples=5000, seed=1, side="target")
    assert a.norm_t == pytest.approx(b.norm_t, rel=1e-12)
    assert a.bound == pytest.approx(b.bound, rel=1e-12)


def test_semidiscrete_assignment_hits_target_masses():
    rng = np.random.default_rng(4)
    x = density.sample_field(_ball(), 10_000, rng)
    nu = DiscreteMeasure([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]], [0.2, 0.3, 0.5])
    assign, _, _ = density.semidiscrete_assignment(x, nu)
    np.testing.assert_allclose(np.bincount(assign, minlength=3) / 10_000, nu.weights, atol=5e-4)


def test_sample_field_stays_on_support():
    f = _ball()
    pts = density.sample_field(f, 2000, np.random.default_rng(5))
    assert np.all(f.value_at(pts) > 0)


@pytest.mark.parametrize("p1,p2,n,expected", [
    (2, 1, 1, Fraction(5, 4)),
    (2, Fraction(3, 2), 1, Fraction(5, 3)),
    (3, 1, 2, Fraction(7, 6)),
])
def test_s0_exponent_values(p1, p2, n, expected):
    assert density.s0_exponent(p1, p2, n) == expected


def test_s0_exponent_float_and_errors():
    assert density.s0_exponent(2.0, 1.5, 1) == pytest.approx(5 / 3)
    with pytest.raises(ValueError):
        density.s0_exponent(1, 2, 1)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_s0_sweep_equality_only_at_p2_one(n):
    rep = density.s0_lower_bound_sweep(n)
    assert rep.ok
    assert rep.equality_only_at_p2_one
    assert len(rep.equality) == 50
    assert rep.threshold == Fraction(2 * n + 3, 2 * n + 2)


def test_s0_sweep_negative_control():
    rep = density.s0_lower_bound_sweep(1, [Fraction(11, 10)], [Fraction(21, 20)], enforce_pre=False)
    assert not rep.ok
    rep2 = density.s0_lower_bound_sweep(1, [Fraction(11, 10)], [Fraction(21, 20)])
    assert rep2.checked == 0


def test_minkowski_chain():
    mu = _ball()
    nu = DiscreteMeasure([[1.5, 0.0, 0.3], [-0.4, 1.4, -0.2]], [0.5, 0.5])
    grid = GridField([-1.0, -1.0, -1.5], [2.0, 2.0, 1.5], (24, 24, 24))
    rep = density.minkowski_chain_check(mu, nu, 1.2, grid, samples=10_000, seed=0)
    assert rep.holds and rep.lhs > 0


def test_field_from_points():
    g = GridField([0, 0, 0], [1, 1, 1], (2, 2, 2))
    f = density.field_from_points([[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]], [0.25, 0.75], g)
    assert f.mass() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        density.field_from_points([[2.0, 0, 0]], [1.0], g)
