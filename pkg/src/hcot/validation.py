"""Invariant suites run by ``hcot validate``.

Every check uses a pinned seed and reports the measured quantity next to
its tolerance.  Checks reach library functions through their modules at
call time, so a patched function is what gets exercised.
"""

from __future__ import annotations

import math
import traceback
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from . import density, geodesy, hgroup, otcore
from .congestion import graph, lattice, wardrop

SUITES = ("group", "geodesy", "ot", "density", "congestion")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _at_most(measured, tol):
    return bool(measured <= tol), float(measured), float(tol)


def _at_least(measured, tol):
    return bool(measured >= tol), float(measured), float(tol)


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


# group


def _random_points(rng, size, n=1, scale=2.0):
    return rng.uniform(-scale, scale, (size, 2 * n + 1))


def check_group_associativity():
    rng = np.random.default_rng(0)
    worst = 0.0
    for n in (1, 2):
        a, b, c = (_random_points(rng, 500, n) for _ in range(3))
        lhs = hgroup.compose(hgroup.compose(a, b), c)
        rhs = hgroup.compose(a, hgroup.compose(b, c))
        worst = max(worst, _rel(lhs, rhs))
    return _at_most(worst, 1e-12)


def check_group_identity():
    rng = np.random.default_rng(1)
    a = _random_points(rng, 500)
    e = hgroup.identity(1)
    worst = max(_rel(hgroup.compose(a, e), a), _rel(hgroup.compose(e, a), a))
    return _at_most(worst, 1e-12)


def check_group_inverse():
    rng = np.random.default_rng(2)
    a = _random_points(rng, 500)
    inv = hgroup.inverse(a)
    worst = max(np.abs(hgroup.compose(a, inv)).max(), np.abs(hgroup.compose(inv, a)).max())
    return _at_most(worst, 1e-12)


def check_dilation_composition():
    rng = np.random.default_rng(3)
    a = _random_points(rng, 200)
    worst = 0.0
    for lam, mu in [(0.5, 3.0), (1.7, 0.2), (2.0, 2.0)]:
        worst = max(worst, _rel(hgroup.dilate(hgroup.dilate(a, mu), lam), hgroup.dilate(a, lam * mu)))
    return _at_most(worst, 1e-12)


def check_dilation_homomorphism():
    rng = np.random.default_rng(4)
    a, b = _random_points(rng, 200), _random_points(rng, 200)
    worst = 0.0
    for lam in (0.3, 1.9):
        lhs = hgroup.dilate(hgroup.compose(a, b), lam)
        rhs = hgroup.compose(hgroup.dilate(a, lam), hgroup.dilate(b, lam))
        worst = max(worst, _rel(lhs, rhs))
    return _at_most(worst, 1e-12)


def check_bracket_commutator():
    """Flows of X_j, X_{n+j}, -X_j, -X_{n+j} for time h end h^2 up the center."""
    h = 1e-3
    worst = 0.0
    for n in (1, 2):
        for j in range(n):
            q = hgroup.identity(n)
            for axis, sign in ((j, 1), (n + j, 1), (j, -1), (n + j, -1)):
                q = hgroup.horizontal_step(q, axis, sign * h)
            target = hgroup.identity(n)
            target[-1] = h * h
            worst = max(worst, float(np.max(np.abs(q - target))) / (h * h))
    return _at_most(worst, 1e-6)


# geodesy


def _unit_pairs(seed, size, n=1):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (size, 2 * n + 1)), rng.uniform(0, 1, (size, 2 * n + 1))


def check_center_distance():
    worst = 0.0
    for z in (0.25, 1.0, 4.0):
        d = float(geodesy.cc_distance(hgroup.identity(1), [0.0, 0.0, z]))
        worst = max(worst, abs(d - math.sqrt(4 * math.pi * z)) / math.sqrt(4 * math.pi * z))
    return _at_most(worst, 1e-9)


def check_metric_symmetry():
    x, y = _unit_pairs(10, 500)
    return _at_most(np.abs(geodesy.cc_distance(x, y) - geodesy.cc_distance(y, x)).max(), 1e-9)


def check_triangle_inequality():
    x, y = _unit_pairs(11, 500)
    z, _ = _unit_pairs(12, 500)
    excess = geodesy.cc_distance(x, z) - geodesy.cc_distance(x, y) - geodesy.cc_distance(y, z)
    return _at_most(max(float(excess.max()), 0.0), 1e-9)


def check_indiscernibles():
    x, y = _unit_pairs(13, 500)
    self_d = float(np.abs(geodesy.cc_distance(x, x)).max())
    min_d = float(geodesy.cc_distance(x, y).min())
    passed = self_d == 0.0 and min_d > 0.0
    return passed, self_d, 0.0


def check_round_trip():
    x, y = _unit_pairs(14, 2000)
    end = geodesy.geodesic_point(geodesy.solve_geodesic(x, y).params, 1.0)
    return _at_most(geodesy.cc_distance(end, y).max(), 1e-8)


def check_geodesic_concatenation():
    x, y = _unit_pairs(15, 500)
    t = np.random.default_rng(16).uniform(0, 1, 500)
    mid = geodesy.select_point(x, y, t)
    gap = geodesy.cc_distance(x, mid) + geodesy.cc_distance(mid, y) - geodesy.cc_distance(x, y)
    return _at_most(np.abs(gap).max(), 1e-8)


def check_speed():
    x, y = _unit_pairs(17, 500)
    params = geodesy.solve_geodesic(x, y).params
    h = 1e-3
    t = np.random.default_rng(18).uniform(0, 1 - h, 500)
    step = geodesy.cc_distance(geodesy.geodesic_point(params, t), geodesy.geodesic_point(params, t + h))
    expected = h * params.length
    return _at_most(np.max(np.abs(step - expected) / expected), 1e-6)


def check_non_branching():
    x, y = _unit_pairs(19, 300)
    outer = geodesy.solve_geodesic(x, y).params
    a, b = 0.2, 0.7
    inner = geodesy.solve_geodesic(geodesy.geodesic_point(outer, a), geodesy.geodesic_point(outer, b)).params
    # coordinates, not CC distance: d_CC turns a z rounding error e into sqrt(e)
    worst = 0.0
    for u in np.linspace(0, 1, 9):
        p = geodesy.geodesic_point(inner, u)
        q = geodesy.geodesic_point(outer, a + (b - a) * u)
        worst = max(worst, float(np.abs(p - q).max()))
    return _at_most(worst, 1e-8)


def check_jacobian_bound():
    rng = np.random.default_rng(20)
    x = rng.uniform(-1, 1, (1000, 3))
    ybar = rng.uniform(-1, 1, (1000, 3))
    t = rng.uniform(0.01, 0.99, 1000)
    ratio = geodesy.jacobian_det(x, ybar, t) / (1 - t) ** 5
    return _at_least(ratio.min(), 1 - 1e-4)


# ot


def _random_measure(rng, k, n=1):
    w = rng.uniform(0.2, 1.0, k)
    return otcore.DiscreteMeasure(rng.uniform(0, 1, (k, 2 * n + 1)), w / w.sum())


def check_relabel_invariance():
    rng = np.random.default_rng(30)
    worst = 0.0
    for _ in range(5):
        mu, nu = _random_measure(rng, 4), _random_measure(rng, 5)
        v = otcore.solve_kantorovich(mu, nu).value
        pm, pn = rng.permutation(mu.size), rng.permutation(nu.size)
        mu2 = otcore.DiscreteMeasure(mu.points[pm], mu.weights[pm])
        nu2 = otcore.DiscreteMeasure(nu.points[pn], nu.weights[pn])
        worst = max(worst, abs(otcore.solve_kantorovich(mu2, nu2).value - v))
    return _at_most(worst, 1e-9)


def check_cost_scaling():
    rng = np.random.default_rng(31)
    worst = 0.0
    for lam in (0.5, 3.0):
        mu, nu = _random_measure(rng, 4), _random_measure(rng, 4)
        C = otcore.cost_matrix(mu, nu)
        base = otcore.solve_kantorovich(mu, nu, C)
        scaled = otcore.solve_kantorovich(mu, nu, lam * C)
        worst = max(worst, abs(scaled.value - lam * base.value))
        # the scaled optimum must stay optimal for the original cost
        worst = max(worst, abs(scaled.plan.cost(C) - base.value))
    return _at_most(worst, 1e-9)


def check_w1_triangle():
    rng = np.random.default_rng(32)
    worst = -np.inf
    for _ in range(5):
        a, b, c = (_random_measure(rng, 4) for _ in range(3))
        w = lambda p, q: otcore.solve_kantorovich(p, q).value
        worst = max(worst, w(a, c) - w(a, b) - w(b, c))
    return _at_most(max(worst, 0.0), 1e-9)


def check_duality_gap():
    rng = np.random.default_rng(33)
    worst = 0.0
    for _ in range(5):
        res = otcore.solve_kantorovich(_random_measure(rng, 4), _random_measure(rng, 4))
        worst = max(worst, abs(res.duality_gap))
    return _at_most(worst, 1e-9)


def check_secondary_monotone():
    """Atoms on one horizontal line: the second-stage plan is the sorted coupling."""
    rng = np.random.default_rng(34)
    worst = 0.0
    for _ in range(5):
        xs = np.sort(rng.uniform(0, 1, 3))
        ys = np.sort(rng.uniform(0, 1, 3))
        pts = lambda s: np.stack([s, np.zeros_like(s), np.zeros_like(s)], axis=1)
        a, b = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        mu, nu = otcore.DiscreteMeasure(pts(xs), a), otcore.DiscreteMeasure(pts(ys), b)
        plan = otcore.solve_secondary(mu, nu)
        worst = max(worst, float(np.abs(plan.gamma - otcore.monotone_coupling(a, b)).max()))
    return _at_most(worst, 1e-9)


# density


def _small_plan(seed, k=4):
    rng = np.random.default_rng(seed)
    mu, nu = _random_measure(rng, k), _random_measure(rng, k)
    return otcore.solve_kantorovich(mu, nu).plan


def check_interpolation_mass():
    plan = _small_plan(40)
    worst = max(abs(density.interpolate(plan, t).weights.sum() - 1.0) for t in np.linspace(0, 1, 11))
    return _at_most(worst, 1e-12)


def check_transport_density_additivity():
    p1, p2 = _small_plan(41), _small_plan(42)
    grid = density.GridField([-1.0, -1.0, -1.5], [2.0, 2.0, 2.5], (8, 8, 8))
    # combine plans over the union of supports
    mu = otcore.DiscreteMeasure(np.vstack([p1.source.points, p2.source.points]),
                                np.concatenate([p1.source.weights, p2.source.weights]) / 2)
    nu = otcore.DiscreteMeasure(np.vstack([p1.target.points, p2.target.points]),
                                np.concatenate([p1.target.weights, p2.target.weights]) / 2)
    k1, k2 = p1.gamma.shape
    gamma = np.zeros((mu.size, nu.size))
    gamma[:k1, :k2] = p1.gamma / 2
    gamma[k1:, k2:] = p2.gamma / 2
    mixed = density.transport_density(otcore.TransportPlan(gamma, mu, nu), grid, steps=256)
    a1 = density.transport_density(p1, grid, steps=256)
    a2 = density.transport_density(p2, grid, steps=256)
    return _at_most(np.abs(mixed.values - (a1.values + a2.values) / 2).max() * grid.cell_volume, 1e-9)


def check_minkowski_chain():
    mu = density.ball_field([0, 0, 0], 0.5, [-0.5] * 3, [0.5] * 3, (16, 16, 16))
    nu = otcore.DiscreteMeasure([[1.5, 0.0, 0.3], [-0.4, 1.4, -0.2]], [0.5, 0.5])
    grid = density.GridField([-1.0, -1.0, -1.5], [2.0, 2.0, 1.5], (24, 24, 24))
    rep = density.minkowski_chain_check(mu, nu, 1.2, grid, samples=20_000, seed=0)
    return rep.holds, rep.lhs, rep.rhs


def check_two_sided_bound():
    mu = density.ball_field([0, 0, 0], 0.5, [-0.5] * 3, [0.5] * 3, (16, 16, 16))
    nu = otcore.DiscreteMeasure([[1.5, 0.0, 0.3], [-0.4, 1.4, -0.2]], [0.5, 0.5])
    rep = density.interpolation_bound_check(mu, nu, 0.5, 1.2, samples=20_000, seed=0)
    return rep.two_sided_holds and rep.holds, rep.norm_t, rep.bound * 1.1


def check_s0_sweep():
    worst = Fraction(0)
    ok = True
    for n in (1, 2, 3):
        rep = density.s0_lower_bound_sweep(n)
        ok = ok and rep.ok and rep.equality_only_at_p2_one and bool(rep.equality)
        worst = max(worst, Fraction(len(rep.violations)))
    return ok, float(worst), 0.0


# congestion


def check_p_range_guard():
    try:
        wardrop.CongestionFunction(1.0, 1.0, 4 / 3, homog_dim=4)
    except ValueError:
        rejected = True
    else:
        rejected = False
    accepted = wardrop.CongestionFunction(1.0, 1.0, 1.25, homog_dim=4).holder_exponent > 0
    return rejected and accepted, float(rejected), 1.0


def check_lattice_axis_exact():
    lat = lattice.build_lattice([0, 0, -0.125], [1, 1, 0.125], 0.125)
    src = lat.node_id([[0, 0, 0]])
    dst = lat.node_id([[m, 0, 0] for m in range(1, 9)] + [[0, m, 0] for m in range(1, 9)])
    table = lattice.c_phi(lat, 1.0, src, dst)[0]
    exact = np.concatenate([np.arange(1, 9), np.arange(1, 9)]) * 0.125
    return _at_most(np.abs(table - exact).max(), 1e-15)


def check_lattice_triangle():
    lat = lattice.build_lattice([0, 0, -0.125], [0.5, 0.5, 0.125], 0.125)
    rng = np.random.default_rng(50)
    nodes = rng.choice(lat.num_nodes, 12, replace=False)
    phi = rng.uniform(0.5, 2.0, lat.num_nodes)
    D = lattice.c_phi(lat, phi, nodes, nodes)
    # D[x, y] + D[y, z] - D[x, z] over triples whose two legs are finite
    legs = D[:, :, None] + D[None, :, :]
    finite = np.isfinite(legs)
    if not finite.any():
        return False, float("nan"), 1e-12
    with np.errstate(invalid="ignore"):
        excess = (D[:, None, :] - legs)[finite]
    return _at_most(max(float(excess.max()), 0.0), 1e-12)


def check_holder_diagnostic():
    lat = lattice.build_lattice([0, 0, -0.25], [1, 1, 0.25], 1 / 16)
    slope, alpha = lattice.holder_diagnostic(lat, 1.25, seed=0)
    return _at_least(slope, alpha - 0.1)


def check_two_link_equilibrium():
    net = graph.two_link_network()
    cf = wardrop.CongestionFunction(1.0, 1.0, 2.0, homog_dim=None)
    src = lattice.NodeMeasure(np.array([0]), np.array([1.0]))
    dst = lattice.NodeMeasure(np.array([1]), np.array([1.0]))
    ta = wardrop.solve_wardrop(net, cf, src, dst, tol=1e-8)
    err = float(np.abs(ta.edge_flows - 0.5).max())
    cert = wardrop.equilibrium_certificate(net, cf, ta)
    return cert.passed and err <= 1e-4, err, 1e-4


def _small_lattice_instance():
    lat = lattice.build_lattice([0, 0, -1 / 16], [0.25, 0.25, 1 / 16], 1 / 16)
    mu = lattice.snap_measure(lat, otcore.DiscreteMeasure([[0, 0, 0], [0, 0.25, 0]], [0.5, 0.5]))
    nu = lattice.snap_measure(lat, otcore.DiscreteMeasure([[0.25, 0.25, 0], [0.25, 0, 0]], [0.5, 0.5]))
    return lat, mu, nu, wardrop.CongestionFunction()


def check_intensity_uniqueness():
    lat, mu, nu, cf = _small_lattice_instance()
    a = wardrop.solve_wardrop(lat, cf, mu, nu, tol=1e-9, seed=0).edge_flows
    b = wardrop.solve_wardrop(lat, cf, mu, nu, tol=1e-9, seed=1).edge_flows
    return _at_most(np.abs(a - b).max() / np.abs(a).max(), 1e-3)


def check_certificate_discriminates():
    lat, mu, nu, cf = _small_lattice_instance()
    ta = wardrop.solve_wardrop(lat, cf, mu, nu, tol=1e-9, seed=0)
    good = wardrop.equilibrium_certificate(lat, cf, ta, eps=1e-2)
    bad = wardrop.equilibrium_certificate(lat, cf, wardrop.detour_perturbation(lat, ta, cf=cf), eps=1e-2)
    return good.passed and not bad.passed and good.stored_paths_above_cphi, good.worst_path_excess, 1e-2


CHECKS = {
    "group": [
        ("associativity", check_group_associativity),
        ("identity", check_group_identity),
        ("inverse", check_group_inverse),
        ("dilation_composition", check_dilation_composition),
        ("dilation_homomorphism", check_dilation_homomorphism),
        ("bracket_commutator", check_bracket_commutator),
    ],
    "geodesy": [
        ("center_distance", check_center_distance),
        ("metric_symmetry", check_metric_symmetry),
        ("triangle_inequality", check_triangle_inequality),
        ("indiscernibles", check_indiscernibles),
        ("round_trip", check_round_trip),
        ("geodesic_concatenation", check_geodesic_concatenation),
        ("speed", check_speed),
        ("non_branching", check_non_branching),
        ("jacobian_bound", check_jacobian_bound),
    ],
    "ot": [
        ("relabel_invariance", check_relabel_invariance),
        ("cost_scaling", check_cost_scaling),
        ("w1_triangle", check_w1_triangle),
        ("duality_gap", check_duality_gap),
        ("secondary_monotone", check_secondary_monotone),
    ],
    "density": [
        ("interpolation_mass", check_interpolation_mass),
        ("transport_density_additivity", check_transport_density_additivity),
        ("minkowski_chain", check_minkowski_chain),
        ("interpolation_bounds", check_two_sided_bound),
        ("s0_sweep", check_s0_sweep),
    ],
    "congestion": [
        ("p_range_guard", check_p_range_guard),
        ("lattice_axis_exact", check_lattice_axis_exact),
        ("lattice_triangle", check_lattice_triangle),
        ("holder_diagnostic", check_holder_diagnostic),
        ("two_link_equilibrium", check_two_link_equilibrium),
        ("intensity_uniqueness", check_intensity_uniqueness),
        ("certificate_discriminates", check_certificate_discriminates),
    ],
}


def run_suite(suite: str) -> list[CheckResult]:
    """Run one suite (or ``all``); a check that raises counts as failed."""
    if suite == "all":
        return [r for s in SUITES for r in run_suite(s)]
    if suite not in CHECKS:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES + ('all',)}")
    out = []
    for name, fn in CHECKS[suite]:
        try:
            passed, measured, tol = fn()
            out.append(CheckResult(suite, name, bool(passed), measured, tol))
        except Exception as exc:  # reported, never swallowed silently
            detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
            out.append(CheckResult(suite, name, False, float("nan"), float("nan"), detail))
    return out
