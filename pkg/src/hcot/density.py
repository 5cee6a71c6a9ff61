"""Transport densities, displacement interpolation and L^p bounds along it."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import geodesy, hgroup
from .otcore import DiscreteMeasure, TransportPlan


@dataclass
class GridField:
    """Piecewise-constant density on a regular grid of the box [lo, hi]."""

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple
    values: np.ndarray = None

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.shape = tuple(int(s) for s in self.shape)
        if not (self.lo.shape == self.hi.shape == (len(self.shape),)):
            raise ValueError("box bounds and shape must have one entry per axis")
        if np.any(self.hi <= self.lo) or min(self.shape) < 1:
            raise ValueError("degenerate grid")
        if self.values is None:
            self.values = np.zeros(self.shape)
        self.values = np.asarray(self.values, dtype=float).reshape(self.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def centers(self) -> np.ndarray:
        axes = [self.lo[k] + (np.arange(s) + 0.5) * self.spacing[k] for k, s in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def locate(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Flat cell index of each point and whether it lies in the closed box."""
        pts = np.asarray(pts, dtype=float)
        inside = np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)
        idx = np.floor((pts - self.lo) / self.spacing).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.shape), inside

    def value_at(self, pts) -> np.ndarray:
        flat, inside = self.locate(pts)
        return np.where(inside, self.values.ravel()[flat], 0.0)

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def with_values(self, values) -> "GridField":
        return GridField(self.lo, self.hi, self.shape, values)

    def header(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "shape": list(self.shape)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["cell", "value"])
        for k, v in enumerate(self.values.ravel()):
            if v != 0:
                w.writerow([k, repr(float(v))])
        return buf.getvalue()


def ball_field(center, radius: float, lo, hi, shape) -> GridField:
    """Normalized indicator of the cells whose centers lie in a Euclidean ball."""
    g = GridField(lo, hi, shape)
    inside = np.linalg.norm(g.centers() - np.asarray(center, dtype=float), axis=-1) <= radius
    if not inside.any():
        raise ValueError("ball misses every cell center")
    return g.with_values(inside / (inside.sum() * g.cell_volume))


@dataclass
class LpReport:
    p: float
    norm: float
    shape: tuple


def lp_norm(f: GridField, p: float) -> LpReport:
    if not p >= 1:
        raise ValueError("p must be >= 1")
    v = np.abs(f.values)
    if np.isinf(p):
        norm = float(v.max())
    else:
        norm = float((np.sum(v**p) * f.cell_volume) ** (1.0 / p))
    return LpReport(float(p), norm, f.shape)


def interpolate(plan: TransportPlan, t: float) -> DiscreteMeasure:
    """Displacement interpolation: atoms S_t(x_i, y_j) with mass gamma_ij, coincident atoms merged."""
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    supp = plan.support
    x = plan.source.points[supp[:, 0]]
    y = plan.target.points[supp[:, 1]]
    pts = geodesy.select_point(x, y, t)
    w = plan.gamma[supp[:, 0], supp[:, 1]]
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    merged = np.bincount(inv.ravel(), weights=w, minlength=len(uniq))
    return DiscreteMeasure(uniq, merged / merged.sum())


def transport_density(plan: TransportPlan, grid: GridField, steps: int = 1024) -> GridField:
    """a_gamma on the grid: gamma_ij d_ij spread along each geodesic by the midpoint rule."""
    if steps < 1:
        raise ValueError("steps must be positive")
    supp = plan.support
    x = plan.source.points[supp[:, 0]]
    y = plan.target.points[supp[:, 1]]
    res = geodesy.solve_geodesic(x, y)
    mass = plan.gamma[supp[:, 0], supp[:, 1]] * res.params.length
    tq = (np.arange(steps) + 0.5) / steps
    acc = np.zeros(int(np.prod(grid.shape)))
    for k, t in enumerate(tq):
        pts = geodesy.geodesic_point(res.params, t)
        flat, inside = grid.locate(pts)
        if not inside.all():
            bad = int(np.argmin(inside))
            raise ValueError(f"geodesic {tuple(supp[bad])} leaves the grid box at t={t:.4g}")
        acc += np.bincount(flat, weights=mass / steps, minlength=acc.size)
    return grid.with_values(acc.reshape(grid.shape) / grid.cell_volume)


def sample_field(f: GridField, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw points from the normalized density f: a cell by mass, then uniform inside it."""
    prob = np.clip(f.values.ravel(), 0, None)
    prob = prob / prob.sum()
    cells = rng.choice(prob.size, size=size, p=prob)
    idx = np.stack(np.unravel_index(cells, f.shape), axis=-1)
    return f.lo + (idx + rng.uniform(size=idx.shape)) * f.spacing


def semidiscrete_assignment(x, nu: DiscreteMeasure, sweeps: int = 50, D=None):
    """Assign empirical samples to atoms minimizing d(x, y_j) - psi_j with cell masses nu.

    Coordinate-wise quantile updates of psi; one sweep is exact for two atoms.
    """
    if D is None:
        D = geodesy.cc_distance(x[:, None, :], nu.points[None, :, :])
    k = nu.size
    psi = np.zeros(k)
    if k == 1:
        return np.zeros(len(x), dtype=np.int64), D[:, 0], psi
    for _ in range(sweeps):
        old = psi.copy()
        for j in range(k - 1):
            others = np.delete(D - psi, j, axis=1).min(axis=1)
            psi[j] = np.quantile(D[:, j] - others, nu.weights[j])
        if np.allclose(psi, old, atol=1e-12):
            break
    assign = np.argmin(D - psi, axis=1)
    return assign, D[np.arange(len(x)), assign], psi


def _route_samples(x, nu: DiscreteMeasure):
    """Semi-discrete assignment plus the geodesic from each sample's atom back to it.

    Solving y_j -> x for every atom once gives both the cost table and the
    geodesics used afterwards, since S_t(x, y) sits at 1 - t on y -> x.
    """
    sols = [geodesy.solve_geodesic(y, x) for y in nu.points]
    D = np.stack([r.params.length for r in sols], axis=1)
    assign, _, _ = semidiscrete_assignment(x, nu, D=D)
    rows = np.arange(len(x))
    chi = np.stack([r.params.chi for r in sols], axis=1)[rows, assign]
    theta = np.stack([r.params.theta for r in sols], axis=1)[rows, assign]
    unique = np.stack([r.unique for r in sols], axis=1)[rows, assign]
    params = geodesy.GeodesicParams(nu.points[assign], chi, theta)
    return assign, geodesy.GeodesicSolveResult(params, unique)


@dataclass
class InterpolationReport:
    t: float
    p: float
    side: str
    exponent: float
    norm_density: float
    norm_t: float
    se_norm_t: float
    bound: float
    holds: bool
    two_sided_bound: float
    two_sided_holds: bool
    histogram_norm: float
    samples: int
    seed: int
    assignment_masses: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def interpolation_bound_check(mu: GridField, nu: DiscreteMeasure, t: float, p: float,
                              samples: int = 100_000, seed: int = 0, tol: float = 0.1,
                              side: str = "source", hist_shape=None) -> InterpolationReport:
    """Monte Carlo test of ||mu_t||_p against the contraction bound.

    ``side="source"``: mu is the density, nu the atoms, and the bound is
    (1-t)^(-(2n+3)/p') ||mu||_p.  ``side="target"``: the density sits at
    the end of the interpolation; the same routine runs at 1 - t and the
    bound reads t^(-(2n+3)/p') ||density||_p.

    Change of variables gives ||mu_t||_p^p = E_mu[rho^(p-1) det^(1-p)],
    det the Jacobian of x -> S_t(x, T x); that expectation is the estimate.
    A histogram of the pushed samples is reported as a cross-check.
    """
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    if not 1 < p < np.inf:
        raise ValueError("need 1 < p < inf")
    if side not in ("source", "target"):
        raise ValueError("side is 'source' or 'target'")
    s_run = t if side == "source" else 1.0 - t
    rng = np.random.default_rng(seed)
    x = sample_field(mu, samples, rng)
    assign, res = _route_samples(x, nu)
    n = (x.shape[1] - 1) // 2
    expo = geodesy.contraction_exponent(n)
    pconj = p / (p - 1)

    s = 1.0 - s_run
    det = geodesy.contraction_det(res.params.theta, s, n)
    rho = mu.value_at(x)
    terms = rho ** (p - 1) * det ** (1 - p)
    m = terms.mean()
    se_m = terms.std(ddof=1) / np.sqrt(samples)
    norm_t = m ** (1 / p)
    se_norm = norm_t * se_m / (p * m)
    norm_mu = lp_norm(mu, p).norm
    bound = s ** (-expo / pconj) * norm_mu
    # two-sided form uses max(||mu||_p, ||nu||_p); an atomic end has infinite norm
    two_sided = 2.0 ** (expo / pconj) * max(norm_mu, np.inf)

    pushed = geodesy.geodesic_point(res.params, s)
    shape = hist_shape or mu.shape
    lo, hi = pushed.min(axis=0), pushed.max(axis=0)
    pad = 1e-9 + 1e-6 * (hi - lo)
    hgrid = GridField(lo - pad, hi + pad, shape)
    flat, _ = hgrid.locate(pushed)
    hist = np.bincount(flat, minlength=int(np.prod(shape))) / (samples * hgrid.cell_volume)
    hist_norm = lp_norm(hgrid.with_values(hist), p).norm

    return InterpolationReport(
        t=float(t), p=float(p), side=side, exponent=float(expo / pconj),
        norm_density=float(norm_mu), norm_t=float(norm_t), se_norm_t=float(se_norm),
        bound=float(bound), holds=bool(norm_t <= bound * (1 + tol)),
        two_sided_bound=float(two_sided), two_sided_holds=bool(norm_t <= two_sided + 3 * se_norm),
        histogram_norm=float(hist_norm), samples=int(samples), seed=int(seed),
        assignment_masses=np.bincount(assign, minlength=nu.size).tolist(),
    )


def _exact(v):
    if isinstance(v, (int, Fraction)):
        return Fraction(v)
    return None


def s0_exponent(p1, p2, n: int):
    """Interpolation exponent s0(p1, p2, 2n+3); exact when both inputs are int or Fraction."""
    a, b = _exact(p1), _exact(p2)
    if a is None or b is None:
        a, b = float(p1), float(p2)
    if not a > b >= 1:
        raise ValueError("need p1 > p2 >= 1")
    N = 2 * n + 3
    return b * N * (a - 1) / (N * (a - 1) - (a - b))


@dataclass
class SweepReport:
    n: int
    threshold: Fraction
    checked: int
    violations: list
    equality: list
    equality_only_at_p2_one: bool

    @property
    def ok(self) -> bool:
        return not self.violations


def default_sweep_grid(n: int, size: int = 50):
    """p1 strictly above (2n+3)/(2n+2) and p2 from 1 upward, both in exact rationals."""
    thr = Fraction(2 * n + 3, 2 * n + 2)
    p1 = [thr + Fraction(k, 20) for k in range(1, size + 1)]
    p2 = [1 + Fraction(j, 20) for j in range(size)]
    return p1, p2


def s0_lower_bound_sweep(n: int, p1_values=None, p2_values=None, enforce_pre: bool = True) -> SweepReport:
    """Check s0 >= (2n+3)/(2n+2) on a grid in exact arithmetic.

    With ``enforce_pre`` only points with p1 >= (2n+3)/(2n+2) are used;
    switching it off admits points below and exposes violations.
    """
    thr = Fraction(2 * n + 3, 2 * n + 2)
    if p1_values is None or p2_values is None:
        d1, d2 = default_sweep_grid(n)
        p1_values = d1 if p1_values is None else p1_values
        p2_values = d2 if p2_values is None else p2_values
    checked, bad, eq = 0, [], []
    for a in map(Fraction, p1_values):
        if enforce_pre and a < thr:
            continue
        for b in map(Fraction, p2_values):
            if not a > b >= 1:
                continue
            s0 = s0_exponent(a, b, n)
            checked += 1
            if s0 < thr:
                bad.append((a, b, s0))
            elif s0 == thr:
                eq.append((a, b))
    return SweepReport(n, thr, checked, bad, eq, all(b == 1 for _, b in eq))


@dataclass
class MinkowskiReport:
    p: float
    lhs: float
    rhs: float
    max_distance: float
    holds: bool


def minkowski_chain_check(mu: GridField, nu: DiscreteMeasure, p: float, grid: GridField,
                          t_nodes: int = 8, samples: int = 20_000, seed: int = 0) -> MinkowskiReport:
    """||a_gamma||_p <= max d * int_0^1 ||mu_t||_p dt for a density-to-atoms plan.

    The left side bins stratified geodesic samples on ``grid``; the right
    side integrates the change-of-variables estimate of ||mu_t||_p by the
    midpoint rule in t.
    """
    rng = np.random.default_rng(seed)
    x = sample_field(mu, samples, rng)
    assign, res = _route_samples(x, nu)
    dist = res.params.length
    per = 16
    acc = np.zeros(int(np.prod(grid.shape)))
    for k in range(per):
        tk = (k + rng.uniform(size=samples)) / per
        pts = geodesy.geodesic_point(res.params, 1.0 - tk)
        flat, inside = grid.locate(pts)
        if not inside.all():
            raise ValueError("transport geodesics leave the grid box")
        acc += np.bincount(flat, weights=dist / (samples * per), minlength=acc.size)
    lhs = lp_norm(grid.with_values(acc.reshape(grid.shape) / grid.cell_volume), p).norm
    ts = (np.arange(t_nodes) + 0.5) / t_nodes
    n = (x.shape[1] - 1) // 2
    theta = res.params.theta
    rho = mu.value_at(x)
    norms = []
    for t in ts:
        det = geodesy.contraction_det(theta, 1.0 - t, n)
        norms.append(np.mean(rho ** (p - 1) * det ** (1 - p)) ** (1 / p))
    dmax = float(dist.max())
    rhs = dmax * float(np.mean(norms))
    return MinkowskiReport(float(p), float(lhs), rhs, dmax, bool(lhs <= rhs))


def field_from_points(pts, weights, grid: GridField) -> GridField:
    """Histogram of weighted points as a density on ``grid``."""
    pts = hgroup.as_point(pts)
    flat, inside = grid.locate(pts)
    if not inside.all():
        raise ValueError("points outside the grid box")
    acc = np.bincount(flat, weights=np.asarray(weights, dtype=float), minlength=int(np.prod(grid.shape)))
    return grid.with_values(acc.reshape(grid.shape) / grid.cell_volume)
