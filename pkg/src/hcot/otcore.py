"""Discrete Kantorovich problems on CC costs.

The transport LP is handed to HiGHS through ``scipy.optimize.linprog``;
the dual simplex returns a vertex of the transportation polytope and the
equality-constraint marginals give the dual potentials directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from . import geodesy, hgroup

_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
COST_KINDS = ("cc", "cc_squared", "custom")


@dataclass
class DiscreteMeasure:
    """Finitely supported probability measure: rows of ``points`` with ``weights``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(hgroup.as_point(self.points))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if len(self.points) == 0:
            raise ValueError("empty support")
        if len(self.weights) != len(self.points):
            raise ValueError("one weight per support point")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")
        if len(np.unique(self.points, axis=0)) != len(self.points):
            raise ValueError("support points must be pairwise distinct")

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def n(self) -> int:
        return (self.points.shape[1] - 1) // 2

    @classmethod
    def dirac(cls, point) -> "DiscreteMeasure":
        return cls(np.atleast_2d(point), [1.0])

    @classmethod
    def normalized(cls, points, weights) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=float)
        return cls(points, w / w.sum())

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteMeasure":
        return cls(d["points"], d["weights"])

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}


@dataclass
class TransportPlan:
    gamma: np.ndarray
    source: DiscreteMeasure
    target: DiscreteMeasure
    cost_used: str = "cc"

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.shape != (self.source.size, self.target.size):
            raise ValueError("plan shape does not match the marginals")
        if np.any(self.gamma < 0):
            raise ValueError("plan has negative entries")

    @property
    def support(self) -> np.ndarray:
        """Index pairs (i, j) with gamma_ij > 0, in row-major order."""
        return np.argwhere(self.gamma > 0)

    def marginal_error(self) -> float:
        return max(np.abs(self.gamma.sum(axis=1) - self.source.weights).max(),
                   np.abs(self.gamma.sum(axis=0) - self.target.weights).max())

    def cost(self, C) -> float:
        return float(np.sum(self.gamma * C))

    def to_dict(self) -> dict:
        return {"gamma": self.gamma.tolist(), "cost_used": self.cost_used,
                "source": self.source.to_dict(), "target": self.target.to_dict()}


@dataclass
class PotentialPair:
    """Dual variables, written so that value = <u_source, mu> - <u_target, nu>.

    For kind "cc" both arrays are samples of one 1-Lipschitz function u;
    for other costs they are (f, -g) with f_i + g_j <= C_ij.
    """

    u_source: np.ndarray
    u_target: np.ndarray
    kind: str = "cc"

    def value(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return float(self.u_source @ mu.weights - self.u_target @ nu.weights)


@dataclass
class KantorovichResult:
    plan: TransportPlan
    potential: PotentialPair
    value: float
    dual_value: float
    duality_gap: float
    cost: np.ndarray = field(repr=False)


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, kind: str = "cc", table=None) -> np.ndarray:
    if kind == "custom":
        if table is None:
            raise ValueError("custom cost needs a table")
        C = np.asarray(table, dtype=float)
        if C.shape != (mu.size, nu.size):
            raise ValueError(f"cost table has shape {C.shape}, expected {(mu.size, nu.size)}")
        if np.any(np.isnan(C)):
            raise ValueError("cost table contains NaN")
        return C
    if kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {kind!r}")
    D = geodesy.cc_distance(mu.points[:, None, :], nu.points[None, :, :])
    return D**2 if kind == "cc_squared" else D


def _marginal_constraints(m: int, k: int):
    rows = np.concatenate([np.repeat(np.arange(m), k), m + np.tile(np.arange(k), m)])
    cols = np.concatenate([np.arange(m * k), np.arange(m * k)])
    return coo_matrix((np.ones(2 * m * k), (rows, cols)), shape=(m + k, m * k)).tocsr()


def _transport_lp(a, b, C, allowed=None, extra_ub=None):
    m, k = C.shape
    A_eq = _marginal_constraints(m, k)
    bounds = [(0, None)] * (m * k)
    if allowed is not None:
        bounds = [(0, None) if ok else (0, 0) for ok in allowed.ravel()]
    A_ub = b_ub = None
    if extra_ub is not None:
        A_ub, b_ub = extra_ub
    res = linprog(C.ravel(), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.concatenate([a, b]),
                  bounds=bounds, method="highs-ds", options=_LP_OPTIONS)
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    gamma = np.clip(res.x.reshape(m, k), 0.0, None)
    gamma[gamma < 1e-14] = 0.0
    duals = res.eqlin.marginals
    return gamma, res.fun, duals[:m], duals[m:]


def solve_transport(a, b, C):
    """Vertex optimum of min <C, gamma> over couplings of weight vectors a and b.

    Returns (gamma, value, f, g) with f, g the duals of the row and column
    constraints.  Total masses must agree; they need not be 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    if abs(a.sum() - b.sum()) > 1e-10 * max(1.0, a.sum()):
        raise ValueError("marginals carry different total mass")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost table must be finite")
    return _transport_lp(a, b, C)


def _lipschitz_potential(mu, nu, C, g):
    """u(z) = min_j d(z, y_j) - g_j on both supports: 1-Lipschitz, tight on the plan."""
    u_src = np.min(C - g[None, :], axis=1)
    D_nn = geodesy.cc_distance(nu.points[:, None, :], nu.points[None, :, :])
    u_tgt = np.min(D_nn - g[None, :], axis=1)
    return PotentialPair(u_src, u_tgt, kind="cc")


def solve_kantorovich(mu: DiscreteMeasure, nu: DiscreteMeasure, C=None, kind: str = "cc") -> KantorovichResult:
    """Exact discrete Kantorovich problem min <C, gamma> over couplings of mu and nu."""
    if C is None:
        C = cost_matrix(mu, nu, kind)
    C = np.asarray(C, dtype=float)
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    gamma, primal, f, g = _transport_lp(mu.weights, nu.weights, C)
    lp_dual = float(f @ mu.weights + g @ nu.weights)
    if kind == "cc":
        pot = _lipschitz_potential(mu, nu, C, g)
    else:
        pot = PotentialPair(f, -g, kind=kind)
    dual = pot.value(mu, nu)
    plan = TransportPlan(gamma, mu, nu, cost_used=kind)
    gap = max(abs(primal - lp_dual), abs(primal - dual))
    return KantorovichResult(plan, pot, float(primal), dual, float(gap), C)


def solve_secondary(mu: DiscreteMeasure, nu: DiscreteMeasure, D=None, tol: float = 1e-9) -> TransportPlan:
    """Lexicographic optimum: minimal sum gamma d^2 among minimizers of sum gamma d.

    Stage 2 only admits cells with zero reduced cost under the stage-1 dual,
    which by complementary slackness is exactly the face of stage-1 optima,
    and keeps sum gamma d <= opt1 + tol (1 + |opt1|) as an explicit guard.
    """
    if D is None:
        D = cost_matrix(mu, nu, "cc")
    D = np.asarray(D, dtype=float)
    _, opt1, f, g = _transport_lp(mu.weights, nu.weights, D)
    reduced = D - f[:, None] - g[None, :]
    allowed = reduced <= tol * (1.0 + np.abs(D).max())
    slack = opt1 + tol * (1.0 + abs(opt1))
    gamma, _, _, _ = _transport_lp(mu.weights, nu.weights, D**2, allowed=allowed,
                                   extra_ub=(D.ravel()[None, :], [slack]))
    return TransportPlan(gamma, mu, nu, cost_used="cc_secondary")


@dataclass
class MonotonicityReport:
    worst_violation: float
    worst_cycle: tuple
    cycles_checked: int
    exhaustive: bool

    def ok(self, tol: float = 1e-9) -> bool:
        return self.worst_violation <= tol


def _cycle_violation(C, cells):
    # sum c(x_i, y_i) - sum c(x_{i+1}, y_i): positive means the shifted pairing is cheaper
    rows = [c[0] for c in cells]
    cols = [c[1] for c in cells]
    shifted = rows[1:] + rows[:1]
    return float(C[rows, cols].sum() - C[shifted, cols].sum())


def check_cyclical_monotonicity(plan: TransportPlan, C, max_tuples: int = 20_000, seed: int = 0) -> MonotonicityReport:
    """Check the 2- and 3-cycle conditions on the support of the plan.

    All pairs and triples are enumerated when there are at most
    ``max_tuples`` of them; otherwise that many are drawn at random.
    """
    C = np.asarray(C, dtype=float)
    supp = [tuple(c) for c in plan.support]
    s = len(supp)
    total = s * (s - 1) // 2 + s * (s - 1) * (s - 2) // 6
    worst, arg, count = 0.0, (), 0
    if total <= max_tuples:
        exhaustive = True
        groups = itertools.chain(itertools.combinations(range(s), 2), itertools.combinations(range(s), 3))
        cycles = []
        for grp in groups:
            cycles.append(grp)
            if len(grp) == 3:
                cycles.append((grp[0], grp[2], grp[1]))
    else:
        exhaustive = False
        rng = np.random.default_rng(seed)
        cycles = [tuple(rng.choice(s, size=rng.integers(2, 4), replace=False)) for _ in range(max_tuples)]
    for cyc in cycles:
        v = _cycle_violation(C, [supp[i] for i in cyc])
        count += 1
        if v > worst:
            worst, arg = v, tuple((int(supp[i][0]), int(supp[i][1])) for i in cyc)
    return MonotonicityReport(worst, arg, count, exhaustive)


@dataclass
class PotentialReport:
    lipschitz_excess: float
    equality_error: float
    ok: bool


def verify_potential(plan: TransportPlan, potential: PotentialPair, tol: float = 1e-8) -> PotentialReport:
    """1-Lipschitz on all support pairs and u(x_i) - u(y_j) = d_ij on the plan's support."""
    pts = np.concatenate([plan.source.points, plan.target.points])
    u = np.concatenate([potential.u_source, potential.u_target])
    D = geodesy.cc_distance(pts[:, None, :], pts[None, :, :])
    excess = float(np.max(np.abs(u[:, None] - u[None, :]) - D))
    m = plan.source.size
    supp = plan.support
    if len(supp):
        i, j = supp[:, 0], supp[:, 1]
        eq = float(np.max(np.abs(u[i] - u[m + j] - D[i, m + j])))
    else:
        eq = 0.0
    return PotentialReport(max(excess, 0.0), eq, bool(excess <= tol and eq <= tol))


def monotone_coupling(a, b) -> np.ndarray:
    """North-west-corner coupling of two weight vectors already sorted along a line."""
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    gamma = np.zeros((len(a), len(b)))
    i = j = 0
    while i < len(a) and j < len(b):
        q = min(a[i], b[j])
        gamma[i, j] = q
        a[i] -= q
        b[j] -= q
        i += a[i] <= 1e-15
        j += b[j] <= 1e-15
    return gamma
