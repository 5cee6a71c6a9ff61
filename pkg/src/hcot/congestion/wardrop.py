"""Congested transport on a graph: pairwise Frank-Wolfe and Wardrop certificates.

Edge intensity i_e is the total path mass crossing edge e (both directions,
each traversal counted).  The objective is F(i) = sum_e len_e G(i_e) with
G(i) = a i + (b/p) i^p, so that dF/di_e = len_e g(i_e) is the congested
edge cost t_e.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .. import hgroup
from ..density import GridField
from ..otcore import solve_transport
from .graph import Network
from .lattice import HorizontalLattice, NodeMeasure

log = logging.getLogger(__name__)

MODES = ("long_term", "short_term")


@dataclass(frozen=True)
class CongestionFunction:
    """g(i) = a + b i^(p-1) with primitive G(i) = a i + (b/p) i^p.

    ``homog_dim`` is the homogeneous dimension N of the ambient group; the
    constructor then enforces p < N/(N-1).  Pass None for abstract networks.
    """

    a: float = 1.0
    b: float = 1.0
    p: float = 1.25
    homog_dim: int | None = 4

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("a and b must be positive")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.homog_dim is not None:
            N = self.homog_dim
            if self.p >= N / (N - 1):
                raise ValueError(f"p = {self.p} is not below N/(N-1) = {N / (N - 1):.6g}")

    def g(self, i):
        i = np.maximum(np.asarray(i, dtype=float), 0.0)
        return self.a + self.b * i ** (self.p - 1)

    def G(self, i):
        i = np.maximum(np.asarray(i, dtype=float), 0.0)
        return self.a * i + (self.b / self.p) * i**self.p

    @property
    def holder_exponent(self) -> float | None:
        if self.homog_dim is None:
            return None
        return 1 - self.homog_dim / (self.p / (self.p - 1))


@dataclass
class PathFlow:
    nodes: tuple
    edges: tuple
    weight: float
    origin: int
    dest: int


@dataclass
class TrafficAssignment:
    edge_flows: np.ndarray
    paths: list
    od_coupling: np.ndarray
    sources: NodeMeasure
    sinks: NodeMeasure
    objective: float = float("nan")
    gap: float = float("nan")
    rel_gap: float = float("nan")
    iterations: int = 0
    converged: bool = False
    pruned_mass: float = 0.0
    history: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {"objective": self.objective, "gap": self.gap, "rel_gap": self.rel_gap,
                "iterations": self.iterations, "converged": self.converged,
                "pruned_mass": self.pruned_mass, "n_paths": len(self.paths),
                "od_coupling": self.od_coupling.tolist()}


def _as_network(graph) -> Network:
    return graph.network if isinstance(graph, HorizontalLattice) else graph


def total_cost(network: Network, cf: CongestionFunction, flows) -> float:
    return float(np.sum(network.length * cf.G(flows)))


def edge_costs(network: Network, cf: CongestionFunction, flows) -> np.ndarray:
    return network.length * cf.g(flows)


def flows_from_paths(network: Network, paths) -> np.ndarray:
    x = np.zeros(network.n_edges)
    for pf in paths:
        np.add.at(x, np.asarray(pf.edges, dtype=np.int64), pf.weight)
    return x


def assignment_from_paths(graph, paths, sources: NodeMeasure, sinks: NodeMeasure, cf=None) -> TrafficAssignment:
    """Build an assignment (flows and OD matrix) from explicit weighted paths."""
    net = _as_network(graph)
    x = flows_from_paths(net, paths)
    od = np.zeros((len(sources.nodes), len(sinks.nodes)))
    for pf in paths:
        od[pf.origin, pf.dest] += pf.weight
    ta = TrafficAssignment(x, list(paths), od, sources, sinks)
    if cf is not None:
        ta.objective = total_cost(net, cf, x)
    return ta


@dataclass
class _Vertex:
    flows: np.ndarray
    paths: list
    key: tuple


def _route(net: Network, cost, sources, sinks, demand, seed, order):
    """All-or-nothing routing of an OD matrix along current shortest paths."""
    x = np.zeros(net.n_edges)
    paths = []
    for a in order:
        row = demand[a]
        if not np.any(row > 0):
            continue
        dist, pred = net.shortest_paths(cost, sources.nodes[a], seed)
        for b in np.nonzero(row > 0)[0]:
            if not np.isfinite(dist[sinks.nodes[b]]):
                raise ValueError(f"demand pair ({sources.nodes[a]}, {sinks.nodes[b]}) is disconnected")
            nodes, edges = net.trace(pred, sources.nodes[a], sinks.nodes[b])
            np.add.at(x, np.asarray(edges, dtype=np.int64), row[b])
            paths.append((int(a), int(b), nodes, edges, float(row[b])))
    key = tuple(sorted((a, b, e, round(w, 14)) for a, b, _, e, w in paths))
    return _Vertex(x, paths, key)


def _direction(net, cost, sources, sinks, mode, gamma_bar, seed, order):
    if mode == "short_term":
        demand = gamma_bar
    else:
        table, _ = net.cost_table(cost, sources.nodes, sinks.nodes, seed)
        if not np.all(np.isfinite(table)):
            raise ValueError("some source cannot reach some sink")
        demand, _, _, _ = solve_transport(sources.mass, sinks.mass, table)
    return _route(net, cost, sources, sinks, demand, seed, order)


def _line_search(net, cf, x, d, gmax, iters: int = 80):
    """Exact step on F(x + s d), s in [0, gmax], by bisection on the derivative."""
    def slope(s):
        return float(np.dot(net.length * cf.g(x + s * d), d))

    if slope(gmax) <= 0:
        return gmax
    lo, hi = 0.0, gmax
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-16 * gmax:
            break
    return 0.5 * (lo + hi)


def _incidence(net: Network):
    e = np.arange(net.n_edges)
    data = np.concatenate([np.ones(net.n_edges), -np.ones(net.n_edges)])
    return sparse.csr_matrix((data, (np.concatenate([net.tail, net.head]), np.concatenate([e, e]))),
                             shape=(net.n_nodes, net.n_edges))


def _signed_flows(net, cf, pi):
    """Minimizer of len G(|f|) - f (pi_tail - pi_head) per edge, and its slope in the potential gap."""
    delta = pi[net.tail] - pi[net.head]
    r = np.maximum(np.abs(delta) / net.length - cf.a, 0.0) / cf.b
    q = 1.0 / (cf.p - 1.0)
    f = np.sign(delta) * r**q
    df = q / (cf.b * net.length) * r ** (q - 1)
    return f, df, delta


def _dual_value(net, cf, pi, supply):
    f, _, delta = _signed_flows(net, cf, pi)
    return float(pi @ supply + np.sum(net.length * cf.G(np.abs(f)) - f * delta))


def warm_potentials(net: Network, cf, flows, sources: NodeMeasure, sinks: NodeMeasure, seed=None):
    """Node potentials from current congested costs: pi_v = max_a (phi_a - c(a, v))."""
    cost = edge_costs(net, cf, flows)
    dists = np.stack([net.shortest_paths(cost, s, seed)[0] for s in sources.nodes])
    table = dists[:, sinks.nodes]
    _, _, f, _ = solve_transport(sources.mass, sinks.mass, table)
    return np.max(f[:, None] - dists, axis=0)


def dual_newton(net: Network, cf, supply, pi0, tol: float = 1e-12, max_iter: int = 200):
    """Maximize the concave dual of min sum len G(|f|) s.t. B f = supply over node potentials.

    Newton steps on the weighted-Laplacian system with a small diagonal shift
    and Armijo backtracking.  Returns (signed edge flows, potentials, residual,
    iterations).
    """
    B = _incidence(net)
    pi = np.asarray(pi0, dtype=float).copy()
    pi[~np.isfinite(pi)] = np.min(pi[np.isfinite(pi)]) if np.any(np.isfinite(pi)) else 0.0
    scale = max(1.0, np.abs(supply).max())
    shift = 1e-10
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        f, df, _ = _signed_flows(net, cf, pi)
        grad = supply - B @ f
        res = float(np.abs(grad).max())
        if res <= tol * scale:
            break
        H = (B @ sparse.diags(df) @ B.T).tocsc()
        diag_scale = max(float(H.diagonal().max()), 1.0)
        d0 = _dual_value(net, cf, pi, supply)
        accepted = False
        for _ in range(8):
            step = spsolve(H + shift * diag_scale * sparse.identity(net.n_nodes, format="csc"), grad)
            slope = float(grad @ step)
            alpha = 1.0
            while alpha > 1e-12:
                if _dual_value(net, cf, pi + alpha * step, supply) >= d0 + 1e-4 * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
            shift *= 100.0
        if not accepted:
            break
        pi = pi + alpha * step
        shift = max(shift / 10.0, 1e-12)
    f, _, _ = _signed_flows(net, cf, pi)
    return f, pi, float(np.abs(supply - B @ f).max()), it


def decompose_flow(net: Network, f, sources: NodeMeasure, sinks: NodeMeasure, seed=None, floor: float = 1e-14):
    """Split a signed edge flow into source-to-sink paths (flow decomposition).

    Each walk follows the largest remaining outgoing flow, so paths are
    simple when the flow is acyclic.  Returns a list of PathFlow objects.
    """
    m_src = {int(v): a for a, v in enumerate(sources.nodes)}
    m_snk = {int(v): b for b, v in enumerate(sinks.nodes)}
    out_flow = np.abs(np.asarray(f, dtype=float)).copy()
    # orient each edge along its flow
    frm = np.where(f >= 0, net.tail, net.head)
    to = np.where(f >= 0, net.head, net.tail)
    order = np.argsort(frm, kind="stable")
    if seed is not None:
        order = np.lexsort((np.random.default_rng(seed).permutation(order.size), frm))
    indptr = np.concatenate([[0], np.cumsum(np.bincount(frm, minlength=net.n_nodes))])
    adj = order
    supply = {int(v): float(w) for v, w in zip(sources.nodes, sources.mass)}
    demand = {int(v): float(w) for v, w in zip(sinks.nodes, sinks.mass)}
    paths = []
    for s0 in list(supply):
        while supply[s0] > floor:
            nodes, edges = [s0], []
            u = s0
            seen = {s0}
            while not (u in demand and demand[u] > floor and (edges or u not in supply)):
                cand = adj[indptr[u]:indptr[u + 1]]
                cand = cand[out_flow[cand] > floor]
                if cand.size == 0:
                    break
                e = int(cand[np.argmax(out_flow[cand])])
                u = int(to[e])
                edges.append(e)
                nodes.append(u)
                if u in seen:
                    break
                seen.add(u)
            if not (u in demand and demand[u] > floor) or (u in seen and nodes.count(u) > 1):
                break
            amt = min(supply[s0], demand[u], min((out_flow[e] for e in edges), default=np.inf))
            for e in edges:
                out_flow[e] -= amt
            supply[s0] -= amt
            demand[u] -= amt
            paths.append(PathFlow(tuple(nodes), tuple(edges), amt, m_src[s0], m_snk[u]))
    return paths


def solve_wardrop(graph, cf: CongestionFunction, sources: NodeMeasure, sinks: NodeMeasure,
                  mode: str = "long_term", gamma_bar=None, tol: float = 1e-6,
                  max_iter: int = 5000, seed: int | None = None, prune: float = 1e-10,
                  polish: bool = True, warm_tol: float = 1e-2) -> TrafficAssignment:
    """Minimize F over traffic plans by pairwise (away-step) Frank-Wolfe.

    Vertices are all-or-nothing routings; the iterate keeps them with convex
    weights, and each step shifts weight from the worst active vertex to the
    newest direction.  ``long_term`` re-solves the transportation LP on
    current shortest-path costs for every direction; ``short_term`` routes the
    fixed OD matrix ``gamma_bar``.  Stops at relative FW gap <= tol.

    With ``polish`` (long_term only) Frank-Wolfe stops at ``warm_tol`` and a
    Newton method on the node-potential dual finishes the solve; the flow is
    then decomposed into source-to-sink paths.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    net = _as_network(graph)
    m, k = len(sources.nodes), len(sinks.nodes)
    if mode == "short_term":
        if gamma_bar is None:
            raise ValueError("short_term needs the OD matrix gamma_bar")
        gamma_bar = np.asarray(gamma_bar, dtype=float)
        if gamma_bar.shape != (m, k) or np.any(gamma_bar < 0):
            raise ValueError("gamma_bar must be a nonnegative (sources x sinks) matrix")
    elif abs(sources.total - sinks.total) > 1e-10 * max(1.0, sources.total):
        raise ValueError("source and sink masses differ")
    order = np.arange(m) if seed is None else np.random.default_rng(seed).permutation(m)

    if sources.total == 0 or (mode == "short_term" and gamma_bar.sum() == 0):
        return TrafficAssignment(np.zeros(net.n_edges), [], np.zeros((m, k)), sources, sinks,
                                 objective=0.0, gap=0.0, rel_gap=0.0, converged=True)

    cost = edge_costs(net, cf, np.zeros(net.n_edges))
    v0 = _direction(net, cost, sources, sinks, mode, gamma_bar, seed, order)
    verts = {v0.key: v0}
    lam = {v0.key: 1.0}
    x = v0.flows.copy()
    history = []
    converged = False
    F = gap = rel = float("nan")
    use_newton = polish and mode == "long_term"
    fw_tol = max(tol, warm_tol) if use_newton else tol
    it = 0
    for it in range(1, max_iter + 1):
        cost = edge_costs(net, cf, x)
        F = total_cost(net, cf, x)
        s = _direction(net, cost, sources, sinks, mode, gamma_bar, seed, order)
        gap = float(np.dot(cost, x) - np.dot(cost, s.flows))
        rel = gap / F if F > 0 else 0.0
        history.append({"iter": it, "objective": F, "gap": gap, "rel_gap": rel})
        if rel <= fw_tol:
            converged = True
            break
        if s.key not in verts:
            verts[s.key] = s
            lam[s.key] = 0.0
        away = max(lam, key=lambda kk: (np.dot(cost, verts[kk].flows), kk == s.key))
        if away == s.key:
            converged = gap <= 0
            break
        d = s.flows - verts[away].flows
        step = _line_search(net, cf, x, d, lam[away])
        lam[s.key] += step
        lam[away] -= step
        if lam[away] <= 1e-15:
            lam.pop(away)
            verts.pop(away)
        x = np.maximum(x + step * d, 0.0)
        history[-1]["step"] = step
    if use_newton and rel > tol:
        x = sum(lam[kk] * verts[kk].flows for kk in lam)
        pi0 = warm_potentials(net, cf, x, sources, sinks, seed)
        supply = np.zeros(net.n_nodes)
        np.add.at(supply, sources.nodes, sources.mass)
        np.add.at(supply, sinks.nodes, -sinks.mass)
        f, _, resid, n_newton = dual_newton(net, cf, supply, pi0)
        if not resid <= 1e-11 * max(1.0, sources.total):
            # stiff congestion (tiny b) can stall Newton; plain Frank-Wolfe is then reliable
            log.info("dual Newton stalled at residual %.3g; continuing with Frank-Wolfe", resid)
            return solve_wardrop(graph, cf, sources, sinks, mode, gamma_bar, tol, max_iter, seed, prune,
                                 polish=False)
        x = np.abs(f)
        paths = decompose_flow(net, f, sources, sinks, seed)
        cost = edge_costs(net, cf, x)
        F = total_cost(net, cf, x)
        s = _direction(net, cost, sources, sinks, mode, gamma_bar, seed, order)
        gap = max(float(np.dot(cost, x) - np.dot(cost, s.flows)), 0.0)
        rel = gap / F if F > 0 else 0.0
        converged = rel <= tol
        history.append({"iter": it, "objective": F, "gap": gap, "rel_gap": rel,
                        "newton_iterations": n_newton, "newton_residual": resid})
        if not converged:
            log.warning("dual Newton finished at relative gap %.3g (residual %.3g)", rel, resid)
        return _finish(paths, x, sources, sinks, net, cf, gap, rel, it, converged, prune, history)
    if not converged:
        log.warning("Frank-Wolfe stopped after %d iterations at relative gap %.3g", it, rel)

    # recompute the iterate from the vertex weights to shed accumulated drift
    x = sum(lam[kk] * verts[kk].flows for kk in lam)
    agg: dict = {}
    for kk, wv in lam.items():
        for a, b, nodes, edges, mass in verts[kk].paths:
            key = (a, b, edges)
            if key in agg:
                agg[key].weight += wv * mass
            else:
                agg[key] = PathFlow(nodes, edges, wv * mass, a, b)
    return _finish(list(agg.values()), x, sources, sinks, net, cf, gap, rel, it, converged, prune, history)


def _finish(paths, x, sources, sinks, net, cf, gap, rel, it, converged, prune, history):
    m, k = len(sources.nodes), len(sinks.nodes)
    total = sum(pf.weight for pf in paths)
    kept = [pf for pf in paths if pf.weight >= prune]
    pruned = total - sum(pf.weight for pf in kept)
    if kept and pruned > 0:
        scale = total / (total - pruned)
        for pf in kept:
            pf.weight *= scale
    od = np.zeros((m, k))
    for pf in kept:
        od[pf.origin, pf.dest] += pf.weight
    return TrafficAssignment(
        edge_flows=x, paths=kept, od_coupling=od, sources=sources, sinks=sinks,
        objective=total_cost(net, cf, x), gap=gap, rel_gap=rel, iterations=it,
        converged=converged, pruned_mass=float(pruned), history=history,
    )


@dataclass
class CertificateReport:
    passed: bool
    path_condition: bool
    worst_path_excess: float
    heavy_paths: int
    lp_condition: bool | None
    lp_relative_gap: float | None
    vi_condition: bool
    vi_lhs: float
    vi_rhs: float
    stored_paths_above_cphi: bool
    flow_consistency: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def equilibrium_certificate(graph, cf: CongestionFunction, ta: TrafficAssignment, mode: str = "long_term",
                            eps: float = 1e-2, gamma_bar=None) -> CertificateReport:
    """Check the Wardrop conditions for an assignment, recomputing everything from its flows.

    With phi = g(i): (1) each path of weight > eps * total has weighted length
    at most (1 + eps) c_phi(o, d); (2, long_term) the OD coupling is
    eps-optimal for the transportation LP with costs c_phi; and the
    variational inequality sum t i <= sum t i' + eps holds for the
    comparison flow i' routed on shortest paths.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    net = _as_network(graph)
    flows = np.asarray(ta.edge_flows, dtype=float)
    cost = edge_costs(net, cf, flows)
    src, snk = ta.sources, ta.sinks
    table, preds = net.cost_table(cost, src.nodes, snk.nodes)
    total = sum(pf.weight for pf in ta.paths)
    worst, heavy, above = 0.0, 0, True
    for pf in ta.paths:
        L = float(np.sum(cost[np.asarray(pf.edges, dtype=np.int64)]))
        c = table[pf.origin, pf.dest]
        if L < c - 1e-12 * max(1.0, c):
            above = False
        if pf.weight > eps * total:
            heavy += 1
            worst = max(worst, L / c - 1 if c > 0 else (np.inf if L > 0 else 0.0))
    path_ok = worst <= eps

    lp_ok, lp_gap = None, None
    if mode == "long_term":
        if total > 0:
            plan, opt, _, _ = solve_transport(src.mass, snk.mass, table)
            value = float(np.sum(ta.od_coupling * table))
            lp_gap = (value - opt) / opt if opt > 0 else value
            lp_ok = lp_gap <= eps
            compare = plan
        else:
            lp_gap, lp_ok, compare = 0.0, True, np.zeros_like(ta.od_coupling)
    else:
        compare = ta.od_coupling if gamma_bar is None else np.asarray(gamma_bar, dtype=float)
    vi_lhs = float(np.dot(cost, flows))
    vi_rhs = float(np.sum(compare * table))
    vi_ok = vi_lhs <= vi_rhs + eps
    consistency = float(np.max(np.abs(flows_from_paths(net, ta.paths) - flows))) if ta.paths else float(np.max(np.abs(flows), initial=0.0))
    passed = bool(path_ok and vi_ok and (lp_ok is not False) and above and consistency <= max(eps, 1e-8))
    return CertificateReport(passed, bool(path_ok), float(worst), heavy, lp_ok,
                             None if lp_gap is None else float(lp_gap), bool(vi_ok), vi_lhs, vi_rhs,
                             bool(above), consistency)


def edge_axes(lattice: HorizontalLattice) -> np.ndarray:
    """Frame index j of each lattice edge (edges run tail -> tail . (h e_j))."""
    net = lattice.network
    di = lattice.int_coords(net.head)[:, :-1] - lattice.int_coords(net.tail)[:, :-1]
    return np.argmax(np.abs(di), axis=1)


def intensity_to_field(lattice: HorizontalLattice, ta: TrafficAssignment, grid: GridField) -> GridField:
    """Bin i_e len_e at the midpoint of each edge's horizontal segment, per unit volume."""
    net = lattice.network
    used = np.nonzero(ta.edge_flows > 0)[0]
    tail = lattice.coords(net.tail[used])
    step = np.zeros_like(tail)
    step[np.arange(used.size), edge_axes(lattice)[used]] = lattice.h / 2
    mid = hgroup.compose(tail, step)
    flat, inside = grid.locate(mid)
    if not inside.all():
        raise ValueError("edge midpoints outside the grid box")
    acc = np.bincount(flat, weights=ta.edge_flows[used] * net.length[used], minlength=int(np.prod(grid.shape)))
    return grid.with_values(acc.reshape(grid.shape) / grid.cell_volume)


def detour_perturbation(graph, ta: TrafficAssignment, fraction: float = 0.3, cf=None) -> TrafficAssignment:
    """Move ``fraction`` of the heaviest path onto a copy with a back-and-forth spur.

    The spur runs out and back along the first edge incident to an interior
    node of the path that is not the next path edge.
    """
    net = _as_network(graph)
    heaviest = max(ta.paths, key=lambda pf: pf.weight)
    indptr, nbr, eid = net.csr()
    pos = len(heaviest.nodes) // 2
    u = heaviest.nodes[pos]
    nxt = heaviest.edges[pos] if pos < len(heaviest.edges) else -1
    cand = [(int(e), int(v)) for e, v in zip(eid[indptr[u]:indptr[u + 1]], nbr[indptr[u]:indptr[u + 1]]) if e != nxt]
    e, v = cand[0]
    nodes = heaviest.nodes[:pos + 1] + (v, u) + heaviest.nodes[pos + 1:]
    edges = heaviest.edges[:pos] + (e, e) + heaviest.edges[pos:]
    moved = fraction * heaviest.weight
    paths = []
    for pf in ta.paths:
        w = pf.weight - moved if pf is heaviest else pf.weight
        paths.append(PathFlow(pf.nodes, pf.edges, w, pf.origin, pf.dest))
    paths.append(PathFlow(nodes, edges, moved, heaviest.origin, heaviest.dest))
    return assignment_from_paths(net, paths, ta.sources, ta.sinks, cf)
