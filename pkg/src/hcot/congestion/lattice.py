"""Horizontal lattice: nodes (i h, k h^2/2), edges the time-h flows of +-X_j.

With integer coordinates (i_1, ..., i_2n, k) a step along X_j (j < n) sends
k -> k - i_{n+j}, a step along X_{n+j} sends k -> k + i_j, and the reverse
steps flip the sign.  Every edge therefore lands exactly on a node.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

from .. import hgroup
from ..density import GridField
from ..otcore import DiscreteMeasure
from .graph import Network


@dataclass(frozen=True)
class NodeMeasure:
    """Masses sitting on lattice (or network) nodes."""

    nodes: np.ndarray
    mass: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.mass))


@numba.njit(cache=True)
def _step_targets(dims, offs, n, ids, j, sign):
    d = dims.size
    out = np.empty(ids.size, np.int64)
    idx = np.empty(d, np.int64)
    for a in range(ids.size):
        r = ids[a]
        for ax in range(d - 1, -1, -1):
            idx[ax] = r % dims[ax]
            r //= dims[ax]
        if j < n:
            dk = -sign * (idx[n + j] + offs[n + j])
        else:
            dk = sign * (idx[j - n] + offs[j - n])
        ij = idx[j] + sign
        kk = idx[d - 1] + dk
        if ij < 0 or ij >= dims[j] or kk < 0 or kk >= dims[d - 1]:
            out[a] = -1
            continue
        idx[j] = ij
        idx[d - 1] = kk
        flat = 0
        for ax in range(d):
            flat = flat * dims[ax] + idx[ax]
        out[a] = flat
    return out


@numba.njit(cache=True)
def _bfs_hops(dims, offs, n, source, targets):
    """Hop counts from source to each target on the implicit lattice (-1 if unreachable)."""
    d = dims.size
    total = 1
    for ax in range(d):
        total *= dims[ax]
    hops = np.full(total, -1, np.int32)
    queue = np.empty(total, np.int64)
    wanted = np.zeros(total, np.bool_)
    for t in targets:
        wanted[t] = True
    remaining = 0
    for t in range(total):
        if wanted[t]:
            remaining += 1
    idx = np.empty(d, np.int64)
    hops[source] = 0
    queue[0] = source
    qh, qt = 0, 1
    if wanted[source]:
        remaining -= 1
    while qh < qt and remaining > 0:
        u = queue[qh]
        qh += 1
        r = u
        for ax in range(d - 1, -1, -1):
            idx[ax] = r % dims[ax]
            r //= dims[ax]
        for j in range(2 * n):
            if j < n:
                partner = idx[n + j] + offs[n + j]
                base_dk = -partner
            else:
                partner = idx[j - n] + offs[j - n]
                base_dk = partner
            for sign in (1, -1):
                ij = idx[j] + sign
                kk = idx[d - 1] + sign * base_dk
                if ij < 0 or ij >= dims[j] or kk < 0 or kk >= dims[d - 1]:
                    continue
                old_j, old_k = idx[j], idx[d - 1]
                idx[j] = ij
                idx[d - 1] = kk
                v = 0
                for ax in range(d):
                    v = v * dims[ax] + idx[ax]
                idx[j] = old_j
                idx[d - 1] = old_k
                if hops[v] < 0:
                    hops[v] = hops[u] + 1
                    queue[qt] = v
                    qt += 1
                    if wanted[v]:
                        remaining -= 1
    out = np.empty(targets.size, np.int64)
    for a in range(targets.size):
        out[a] = hops[targets[a]]
    return out


@dataclass(frozen=True)
class HorizontalLattice:
    n: int
    h: float
    imin: tuple
    imax: tuple
    kmin: int
    kmax: int

    @property
    def dims(self) -> np.ndarray:
        return np.array([b - a + 1 for a, b in zip(self.imin, self.imax)] + [self.kmax - self.kmin + 1],
                        dtype=np.int64)

    @property
    def offsets(self) -> np.ndarray:
        return np.array(list(self.imin) + [self.kmin], dtype=np.int64)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def vertical_spacing(self) -> float:
        return self.h * self.h / 2

    def int_coords(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        idx = np.stack(np.unravel_index(ids, tuple(self.dims)), axis=-1)
        return idx + self.offsets

    def coords(self, ids) -> np.ndarray:
        ic = self.int_coords(ids).astype(float)
        ic[..., :-1] *= self.h
        ic[..., -1] *= self.vertical_spacing
        return ic

    def node_id(self, int_coords) -> np.ndarray:
        """Flat id of integer coordinates; -1 where outside the box."""
        ic = np.atleast_2d(np.asarray(int_coords, dtype=np.int64)) - self.offsets
        ok = np.all((ic >= 0) & (ic < self.dims), axis=-1)
        out = np.full(len(ic), -1, dtype=np.int64)
        if ok.any():
            out[ok] = np.ravel_multi_index(tuple(ic[ok].T), tuple(self.dims))
        return out

    def locate_point(self, pts) -> np.ndarray:
        """Id of the node at a point that lies on the lattice (within 1e-9 relative); -1 otherwise."""
        pts = np.atleast_2d(hgroup.as_point(pts, self.n))
        scale = np.full(pts.shape[-1], self.h)
        scale[-1] = self.vertical_spacing
        q = pts / scale
        r = np.round(q)
        on = np.all(np.abs(q - r) <= 1e-9 * np.maximum(1, np.abs(q)), axis=-1)
        out = self.node_id(r.astype(np.int64))
        out[~on] = -1
        return out

    def step(self, ids, j: int, sign: int = 1) -> np.ndarray:
        """Node reached from each id by the time-(sign h) flow of X_j; -1 if it leaves the box."""
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        return _step_targets(self.dims, self.offsets, self.n, ids, int(j), int(sign))

    def neighbors(self, node: int) -> list:
        out = []
        for j in range(2 * self.n):
            for sign in (1, -1):
                v = int(self.step([node], j, sign)[0])
                if v >= 0:
                    out.append(v)
        return out

    @cached_property
    def network(self) -> Network:
        """Explicit graph; edge order is (node, j) for the +X_j step out of each node."""
        ids = np.arange(self.num_nodes, dtype=np.int64)
        tails, heads = [], []
        for j in range(2 * self.n):
            tgt = self.step(ids, j, 1)
            ok = tgt >= 0
            tails.append(ids[ok])
            heads.append(tgt[ok])
        tail = np.concatenate(tails)
        head = np.concatenate(heads)
        return Network(self.num_nodes, tail, head, np.full(tail.size, self.h), coords=None)

    def hop_distances(self, source: int, targets) -> np.ndarray:
        """Edge counts of shortest lattice paths, via BFS without building the graph."""
        targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
        return _bfs_hops(self.dims, self.offsets, self.n, int(source), targets)


def build_lattice(lo, hi, h: float) -> HorizontalLattice:
    """Lattice of nodes (i h, k h^2/2) inside the box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dims = hgroup.ModelDims.from_dim(lo.size)
    if hi.shape != lo.shape:
        raise ValueError("box corners must have the same length")
    if not h > 0:
        raise ValueError("spacing h must be positive")
    if np.any(hi < lo):
        raise ValueError("empty box")
    scale = np.full(lo.size, float(h))
    scale[-1] = h * h / 2
    imin = np.ceil(lo / scale - 1e-9).astype(np.int64)
    imax = np.floor(hi / scale + 1e-9).astype(np.int64)
    if np.any(imax < imin):
        raise ValueError("box too small to contain a lattice node")
    return HorizontalLattice(dims.n, float(h), tuple(int(v) for v in imin[:-1]),
                             tuple(int(v) for v in imax[:-1]), int(imin[-1]), int(imax[-1]))


def _edge_costs(lattice: HorizontalLattice, phi) -> np.ndarray:
    net = lattice.network
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 0:
        return np.full(net.n_edges, lattice.h * float(phi))
    if phi.shape != (lattice.num_nodes,):
        raise ValueError("node weights need one value per node")
    return lattice.h * (phi[net.tail] + phi[net.head]) / 2


def _check_weight(phi):
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0) or not np.all(np.isfinite(phi)):
        raise ValueError("weights must be finite and nonnegative")
    return phi


def weighted_length(lattice: HorizontalLattice, phi, path) -> float:
    """Trapezoid value of the weighted length along a node path."""
    phi = _check_weight(phi)
    path = np.asarray(path, dtype=np.int64)
    w = np.broadcast_to(phi, (lattice.num_nodes,)) if phi.ndim == 0 else phi
    total = 0.0
    for u, v in zip(path[:-1], path[1:]):
        if int(v) not in lattice.neighbors(int(u)):
            raise ValueError(f"nodes {int(u)} and {int(v)} are not adjacent")
        total += lattice.h * (w[u] + w[v]) / 2
    return float(total)


def c_phi(lattice: HorizontalLattice, phi, sources, sinks, edge_weights=None) -> np.ndarray:
    """Shortest weighted lattice distances; +inf for disconnected pairs.

    ``phi`` is a scalar or one weight per node.  ``edge_weights`` (one per
    edge of ``lattice.network``) overrides it.  A uniform scalar weight is
    served by breadth-first search on the implicit lattice, which scales to
    lattices far larger than the explicit graph.
    """
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    sinks = np.atleast_1d(np.asarray(sinks, dtype=np.int64))
    if edge_weights is None:
        phi = _check_weight(phi)
        if phi.ndim == 0:
            out = np.empty((sources.size, sinks.size))
            for a, s in enumerate(sources):
                hops = lattice.hop_distances(s, sinks).astype(float)
                out[a] = np.where(hops < 0, np.inf, hops * lattice.h * float(phi))
            return out
        cost = _edge_costs(lattice, phi)
    else:
        cost = _check_weight(edge_weights) * lattice.network.length
    table, _ = lattice.network.cost_table(cost, sources, sinks)
    return table


def snap_measure(lattice: HorizontalLattice, m) -> NodeMeasure:
    """Move each atom (or grid cell) to its nearest node; ties go to the lower index on each axis."""
    if lattice.num_nodes == 0:
        raise ValueError("empty lattice")
    if isinstance(m, DiscreteMeasure):
        pts, w = m.points, m.weights
    elif isinstance(m, GridField):
        pts = m.centers().reshape(-1, len(m.shape))
        w = m.values.ravel() * m.cell_volume
        keep = w > 0
        pts, w = pts[keep], w[keep]
    else:
        raise TypeError("expected a DiscreteMeasure or GridField")
    scale = np.full(pts.shape[-1], lattice.h)
    scale[-1] = lattice.vertical_spacing
    # round half toward -inf so equidistant nodes resolve to the smaller index
    ic = np.ceil(pts / scale - 0.5).astype(np.int64)
    ic = np.clip(ic, lattice.offsets, lattice.offsets + lattice.dims - 1)
    ids = lattice.node_id(ic)
    nodes, inv = np.unique(ids, return_inverse=True)
    mass = np.bincount(inv.ravel(), weights=w)
    return NodeMeasure(nodes, mass)


def holder_diagnostic(lattice: HorizontalLattice, p: float, seed: int = 0, anchor=None, levels: int = 4):
    """Fitted exponent of |c_phi(x, y) - c_phi(x, y')| against d_CC(y, y') for random phi.

    phi is random, nonnegative and normalized to ||phi||_{p'} = 1 on the
    lattice; separations are dyadic multiples of h along the first
    horizontal axis.  Returns (slope, alpha) with alpha = 1 - N/p'.
    """
    from .. import geodesy

    rng = np.random.default_rng(seed)
    pc = p / (p - 1)
    N = 2 * lattice.n + 2
    phi = rng.uniform(0.0, 1.0, lattice.num_nodes)
    cell = lattice.h ** (2 * lattice.n) * lattice.vertical_spacing
    phi /= (np.sum(phi**pc) * cell) ** (1 / pc)
    center = lattice.offsets + lattice.dims // 2
    x = lattice.node_id(anchor if anchor is not None else lattice.offsets + lattice.dims // 4)[0]
    seps, diffs = [], []
    for lev in range(levels):
        step = 2**lev
        y = center.copy()
        yp = center.copy()
        yp[0] += step
        ids = lattice.node_id(np.stack([y, yp]))
        if np.any(ids < 0):
            break
        c = c_phi(lattice, phi, [x], ids)[0]
        d = geodesy.cc_distance(lattice.coords(ids[0]), lattice.coords(ids[1]))
        seps.append(float(d))
        diffs.append(abs(c[0] - c[1]))
    seps, diffs = np.array(seps), np.maximum(np.array(diffs), 1e-300)
    slope = float(np.polyfit(np.log(seps), np.log(diffs), 1)[0]) if len(seps) > 1 else float("nan")
    return slope, 1 - N / pc
