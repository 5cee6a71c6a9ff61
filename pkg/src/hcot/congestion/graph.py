"""Undirected multigraphs in CSR form and numba shortest-path kernels."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

_WORKERS = 1


def set_workers(k: int) -> None:
    """Threads used for multi-source shortest paths (the Dijkstra kernel releases the GIL)."""
    global _WORKERS
    if int(k) < 1:
        raise ValueError("need at least one worker")
    _WORKERS = int(k)


@numba.njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        vals[parent], vals[i] = vals[i], vals[parent]
        i = parent
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, vals, size):
    key = keys[0]
    val = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        if left + 1 < size and keys[left + 1] < keys[left]:
            child = left + 1
        if keys[i] <= keys[child]:
            break
        keys[child], keys[i] = keys[i], keys[child]
        vals[child], vals[i] = vals[i], vals[child]
        i = child
    return key, val, size


@numba.njit(cache=True, nogil=True)
def dijkstra(indptr, nbr, eid, cost, source):
    """Single-source shortest paths; returns distances and the edge used to reach each node."""
    n_nodes = indptr.size - 1
    dist = np.full(n_nodes, np.inf)
    pred = np.full(n_nodes, -1, np.int64)
    done = np.zeros(n_nodes, np.bool_)
    cap = nbr.size + 2
    keys = np.empty(cap)
    vals = np.empty(cap, np.int64)
    dist[source] = 0.0
    size = _heap_push(keys, vals, 0, 0.0, source)
    while size > 0:
        d, u, size = _heap_pop(keys, vals, size)
        if done[u]:
            continue
        done[u] = True
        for k in range(indptr[u], indptr[u + 1]):
            v = nbr[k]
            nd = d + cost[eid[k]]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = eid[k]
                size = _heap_push(keys, vals, size, nd, v)
    return dist, pred


@dataclass
class Network:
    """Undirected multigraph: edge e joins tail[e] and head[e] with length length[e]."""

    n_nodes: int
    tail: np.ndarray
    head: np.ndarray
    length: np.ndarray
    coords: np.ndarray | None = None
    _csr: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.tail = np.asarray(self.tail, dtype=np.int64)
        self.head = np.asarray(self.head, dtype=np.int64)
        self.length = np.asarray(self.length, dtype=float)
        if not (self.tail.shape == self.head.shape == self.length.shape):
            raise ValueError("edge arrays must align")
        if self.tail.size and (min(self.tail.min(), self.head.min()) < 0
                               or max(self.tail.max(), self.head.max()) >= self.n_nodes):
            raise ValueError("edge endpoint out of range")
        if np.any(self.length <= 0):
            raise ValueError("edge lengths must be positive")

    @property
    def n_edges(self) -> int:
        return int(self.tail.size)

    def csr(self, seed: int | None = None):
        """Adjacency (indptr, neighbour, edge id); a seed shuffles each node's list."""
        key = -1 if seed is None else int(seed)
        if key not in self._csr:
            ends = np.concatenate([self.tail, self.head])
            other = np.concatenate([self.head, self.tail])
            eids = np.concatenate([np.arange(self.n_edges)] * 2)
            if seed is None:
                order = np.lexsort((eids, ends))
            else:
                jitter = np.random.default_rng(seed).permutation(ends.size)
                order = np.lexsort((jitter, ends))
            counts = np.bincount(ends, minlength=self.n_nodes)
            indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            self._csr[key] = (indptr, other[order].astype(np.int64), eids[order].astype(np.int64))
        return self._csr[key]

    def shortest_paths(self, cost, source: int, seed: int | None = None):
        indptr, nbr, eid = self.csr(seed)
        return dijkstra(indptr, nbr, eid, np.asarray(cost, dtype=float), int(source))

    def trace(self, pred, source: int, target: int):
        """Node and edge sequences of the shortest-path tree branch from source to target."""
        nodes, edges = [int(target)], []
        v = int(target)
        while v != source:
            e = int(pred[v])
            if e < 0:
                raise ValueError(f"node {target} unreachable from {source}")
            edges.append(e)
            v = int(self.tail[e] if self.head[e] == v else self.head[e])
            nodes.append(v)
        return tuple(reversed(nodes)), tuple(reversed(edges))

    def cost_table(self, cost, sources, sinks, seed: int | None = None):
        """Shortest-path costs between node sets, plus the predecessor arrays per source."""
        sinks = np.asarray(sinks, dtype=np.int64)
        self.csr(seed)
        run = lambda s: self.shortest_paths(cost, s, seed)
        if _WORKERS > 1 and len(sources) > 1:
            with ThreadPoolExecutor(_WORKERS) as pool:
                results = list(pool.map(run, sources))
        else:
            results = [run(s) for s in sources]
        table = np.array([dist[sinks] for dist, _ in results]).reshape(len(sources), len(sinks))
        return table, [pred for _, pred in results]

    def edge_between(self, u: int, v: int, cost=None) -> int:
        """Cheapest edge joining u and v (lowest id on ties), or -1."""
        indptr, nbr, eid = self.csr()
        cand = eid[indptr[u]:indptr[u + 1]][nbr[indptr[u]:indptr[u + 1]] == v]
        if cand.size == 0:
            return -1
        if cost is None:
            return int(cand.min())
        c = np.asarray(cost)[cand]
        return int(cand[np.lexsort((cand, c))][0])


def two_link_network() -> Network:
    """Two parallel unit-length edges between node 0 and node 1."""
    return Network(2, [0, 0], [1, 1], [1.0, 1.0])
