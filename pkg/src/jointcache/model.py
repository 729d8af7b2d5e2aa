"""Cache-network instances, strategies and the link/cache constraint functions.

A request ``(i, p)`` asks for item ``i`` along the node path ``p = (p_1, ..., p_K)``
ending at a designated server of ``i``.  The response for a request travelling
over the hop ``(p_k, p_{k+1})`` comes back over the reverse edge
``(p_{k+1}, p_k)``; its expected rate there is the admitted rate times the
probability that none of ``p_1 .. p_k`` caches the item.

Everything is evaluated in two forms:

* on :class:`Strategy` objects (dense ``y`` matrix plus residual vector ``r``),
  which is the public surface, and
* on flat solver vectors ``x = (y_free, r)`` through :class:`Layout`, which
  holds the per-hop index arrays used by the solvers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Graph",
    "Request",
    "Instance",
    "Strategy",
    "ConstraintEval",
    "FeasibilityReport",
    "Layout",
    "validate_instance",
    "link_loads",
    "constraint_values",
    "constraint_gradients",
    "g_tilde_values",
    "feasibility_report",
    "lattice_check_sample",
    "instance_to_dict",
    "instance_from_dict",
    "strategy_to_dict",
    "strategy_from_dict",
]


@dataclass(frozen=True)
class Graph:
    """Directed graph on nodes ``0 .. node_count-1``."""

    node_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}

    @cached_property
    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            if 0 <= a < self.node_count:
                adj[a].append(b)
        return [sorted(set(nb)) for nb in adj]

    @classmethod
    def from_undirected(cls, node_count: int, pairs: Iterable[tuple[int, int]]) -> "Graph":
        seen = set()
        for a, b in pairs:
            a, b = int(a), int(b)
            if a == b:
                continue
            seen.add((a, b))
            seen.add((b, a))
        return cls(node_count, tuple(sorted(seen)))


@dataclass(frozen=True)
class Request:
    item: int
    path: tuple[int, ...]
    demand: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(v) for v in self.path))


@dataclass(frozen=True, eq=False)
class Instance:
    """Full problem datum.

    ``link_capacity`` is aligned with ``graph.edges``: entry ``k`` bounds the
    response traffic flowing along the directed edge ``graph.edges[k]``.
    ``cache_capacity`` is the raw node capacity ``c_v``, designated-server
    copies included.
    """

    graph: Graph
    catalog_size: int
    servers: tuple[frozenset[int], ...]
    requests: tuple[Request, ...]
    link_capacity: np.ndarray
    cache_capacity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "servers", tuple(frozenset(int(v) for v in s) for s in self.servers))
        object.__setattr__(self, "requests", tuple(self.requests))
        object.__setattr__(self, "link_capacity", np.asarray(self.link_capacity, dtype=float))
        object.__setattr__(self, "cache_capacity", np.asarray(self.cache_capacity, dtype=int))

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    @property
    def demands(self) -> np.ndarray:
        return np.array([q.demand for q in self.requests], dtype=float)

    @cached_property
    def pinned(self) -> np.ndarray:
        """Boolean ``[node, item]`` mask of designated-server entries."""
        mask = np.zeros((self.node_count, self.catalog_size), dtype=bool)
        for i, nodes in enumerate(self.servers):
            for v in nodes:
                if 0 <= v < self.node_count:
                    mask[v, i] = True
        return mask

    @property
    def effective_cache_capacity(self) -> np.ndarray:
        return self.cache_capacity - self.pinned.sum(axis=1)

    @cached_property
    def layout(self) -> "Layout":
        return Layout(self)

    def with_link_capacity(self, link_capacity) -> "Instance":
        return Instance(self.graph, self.catalog_size, self.servers, self.requests,
                        np.asarray(link_capacity, dtype=float), self.cache_capacity)

    def scaled(self, m: float) -> "Instance":
        """Demands and link capacities multiplied by ``m``."""
        reqs = tuple(Request(q.item, q.path, q.demand * m) for q in self.requests)
        return Instance(self.graph, self.catalog_size, self.servers, reqs,
                        self.link_capacity * m, self.cache_capacity)

    def empty_strategy(self, reject_all: bool = False) -> "Strategy":
        y = self.pinned.astype(float)
        r = self.demands.copy() if reject_all else np.zeros(len(self.requests))
        return Strategy(y, r)


@dataclass(frozen=True, eq=False)
class Strategy:
    """Cache probabilities ``y[node, item]`` and residual rates ``r[request]``."""

    y: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))

    def admitted(self, inst: Instance) -> np.ndarray:
        return inst.demands - self.r


@dataclass
class ConstraintEval:
    g_link: np.ndarray
    threshold: np.ndarray
    link_slack: np.ndarray
    cache_usage: np.ndarray
    cache_slack: np.ndarray


@dataclass
class FeasibilityReport:
    feasible: bool
    max_violation: float
    satisfied_ratio: float
    link_slack: np.ndarray
    cache_slack: np.ndarray
    box_violation: float
    violated_edges: list[int] = field(default_factory=list)
    violated_nodes: list[int] = field(default_factory=list)


class Layout:
    """Index arrays mapping an instance onto flat solver vectors.

    Solver vectors are ``x = (y_free, r)``.  ``y_free`` holds only the cache
    entries that can influence some link load: node ``v`` lies on the strict
    prefix of a request for item ``i`` and is not a server of ``i``.  Other
    free entries stay at zero in every solver.

    Per request ``n`` and hop ``k`` (0-based, ``k < K-1``):

    * ``hop_var[n, k]``  solver index of ``y[p_k, i]``,
    * ``hop_edge[n, k]`` edge index of the response edge ``(p_{k+1}, p_k)``.
    """

    def __init__(self, inst: Instance):
        self.n_nodes = inst.node_count
        self.n_items = inst.catalog_size
        self.n_req = len(inst.requests)
        self.n_edges = len(inst.graph.edges)
        self.demand = inst.demands
        pinned = inst.pinned

        pairs: dict[tuple[int, int], int] = {}
        for q in inst.requests:
            for v in q.path[:-1]:
                if not pinned[v, q.item]:
                    pairs.setdefault((v, q.item), 0)
        order = sorted(pairs)
        self.var_node = np.array([v for v, _ in order], dtype=int)
        self.var_item = np.array([i for _, i in order], dtype=int)
        self.n_y = len(order)
        self.n_vars = self.n_y + self.n_req
        self.var_of = -np.ones((self.n_nodes, self.n_items), dtype=int)
        self.var_of[self.var_node, self.var_item] = np.arange(self.n_y)

        hops = max([len(q.path) - 1 for q in inst.requests] + [1])
        self.n_hops = hops
        self.hop_var = np.zeros((self.n_req, hops), dtype=int)
        self.hop_edge = np.zeros((self.n_req, hops), dtype=int)
        self.hop_mask = np.zeros((self.n_req, hops), dtype=bool)
        eidx = inst.graph.edge_index
        for n, q in enumerate(inst.requests):
            for k in range(len(q.path) - 1):
                a, b = q.path[k], q.path[k + 1]
                self.hop_var[n, k] = self.var_of[a, q.item]
                self.hop_edge[n, k] = eidx[(b, a)]
                self.hop_mask[n, k] = True
        m = self.hop_mask
        self.load_max = np.bincount(self.hop_edge[m], weights=np.broadcast_to(self.demand[:, None], m.shape)[m],
                                    minlength=self.n_edges)
        self.n_paths = np.bincount(self.hop_edge[m], minlength=self.n_edges)
        self.capacity = inst.link_capacity.copy()
        self.threshold = self.load_max - self.capacity
        self.traffic = self.n_paths > 0
        self.cache_room = inst.effective_cache_capacity.astype(float)
        # csr matrix summing y_free entries per node
        self.node_sum = sp.csr_matrix(
            (np.ones(self.n_y), (self.var_node, np.arange(self.n_y))), shape=(self.n_nodes, self.n_y))
        self.vars_per_node = np.bincount(self.var_node, minlength=self.n_nodes)
        # flattened term arrays
        self._rows, self._cols = np.nonzero(m)

    # -- conversions -------------------------------------------------------
    def pack(self, s: Strategy) -> np.ndarray:
        return np.concatenate([s.y[self.var_node, self.var_item], s.r])

    def unpack(self, x: np.ndarray, pinned: np.ndarray) -> Strategy:
        y = pinned.astype(float)
        y[self.var_node, self.var_item] = x[: self.n_y]
        return Strategy(y, x[self.n_y:].copy())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.zeros(self.n_vars)
        hi = np.concatenate([np.ones(self.n_y), self.demand])
        return lo, hi

    # -- core products -----------------------------------------------------
    def hop_q(self, x: np.ndarray) -> np.ndarray:
        y = x[: self.n_y]
        q = np.where(self.hop_mask, 1.0 - y[self.hop_var], 1.0)
        return q

    def prefix(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = self.hop_q(x)
        return q, np.cumprod(q, axis=1)

    def admitted(self, x: np.ndarray) -> np.ndarray:
        return self.demand - x[self.n_y:]

    def loads(self, x: np.ndarray) -> np.ndarray:
        _, P = self.prefix(x)
        a = self.admitted(x)
        T = a[:, None] * P
        rows, cols = self._rows, self._cols
        return np.bincount(self.hop_edge[rows, cols], weights=T[rows, cols], minlength=self.n_edges)

    def g_link(self, x: np.ndarray) -> np.ndarray:
        return self.load_max - self.loads(x)

    def cache_usage(self, x: np.ndarray) -> np.ndarray:
        return self.node_sum @ x[: self.n_y]

    @cached_property
    def edge_terms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Hop terms grouped by response edge: ``(ptr, request, hop)``.

        Terms of edge ``e`` are ``request[ptr[e]:ptr[e+1]]`` with matching hops.
        """
        rr, kk = self._rows, self._cols
        e = self.hop_edge[rr, kk]
        order = np.argsort(e, kind="stable")
        ptr = np.searchsorted(e[order], np.arange(self.n_edges + 1))
        return ptr, rr[order], kk[order]

    def tilde_supergradient(self, x: np.ndarray, e: int) -> np.ndarray:
        """Supergradient of the surrogate on edge ``e`` (zero on saturated terms)."""
        ptr, rn, rk = self.edge_terms
        n, k = rn[ptr[e]:ptr[e + 1]], rk[ptr[e]:ptr[e + 1]]
        y = x[: self.n_y]
        ys = np.where(self.hop_mask[n], y[self.hop_var[n]], 0.0)
        H = self.n_hops
        upto = np.arange(H)[None, :] <= k[:, None]
        arg = x[self.n_y + n] / self.demand[n] + np.where(upto, ys, 0.0).sum(axis=1)
        act = arg < 1.0
        d = np.zeros(self.n_vars)
        np.add.at(d, self.n_y + n[act], 1.0)
        sel = upto[act]
        vars_ = self.hop_var[n[act]][sel]
        lam = np.broadcast_to(self.demand[n[act]][:, None], sel.shape)[sel]
        np.add.at(d, vars_, lam)
        return d

    # -- sparse derivative assembly -----------------------------------------
    def _excl(self, q: np.ndarray) -> np.ndarray:
        """``E[n, j, k] = prod_{j<m<=k} q[n, m]`` for ``k >= j``, zero below."""
        N, H = q.shape
        E = np.zeros((N, H, H))
        for j in range(H):
            E[:, j, j] = 1.0
            if j + 1 < H:
                E[:, j, j + 1:] = np.cumprod(q[:, j + 1:], axis=1)
        return E

    @cached_property
    def _jac_terms(self):
        # (request, var hop j, edge hop k) with j <= k, plus (request, hop) for r
        m = self.hop_mask
        n, j, k = np.nonzero(m[:, :, None] & m[:, None, :] & np.triu(np.ones((self.n_hops,) * 2, bool)))
        rn, rk = np.nonzero(m)
        rows = np.concatenate([self.hop_edge[n, k], self.hop_edge[rn, rk]])
        cols = np.concatenate([self.hop_var[n, j], self.n_y + rn])
        return (n, j, k, rn, rk), rows, cols

    @cached_property
    def _hess_terms(self):
        m = self.hop_mask
        H = self.n_hops
        upper = np.triu(np.ones((H, H), bool), 1)
        n, j, l = np.nonzero(m[:, :, None] & m[:, None, :] & upper)
        cn, cj = np.nonzero(m)
        vj, vl = self.hop_var[n, j], self.hop_var[n, l]
        vc, rc = self.hop_var[cn, cj], self.n_y + cn
        rows = np.concatenate([vj, vl, vc, rc])
        cols = np.concatenate([vl, vj, rc, vc])
        return (n, j, l, cn, cj), _Assembler(rows, cols, (self.n_vars, self.n_vars))

    def jacobian_assemblers(self, edges: np.ndarray | None = None):
        """Assemblers for the Jacobian restricted to ``edges`` and its transpose."""
        key = None if edges is None else np.asarray(edges).tobytes()
        cache = self.__dict__.setdefault("_jac_asm", {})
        if key not in cache:
            _, rows, cols = self._jac_terms
            if edges is None:
                sel = np.ones(rows.size, bool)
                pos = np.arange(self.n_edges)
                n_rows = self.n_edges
            else:
                pos = -np.ones(self.n_edges, dtype=int)
                pos[edges] = np.arange(len(edges))
                sel = pos[rows] >= 0
                n_rows = len(edges)
            r2 = pos[rows[sel]]
            c2 = cols[sel]
            cache[key] = (sel, _Assembler(r2, c2, (n_rows, self.n_vars)),
                          _Assembler(c2, r2, (self.n_vars, n_rows)))
        return cache[key]

    def jacobian_values(self, x: np.ndarray) -> np.ndarray:
        q, P = self.prefix(x)
        a = self.admitted(x)
        A = np.ones_like(q)
        A[:, 1:] = P[:, :-1]
        E = self._excl(q)
        (n, j, k, rn, rk), _, _ = self._jac_terms
        return np.concatenate([a[n] * A[n, j] * E[n, j, k], P[rn, rk]])

    def link_jacobian(self, x: np.ndarray, edges: np.ndarray | None = None,
                      transpose: bool = False) -> sp.csr_matrix:
        """Sparse Jacobian of ``g_link`` (edges x solver variables).

        ``dg_e/dr_n`` is the miss probability of the prefix ending at the hop
        mapped to ``e``; ``dg_e/dy_j = a_n prod_{m<=k, m!=j} q_m``.
        """
        sel, asm, asm_t = self.jacobian_assemblers(edges)
        vals = self.jacobian_values(x)[sel]
        return asm_t.build(vals) if transpose else asm.build(vals)

    def weighted_link_hessian(self, x: np.ndarray, w: np.ndarray) -> sp.csr_matrix:
        """Hessian of ``sum_e w_e g_e`` over solver variables (symmetric, sparse).

        Uses prefix products ``A_j = prod_{m<j} q_m`` and the backward
        weighted tails ``B_j = W_j + q_{j+1} B_{j+1}``.
        """
        q = self.hop_q(x)
        a = self.admitted(x)
        H = self.n_hops
        W = np.where(self.hop_mask, w[self.hop_edge], 0.0)
        A = np.ones_like(q)
        A[:, 1:] = np.cumprod(q[:, :-1], axis=1)
        B = np.zeros_like(q)
        B[:, H - 1] = W[:, H - 1]
        for j in range(H - 2, -1, -1):
            B[:, j] = W[:, j] + q[:, j + 1] * B[:, j + 1]
        E = self._excl(q)
        (n, j, l, cn, cj), asm = self._hess_terms
        # prod_{j<m<l} q_m is E[n, j, l-1]
        pair = -a[n] * A[n, j] * E[n, j, l - 1] * B[n, l]
        cross = -A[cn, cj] * B[cn, cj]
        return asm.build(np.concatenate([pair, pair, cross, cross]))

    def g_tilde(self, x: np.ndarray, with_grad: bool = False):
        """Concave surrogate ``sum lam * min(1, r/lam + prefix y-sum)`` per edge."""
        y = x[: self.n_y]
        r = x[self.n_y:]
        ys = np.where(self.hop_mask, y[self.hop_var], 0.0)
        arg = r[:, None] / self.demand[:, None] + np.cumsum(ys, axis=1)
        rr, kk = self._rows, self._cols
        terms = self.demand[rr] * np.minimum(1.0, arg[rr, kk])
        vals = np.bincount(self.hop_edge[rr, kk], weights=terms, minlength=self.n_edges)
        if not with_grad:
            return vals
        # supergradient: zero on the flat branch and at the kink
        active = np.where(self.hop_mask, arg < 1.0, False)
        rows, cols, data = [], [], []
        ar, ak = np.nonzero(active)
        rows.append(self.hop_edge[ar, ak])
        cols.append(self.n_y + ar)
        data.append(np.ones(ar.size))
        for j in range(self.n_hops):
            sel = ak >= j
            n_sel = ar[sel]
            rows.append(self.hop_edge[n_sel, ak[sel]])
            cols.append(self.hop_var[n_sel, j])
            data.append(self.demand[n_sel])
        G = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n_edges, self.n_vars))
        G.sum_duplicates()
        return vals, G


class _Assembler:
    """CSR builder for a fixed coordinate pattern; duplicates are summed."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        self.shape = shape
        keys = rows.astype(np.int64) * shape[1] + cols
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        self.n_unique = uniq.size
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.indptr = np.searchsorted(uniq // shape[1], np.arange(shape[0] + 1)).astype(np.int32)

    def build(self, vals: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.inverse, weights=vals, minlength=self.n_unique)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape, copy=False)


# ---------------------------------------------------------------------------
# validation


def validate_instance(inst: Instance) -> list[str]:
    """Return the list of violated invariants (empty list means valid)."""
    problems: list[str] = []
    g = inst.graph
    V = g.node_count
    if V <= 0:
        problems.append("graph has no nodes")
    edge_set = set()
    for a, b in g.edges:
        if not (0 <= a < V and 0 <= b < V):
            problems.append(f"edge ({a},{b}) endpoint out of range")
        if a == b:
            problems.append(f"self-loop at node {a}")
        if (a, b) in edge_set:
            problems.append(f"duplicate edge ({a},{b})")
        edge_set.add((a, b))
    for a, b in edge_set:
        if (b, a) not in edge_set:
            problems.append(f"edge ({a},{b}) has no reverse edge")
    if len(inst.servers) != inst.catalog_size:
        problems.append("servers list length differs from catalog size")
    for i, s in enumerate(inst.servers):
        if not s:
            problems.append(f"item {i} has no designated server")
        for v in s:
            if not 0 <= v < V:
                problems.append(f"item {i} server {v} out of range")
    for n, q in enumerate(inst.requests):
        p = q.path
        if not 0 <= q.item < inst.catalog_size:
            problems.append(f"request {n}: item {q.item} out of range")
            continue
        if len(p) == 0:
            problems.append(f"request {n}: empty path")
            continue
        if q.demand <= 0:
            problems.append(f"request {n}: demand not positive")
        if any(not 0 <= v < V for v in p):
            problems.append(f"request {n}: path node out of range")
            continue
        if len(set(p)) != len(p):
            problems.append(f"request {n}: path not simple")
        for a, b in zip(p[:-1], p[1:]):
            if (a, b) not in edge_set:
                problems.append(f"request {n}: hop ({a},{b}) is not an edge")
        servers = inst.servers[q.item]
        if p[-1] not in servers:
            problems.append(f"request {n}: last node not designated server")
        if any(v in servers for v in p[:-1]):
            problems.append(f"request {n}: designated server before end of path")
    if inst.link_capacity.shape != (len(g.edges),):
        problems.append("link capacity vector does not match edge count")
    if inst.cache_capacity.shape != (V,):
        problems.append("cache capacity vector does not match node count")
    else:
        eff = inst.effective_cache_capacity
        for v in np.nonzero(eff < 0)[0]:
            problems.append(f"node {v}: effective cache capacity negative")
    if not problems:
        lay = inst.layout
        for e in np.nonzero(lay.traffic & (inst.link_capacity <= 0))[0]:
            problems.append(f"edge {g.edges[e]} carries responses but capacity is not positive")
    return problems


# ---------------------------------------------------------------------------
# evaluation on strategies


def _check_shapes(inst: Instance, s: Strategy) -> None:
    if s.y.shape != (inst.node_count, inst.catalog_size):
        raise ValueError(f"y has shape {s.y.shape}, expected {(inst.node_count, inst.catalog_size)}")
    if s.r.shape != (len(inst.requests),):
        raise ValueError(f"r has length {s.r.shape}, expected {len(inst.requests)}")


def link_loads(inst: Instance, s: Strategy) -> np.ndarray:
    """Expected response rate on every directed edge."""
    _check_shapes(inst, s)
    lay = inst.layout
    return lay.loads(lay.pack(s))


def constraint_values(inst: Instance, s: Strategy) -> ConstraintEval:
    _check_shapes(inst, s)
    lay = inst.layout
    rho = lay.loads(lay.pack(s))
    g = lay.load_max - rho
    free = np.where(inst.pinned, 0.0, s.y)
    usage = free.sum(axis=1)
    return ConstraintEval(
        g_link=g,
        threshold=lay.threshold.copy(),
        link_slack=inst.link_capacity - rho,
        cache_usage=usage,
        cache_slack=inst.effective_cache_capacity - usage,
    )


def constraint_gradients(inst: Instance, s: Strategy, edge) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``g`` on one edge as ``(dg/dy [node,item], dg/dr)``.

    ``edge`` is an edge index or an ``(u, v)`` pair.  Pinned entries get zero.
    """
    _check_shapes(inst, s)
    e = inst.graph.edge_index[tuple(edge)] if isinstance(edge, tuple) else int(edge)
    lay = inst.layout
    if not lay.traffic[e]:
        raise ValueError(f"edge {inst.graph.edges[e]} carries no response path")
    row = lay.link_jacobian(lay.pack(s)).getrow(e).toarray().ravel()
    dy = np.zeros_like(s.y)
    dy[lay.var_node, lay.var_item] = row[: lay.n_y]
    return dy, row[lay.n_y:]


def g_tilde_values(inst: Instance, s: Strategy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concave surrogate per edge and one supergradient selection per edge.

    Returns ``(values, dy, dr)`` with ``dy`` of shape ``[edge, node, item]``
    and ``dr`` of shape ``[edge, request]``.
    """
    _check_shapes(inst, s)
    lay = inst.layout
    vals, G = lay.g_tilde(lay.pack(s), with_grad=True)
    G = G.toarray()
    dy = np.zeros((lay.n_edges,) + s.y.shape)
    dy[:, lay.var_node, lay.var_item] = G[:, : lay.n_y]
    return vals, dy, G[:, lay.n_y:]


def feasibility_report(inst: Instance, s: Strategy, tol: float = 1e-9) -> FeasibilityReport:
    """Slack of every link and cache constraint plus box violations.

    Only edges that carry at least one response count as link constraints.
    """
    ev = constraint_values(inst, s)
    lay = inst.layout
    link_slack = np.where(lay.traffic, ev.link_slack, np.inf)
    free = ~inst.pinned
    box = max(
        float(np.max(np.maximum(-s.y[free], 0.0), initial=0.0)),
        float(np.max(np.maximum(s.y[free] - 1.0, 0.0), initial=0.0)),
        float(np.max(np.maximum(-s.r, 0.0), initial=0.0)),
        float(np.max(np.maximum(s.r - inst.demands, 0.0), initial=0.0)),
    )
    slacks = np.concatenate([link_slack[lay.traffic], ev.cache_slack])
    worst = float(-slacks.min()) if slacks.size else 0.0
    max_violation = max(worst, box, 0.0)
    ratio = float(np.mean(slacks >= -tol)) if slacks.size else 1.0
    return FeasibilityReport(
        feasible=max_violation <= tol,
        max_violation=max_violation,
        satisfied_ratio=ratio,
        link_slack=link_slack,
        cache_slack=ev.cache_slack,
        box_violation=box,
        violated_edges=[int(e) for e in np.nonzero(link_slack < -tol)[0]],
        violated_nodes=[int(v) for v in np.nonzero(ev.cache_slack < -tol)[0]],
    )


def lattice_check_sample(inst: Instance, s1: Strategy, s2: Strategy) -> np.ndarray:
    """``g(s1) + g(s2) - g(s1 v s2) - g(s1 ^ s2)`` per edge."""
    join = Strategy(np.maximum(s1.y, s2.y), np.maximum(s1.r, s2.r))
    meet = Strategy(np.minimum(s1.y, s2.y), np.minimum(s1.r, s2.r))
    g = lambda s: constraint_values(inst, s).g_link  # noqa: E731
    return g(s1) + g(s2) - g(join) - g(meet)


# ---------------------------------------------------------------------------
# JSON


def _edge_key(e: Sequence[int]) -> str:
    return f"{e[0]}-{e[1]}"


def instance_to_dict(inst: Instance) -> dict:
    return {
        "nodes": inst.node_count,
        "edges": [list(e) for e in inst.graph.edges],
        "catalog": inst.catalog_size,
        "servers": {str(i): sorted(s) for i, s in enumerate(inst.servers)},
        "requests": [{"item": q.item, "path": list(q.path), "demand": q.demand} for q in inst.requests],
        "link_capacity": {_edge_key(e): float(c) for e, c in zip(inst.graph.edges, inst.link_capacity)},
        "cache_capacity": [int(c) for c in inst.cache_capacity],
    }


def instance_from_dict(d: dict) -> Instance:
    graph = Graph(int(d["nodes"]), tuple(tuple(e) for e in d["edges"]))
    servers = [frozenset() for _ in range(int(d["catalog"]))]
    for key, nodes in d["servers"].items():
        servers[int(key)] = frozenset(int(v) for v in nodes)
    reqs = tuple(Request(int(q["item"]), tuple(q["path"]), float(q.get("demand", 1.0))) for q in d["requests"])
    caps = d["link_capacity"]
    link = np.array([float(caps.get(_edge_key(e), 0.0)) for e in graph.edges])
    return Instance(graph, int(d["catalog"]), tuple(servers), reqs, link, np.array(d["cache_capacity"], dtype=int))


def strategy_to_dict(s: Strategy) -> dict:
    return {"y": s.y.tolist(), "r": s.r.tolist()}


def strategy_from_dict(d: dict) -> Strategy:
    return Strategy(np.array(d["y"], dtype=float), np.array(d["r"], dtype=float))


def dumps_instance(inst: Instance, **extra) -> str:
    d = instance_to_dict(inst)
    d.update(extra)
    return json.dumps(d, sort_keys=True)


def repair_d1(layout: Layout, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Pull a solver vector back into the feasible set.

    Cache overuse is removed by scaling the node's free entries down, then
    every residual is raised by a common fraction of its headroom
    ``demand - r`` (bisection).  Both moves only increase link slack, and at
    full rejection every link carries nothing.
    """
    x = x.copy()
    ny = layout.n_y
    y = x[:ny]
    usage = layout.cache_usage(x)
    over = usage > layout.cache_room
    if over.any():
        scale = np.ones(layout.n_nodes)
        scale[over] = layout.cache_room[over] / usage[over]
        y *= scale[layout.var_node]
        x[:ny] = y
    cons = layout.traffic
    if np.all(layout.capacity[cons] - layout.loads(x)[cons] >= -tol):
        return x
    r0 = x[ny:].copy()
    head = layout.demand - r0

    def ok(theta):
        x[ny:] = r0 + theta * head
        return np.all(layout.capacity[cons] - layout.loads(x)[cons] >= -tol)

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    ok(hi)
    return x
