"""Random request workloads and capacity assignment."""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..model import Graph, Instance, Request

__all__ = ["GenConfig", "BENCHMARKS", "zipf_weights", "zipf_draw", "shortest_path",
           "generate_instance", "rescale_kappa", "preset"]


@dataclass(frozen=True)
class GenConfig:
    topology: str = "cycle"
    params: dict = field(default_factory=dict)
    catalog: int = 10
    requests: int = 100
    query_nodes: int = 10
    cache: int = 2
    kappa: float = 1.0
    zipf: float = 1.2
    demand: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if self.zipf <= 0:
            raise ValueError("Zipf exponent must be positive")
        if self.catalog < 1 or self.requests < 1 or self.query_nodes < 1:
            raise ValueError("catalog, requests and query_nodes must be positive")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


# Benchmark parameter rows: topology, catalog, requests, query nodes, free slots.
BENCHMARKS: dict[str, dict] = {
    "cycle": dict(topology="cycle", catalog=10, requests=100, query_nodes=10, cache=2),
    "lollipop": dict(topology="lollipop", catalog=10, requests=100, query_nodes=10, cache=2),
    "geant": dict(topology="geant", catalog=10, requests=100, query_nodes=10, cache=2),
    "abilene": dict(topology="abilene", catalog=10, requests=40, query_nodes=4, cache=2),
    "dtelekom": dict(topology="dtelekom", catalog=15, requests=125, query_nodes=15, cache=3),
    "balanced_tree": dict(topology="balanced_tree", catalog=30, requests=450, query_nodes=15, cache=3),
    "grid_2d": dict(topology="grid_2d", catalog=30, requests=450, query_nodes=15, cache=3),
    # 30 distinct items per query node need a catalog of at least 30
    "hypercube": dict(topology="hypercube", catalog=30, requests=450, query_nodes=15, cache=3),
    "small_world": dict(topology="small_world", catalog=30, requests=450, query_nodes=15, cache=3),
    "erdos_renyi": dict(topology="erdos_renyi", catalog=30, requests=450, query_nodes=15, cache=3),
}


def preset(name: str, **overrides) -> GenConfig:
    return GenConfig(**{**BENCHMARKS[name], **overrides})


def zipf_weights(n: int, s: float) -> np.ndarray:
    """Unnormalized popularity ``k ** -s`` for ranks ``k = 1..n``."""
    return np.arange(1, n + 1, dtype=float) ** -s


def zipf_draw(rng: np.random.Generator, n: int, count: int, s: float) -> list[int]:
    """``count`` distinct items by successive popularity-weighted draws."""
    if count > n:
        raise ValueError(f"cannot draw {count} distinct items from {n}")
    w = zipf_weights(n, s)
    out = []
    for _ in range(count):
        k = int(rng.choice(n, p=w / w.sum()))
        out.append(k)
        w[k] = 0.0
    return out


def shortest_path(graph: Graph, source: int, target: int) -> tuple[int, ...]:
    """Lexicographically smallest shortest path from ``source`` to ``target``."""
    adj = graph.adjacency
    # distances to the target over reversed edges (graph is symmetric)
    dist = np.full(graph.node_count, -1)
    dist[target] = 0
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    if dist[source] < 0:
        raise ValueError(f"node {target} is unreachable from {source}")
    path = [source]
    while path[-1] != target:
        u = path[-1]
        path.append(min(v for v in adj[u] if dist[v] == dist[u] - 1))
    return tuple(path)


def _cover_catalog(items_by_query: list[list[int]], catalog: int) -> None:
    """Reassign surplus requests so every item is requested at least once."""
    counts = np.bincount([i for row in items_by_query for i in row], minlength=catalog)
    for missing in np.nonzero(counts == 0)[0]:
        # latest-drawn (least popular) requests of over-requested items first
        done = False
        for row in reversed(items_by_query):
            if missing in row:
                continue
            for k in range(len(row) - 1, -1, -1):
                if counts[row[k]] > 1:
                    counts[row[k]] -= 1
                    row[k] = int(missing)
                    counts[missing] += 1
                    done = True
                    break
            if done:
                break


def _capacities(graph: Graph, requests, kappa: float) -> np.ndarray:
    load = np.zeros(len(graph.edges))
    idx = graph.edge_index
    for q in requests:
        for a, b in zip(q.path[:-1], q.path[1:]):
            load[idx[(b, a)]] += q.demand
    return kappa * load


def generate_instance(graph: Graph, cfg: GenConfig) -> Instance:
    """Draw servers, query nodes and Zipf requests, then set capacities.

    Randomness is consumed in a fixed order (servers, query nodes, item
    draws) from ``numpy.random.default_rng(cfg.seed)``, so the same seed
    gives the same instance for every ``kappa``.
    """
    V = graph.node_count
    if cfg.query_nodes > V:
        raise ValueError("more query nodes than graph nodes")
    base, extra = divmod(cfg.requests, cfg.query_nodes)
    if base + (extra > 0) > cfg.catalog:
        raise ValueError(f"{cfg.requests} requests over {cfg.query_nodes} query nodes need more than "
                         f"{cfg.catalog} distinct items per node")
    rng = np.random.default_rng(cfg.seed)
    server_of = rng.integers(0, V, size=cfg.catalog)
    queries = np.sort(rng.choice(V, size=cfg.query_nodes, replace=False))
    items_by_query = [zipf_draw(rng, cfg.catalog, base + (k < extra), cfg.zipf)
                      for k in range(cfg.query_nodes)]
    _cover_catalog(items_by_query, cfg.catalog)
    requests = []
    for v, items in zip(queries, items_by_query):
        for i in items:
            requests.append(Request(int(i), shortest_path(graph, int(v), int(server_of[i])), cfg.demand))
    servers = tuple(frozenset({int(server_of[i])}) for i in range(cfg.catalog))
    cache = np.full(V, cfg.cache, dtype=int) + np.bincount(server_of, minlength=V)
    return Instance(graph, cfg.catalog, servers, tuple(requests), _capacities(graph, requests, cfg.kappa), cache)


def rescale_kappa(inst: Instance, kappa: float) -> Instance:
    """Same requests, capacities reset to ``kappa`` times the full load."""
    return inst.with_link_capacity(_capacities(inst.graph, inst.requests, kappa))


def build(cfg: GenConfig) -> Instance:
    from .topology import generate_topology

    return generate_instance(generate_topology(cfg.topology, cfg.params, cfg.seed), cfg)


def with_kappa(cfg: GenConfig, kappa: float) -> GenConfig:
    return replace(cfg, kappa=kappa)
