"""Graph generators for the benchmark topologies."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import networkx as nx
import numpy as np

from ..model import Graph

__all__ = ["generate_topology", "load_edge_list", "BACKBONES", "TOPOLOGY_KINDS"]

BACKBONES = ("abilene", "geant", "dtelekom")
TOPOLOGY_KINDS = ("cycle", "lollipop", "balanced_tree", "grid_2d", "hypercube",
                  "small_world", "erdos_renyi", "file") + BACKBONES


def _from_nx(g: nx.Graph) -> Graph:
    g = nx.convert_node_labels_to_integers(nx.Graph(g), ordering="sorted")
    return Graph.from_undirected(g.number_of_nodes(), g.edges())


def load_edge_list(path) -> Graph:
    """Read ``a b`` pairs (``#`` comments allowed) as a symmetric graph."""
    pairs = []
    text = Path(path).read_text() if not hasattr(path, "read_text") else path.read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: expected two node ids")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: node ids must be integers") from exc
    if not pairs:
        raise ValueError(f"{path}: no edges")
    n = 1 + max(max(a, b) for a, b in pairs)
    return Graph.from_undirected(n, pairs)


def _small_world(side: int, rng: np.random.Generator, exponent: float = 2.0) -> nx.Graph:
    """Square grid plus one long-range link per node.

    The far end is drawn with probability proportional to
    ``manhattan_distance ** -exponent``.
    """
    g = nx.grid_2d_graph(side, side)
    nodes = sorted(g.nodes())
    coords = np.array(nodes)
    for k, u in enumerate(nodes):
        d = np.abs(coords - coords[k]).sum(axis=1).astype(float)
        w = np.zeros_like(d)
        w[d > 0] = d[d > 0] ** -exponent
        v = nodes[int(rng.choice(len(nodes), p=w / w.sum()))]
        g.add_edge(u, v)
    return g


def generate_topology(kind: str, params: dict | None = None, seed: int = 0) -> Graph:
    """Build one of the benchmark graphs as a symmetric directed graph.

    Parameters
    ----------
    kind : str
        ``cycle(n)``, ``lollipop(m, n)``, ``balanced_tree(branching, depth)``,
        ``grid_2d(rows, cols)``, ``hypercube(dim)``, ``small_world(side,
        exponent)``, ``erdos_renyi(n, p)``, ``file(path)`` or a shipped
        backbone name.
    params : dict, optional
        Overrides for the defaults, which give the benchmark sizes.
    seed : int
        Used by the random kinds only.
    """
    p = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "cycle":
        return _from_nx(nx.cycle_graph(p.get("n", 30)))
    if kind == "lollipop":
        return _from_nx(nx.lollipop_graph(p.get("m", 15), p.get("n", 15)))
    if kind == "balanced_tree":
        return _from_nx(nx.balanced_tree(p.get("branching", 2), p.get("depth", 5)))
    if kind == "grid_2d":
        return _from_nx(nx.grid_2d_graph(p.get("rows", 8), p.get("cols", 8)))
    if kind == "hypercube":
        return _from_nx(nx.hypercube_graph(p.get("dim", 6)))
    if kind == "small_world":
        return _from_nx(_small_world(p.get("side", 8), rng, p.get("exponent", 2.0)))
    if kind == "erdos_renyi":
        n, prob = p.get("n", 64), p.get("p", 0.1)
        for _ in range(p.get("max_retries", 1000)):
            g = nx.gnp_random_graph(n, prob, seed=int(rng.integers(2**31)))
            if nx.is_connected(g):
                return _from_nx(g)
        raise RuntimeError("no connected Erdos-Renyi draw within the retry budget")
    if kind == "file":
        return load_edge_list(p["path"])
    if kind in BACKBONES:
        return load_edge_list(resources.files("jointcache") / "data" / f"{kind}.txt")
    raise ValueError(f"unknown topology kind {kind!r}")
