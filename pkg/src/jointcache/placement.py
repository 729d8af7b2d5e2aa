"""Space-filling randomized placement with exact per-period capacity.

Item probabilities of one node are laid end to end on a strip of ``c`` unit
rows, wrapping at row ends.  A single uniform ``tau`` then selects, in every
row, the item covering horizontal position ``tau``.  Each item occupies at
most a unit length, so it appears at most once per draw, with probability
equal to its length.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import Instance, Strategy

__all__ = ["Segment", "PlacementPlan", "build_plan", "sample_placement", "coverage",
           "estimate_marginals", "monte_carlo_load", "write_placements_csv"]


@dataclass(frozen=True)
class Segment:
    item: int
    row: int
    start: float
    end: float


@dataclass(frozen=True)
class PlacementPlan:
    capacity: int
    segments: tuple[Segment, ...]
    n_items: int

    def rows(self) -> list[list[Segment]]:
        out: list[list[Segment]] = [[] for _ in range(self.capacity)]
        for seg in self.segments:
            out[seg.row].append(seg)
        return out


def build_plan(y_row, c: int) -> PlacementPlan:
    """Pack ``y_row`` (ascending item order) into ``c`` rows of unit length.

    Raises
    ------
    ValueError
        If an entry leaves ``[0, 1]`` or the total exceeds ``c``.
    """
    y = np.asarray(y_row, dtype=float)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if y.sum() > c + 1e-12:
        raise ValueError(f"total mass {y.sum():.6g} exceeds capacity {c}")
    segs: list[Segment] = []
    row, pos = 0, 0.0
    for i, length in enumerate(y):
        left = float(length)
        while left > 0:
            if row >= c:
                # only reachable through rounding of the tolerance above
                break
            take = min(left, 1.0 - pos)
            segs.append(Segment(i, row, pos, pos + take))
            left -= take
            pos += take
            if pos >= 1.0 - 1e-15:
                row, pos = row + 1, 0.0
    return PlacementPlan(int(c), tuple(segs), y.size)


def sample_placement(plan: PlacementPlan, tau: float) -> set[int]:
    """Items whose segment covers ``tau`` in some row."""
    return {s.item for s in plan.segments if s.start <= tau < s.end}


def coverage(plan: PlacementPlan) -> np.ndarray:
    """Exact measure of ``tau`` values selecting each item."""
    out = np.zeros(plan.n_items)
    for s in plan.segments:
        out[s.item] += s.end - s.start
    return out


def _sample_matrix(plan: PlacementPlan, taus: np.ndarray) -> np.ndarray:
    """Boolean ``[draw, item]`` presence for many ``tau`` at once."""
    hit = np.zeros((taus.size, plan.n_items), dtype=bool)
    for s in plan.segments:
        hit[:, s.item] |= (taus >= s.start) & (taus < s.end)
    return hit


def estimate_marginals(plan: PlacementPlan, sample_count: int, rng_seed=None) -> np.ndarray:
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    rng = np.random.default_rng(rng_seed)
    return _sample_matrix(plan, rng.random(sample_count)).mean(axis=0)


def node_plans(inst: Instance, s: Strategy) -> list[PlacementPlan]:
    """Plans over the free entries of every node (capacity ``c'``)."""
    free = np.where(inst.pinned, 0.0, np.clip(s.y, 0.0, 1.0))
    room = inst.effective_cache_capacity
    return [build_plan(free[v], int(room[v])) for v in range(inst.node_count)]


def monte_carlo_load(inst: Instance, s: Strategy, periods: int, requests_per_period: int = 1,
                     rng_seed=None) -> np.ndarray:
    """Empirical mean response traffic per edge.

    Every period draws one placement per node; each request is then issued
    ``requests_per_period`` times, each admitted with probability
    ``(demand - r) / demand``.  Admitted requests travel until the first
    node holding the item and the response retraces the path.  Loads are
    normalized to requests per unit demand, so the mean estimates the
    analytic per-edge rate.
    """
    rng = np.random.default_rng(rng_seed)
    plans = node_plans(inst, s)
    taus = rng.random((periods, inst.node_count))
    load = np.zeros(len(inst.graph.edges))
    held = {}
    for v, plan in enumerate(plans):
        held[v] = _sample_matrix(plan, taus[:, v]) if plan.segments else None
    pinned = inst.pinned
    for n, q in enumerate(inst.requests):
        admit_p = (q.demand - s.r[n]) / q.demand
        admitted = rng.random((periods, requests_per_period)) < admit_p
        weight = q.demand * admitted.sum(axis=1) / requests_per_period
        alive = np.ones(periods, dtype=bool)
        for a, b in zip(q.path[:-1], q.path[1:]):
            if pinned[a, q.item]:
                break
            h = held[a]
            if h is not None:
                alive &= ~h[:, q.item]
            e = inst.graph.edge_index[(b, a)]
            load[e] += float(weight[alive].sum())
    return load / periods


def write_placements_csv(inst: Instance, s: Strategy, periods: int, path, rng_seed=None) -> None:
    """Dump sampled cache contents, one row per ``(period, node)``."""
    rng = np.random.default_rng(rng_seed)
    plans = node_plans(inst, s)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "node", "items"])
        for t in range(periods):
            taus = rng.random(inst.node_count)
            for v, plan in enumerate(plans):
                items = sorted(sample_placement(plan, taus[v]))
                w.writerow([t, v] + items)
