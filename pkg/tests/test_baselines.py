"""Rate-only control, continuous greedy placement and the two greedy heuristics."""

import itertools
import math

import numpy as np
import pytest

from instances import micro_instance, path_instance, shared_link_instance, small_config
from jointcache.baselines import (FWConfig, RateConfig, frank_wolfe_dr, greedy1, greedy2, placement_objective,
                                  solve_rate_only)
from jointcache.harness import build
from jointcache.lbsb import solve_lbsb
from jointcache.model import Graph, Instance, Request, Strategy, feasibility_report
from jointcache.utility import UtilityProfile
from oracles import direct_loads, free_entries, grid


def one_hop(demands, slots, capacity=None):
    """Requests for items 0, 1, ... from node 0, all served one hop away at node 1."""
    g = Graph.from_undirected(2, [(0, 1)])
    k = len(demands)
    reqs = tuple(Request(i, (0, 1), float(d)) for i, d in enumerate(demands))
    total = float(sum(demands))
    cap = np.array([(capacity if capacity is not None else total) if e == (1, 0) else total
                    for e in g.edges])
    return Instance(g, k, tuple(frozenset({1}) for _ in range(k)), reqs, cap, np.array([slots, k]))


def test_rate_only_full_capacity():
    inst = build(small_config(seed=0, kappa=1.0))
    prof = UtilityProfile.uniform(inst.demands)
    assert np.all(solve_rate_only(inst, prof, inst.pinned.astype(float)) == 0)


@pytest.mark.parametrize("method", ["dual", "subgradient"])
def test_rate_only_shared_link(method):
    inst = shared_link_instance(0.5)
    prof = UtilityProfile.uniform(inst.demands)
    cfg = RateConfig(method=method, iterations=20000) if method == "subgradient" else None
    r = solve_rate_only(inst, prof, inst.pinned.astype(float), cfg)
    assert r == pytest.approx([0.75, 0.75], abs=2e-3 if method == "subgradient" else 1e-6)
    assert feasibility_report(inst, Strategy(inst.pinned.astype(float), r), tol=1e-9).feasible


def test_rate_only_full_prefix_cache():
    inst = path_instance(capacity=0.5)
    y = inst.pinned.astype(float)
    y[0, 0] = 1.0
    assert np.all(solve_rate_only(inst, UtilityProfile.uniform(inst.demands), y) == 0)


def test_rate_only_rejects_bad_cache():
    inst = path_instance()
    with pytest.raises(ValueError):
        solve_rate_only(inst, UtilityProfile.uniform(inst.demands), np.full_like(inst.pinned, 2.0, float))


@pytest.mark.parametrize("seed", range(3))
def test_rate_only_dual_matches_subgradient(seed):
    inst = build(small_config(seed=seed, kappa=0.7))
    prof = UtilityProfile.uniform(inst.demands)
    rng = np.random.default_rng(seed)
    y = inst.pinned.astype(float)
    y[inst.layout.var_node, inst.layout.var_item] = rng.uniform(0, 0.3, inst.layout.n_y)
    F = lambda r: float(prof.values(inst.demands - r).sum())
    dual = solve_rate_only(inst, prof, y)
    sub = solve_rate_only(inst, prof, y, RateConfig(method="subgradient", iterations=20000))
    for r in (dual, sub):
        assert np.all(direct_loads(inst, y, r) <= inst.link_capacity + 1e-9)
    assert F(dual) >= F(sub) - 1e-3


def test_frank_wolfe_zero_gradient():
    inst = build(small_config(seed=0))
    y = frank_wolfe_dr(inst, inst.demands)
    assert np.array_equal(y, inst.pinned.astype(float))


def test_frank_wolfe_picks_larger_gradient():
    inst = one_hop([2.0, 1.0], slots=1)
    y = frank_wolfe_dr(inst, np.zeros(2), FWConfig(iterations=7))
    assert y[0] == pytest.approx([1.0, 0.0])


@pytest.mark.parametrize("seed", range(4))
def test_frank_wolfe_in_polytope_and_near_grid_max(seed):
    rng = np.random.default_rng(seed)
    inst = micro_instance(0.6) if seed % 2 else one_hop(rng.uniform(0.5, 2.0, 3), slots=1)
    r = rng.uniform(0, 0.5, inst.layout.n_req) * inst.demands
    y = frank_wolfe_dr(inst, r)
    room = inst.effective_cache_capacity
    free = np.where(inst.pinned, 0.0, y)
    assert np.all(free.sum(axis=1) <= room + 1e-12) and np.all((0 <= y) & (y <= 1))
    ents = free_entries(inst)
    assert len(ents) <= 4
    full = direct_loads(inst, np.zeros_like(y), np.zeros(len(r))).sum()

    def reduction(yy):
        return float(full - direct_loads(inst, yy, r).sum())

    best = -math.inf
    for pt in itertools.product(grid(0.0, 1.0, 0.05), repeat=len(ents)):
        yy = inst.pinned.astype(float)
        for (v, i), val in zip(ents, pt):
            yy[v, i] = val
        if np.all(np.where(inst.pinned, 0.0, yy).sum(axis=1) <= room + 1e-12):
            best = max(best, reduction(yy))
    assert placement_objective(inst, y, r) == pytest.approx(reduction(y))
    assert reduction(y) >= (1 - 1 / math.e) * best - 1e-9


def test_greedy_outputs_feasible_and_full_capacity_optimal():
    for kappa in (1.0, 0.85):
        inst = build(small_config(seed=5, kappa=kappa))
        prof = UtilityProfile.uniform(inst.demands)
        for res in (greedy1(inst, prof), greedy2(inst, prof)):
            assert res.feasible and res.max_violation <= 1e-6
            if kappa == 1.0:
                assert res.objective == pytest.approx(prof.max_value())


def test_greedy1_without_cache_room_is_rate_control():
    inst = shared_link_instance(0.5)
    prof = UtilityProfile.uniform(inst.demands)
    res = greedy1(inst, prof)
    assert res.strategy.r == pytest.approx(solve_rate_only(inst, prof, inst.pinned.astype(float)))


def test_greedy1_rarely_beats_lbsb():
    wins = 0
    for seed in range(20):
        inst = build(small_config(seed=seed, kappa=0.95))
        prof = UtilityProfile.uniform(inst.demands)
        wins += greedy1(inst, prof).objective <= solve_lbsb(inst, prof).objective + 1e-6
    assert wins >= 18


def test_greedy2_places_heavier_item():
    inst = one_hop([1.0, 0.5], slots=1, capacity=0.85 * 1.5)
    res = greedy2(inst, UtilityProfile.uniform(inst.demands))
    assert res.strategy.y[0].tolist() == [1.0, 0.0]
    assert res.extras["placements"] == 1


def test_greedy2_no_room_and_counts():
    inst = shared_link_instance(0.5)
    res = greedy2(inst, UtilityProfile.uniform(inst.demands))
    assert res.extras["placements"] == 0
    inst = build(small_config(seed=1))
    res = greedy2(inst, UtilityProfile.uniform(inst.demands))
    room = inst.effective_cache_capacity
    free_items = (~inst.pinned).sum(axis=1)
    assert res.extras["placements"] == int(np.minimum(room, free_items).sum())
    assert np.all(np.array(res.extras["placement_gains"]) >= -1e-12)
