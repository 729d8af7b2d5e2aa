"""Space-filling placement: plan geometry, sampling, marginals and link loads."""

import csv

import numpy as np
import pytest

from instances import path_instance, small_config
from jointcache.harness import build
from jointcache.model import Strategy, link_loads
from jointcache.placement import (Segment, build_plan, coverage, estimate_marginals, monte_carlo_load,
                                  node_plans, sample_placement, write_placements_csv)

Y = (0.8, 0.6, 0.9, 0.7)


def test_plan_layout_example():
    plan = build_plan(Y, 3)
    expected = [Segment(0, 0, 0.0, 0.8), Segment(1, 0, 0.8, 1.0), Segment(1, 1, 0.0, 0.4),
                Segment(2, 1, 0.4, 1.0), Segment(2, 2, 0.0, 0.3), Segment(3, 2, 0.3, 1.0)]
    assert len(plan.segments) == len(expected)
    for got, want in zip(plan.segments, expected):
        assert (got.item, got.row) == (want.item, want.row)
        assert (got.start, got.end) == pytest.approx((want.start, want.end))


def test_plan_trivial_cases():
    assert build_plan(np.zeros(3), 2).segments == ()
    plan = build_plan([1.0], 1)
    assert [(s.row, s.start, s.end) for s in plan.segments] == [(0, 0.0, 1.0)]


def test_plan_errors():
    with pytest.raises(ValueError):
        build_plan([0.9, 0.9, 0.9], 2)
    with pytest.raises(ValueError):
        build_plan([1.2], 2)


# the third row holds item 2 on [0, 0.3) and item 3 on [0.3, 1)
@pytest.mark.parametrize("tau, items", [(0.5, {0, 2, 3}), (0.1, {0, 1, 2}), (0.35, {0, 1, 3})])
def test_sample_examples(tau, items):
    assert sample_placement(build_plan(Y, 3), tau) == items


def test_sample_empty_plan():
    assert sample_placement(build_plan(np.zeros(2), 1), 0.3) == set()


def test_coverage_exact():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = int(rng.integers(1, 5))
        y = rng.dirichlet(np.ones(8)) * c
        y = np.minimum(y, 1.0)
        assert np.allclose(coverage(build_plan(y, c)), y, atol=1e-12, rtol=0)


def test_capacity_respected_on_every_tau():
    plan = build_plan(Y, 3)
    for tau in np.linspace(0, 1, 1001, endpoint=False):
        assert len(sample_placement(plan, tau)) <= 3


def test_marginals_within_four_sigma():
    n = 100_000
    est = estimate_marginals(build_plan(Y, 3), n, rng_seed=1)
    y = np.array(Y)
    assert np.all(np.abs(est - y) <= 4 * np.sqrt(y * (1 - y) / n))
    assert np.all(np.abs(est - y) <= 0.01)


def test_marginals_degenerate():
    est = estimate_marginals(build_plan([1.0, 0.0], 1), 1000, rng_seed=2)
    assert est.tolist() == [1.0, 0.0]
    with pytest.raises(ValueError):
        estimate_marginals(build_plan([0.5], 1), 0)


def half_cached_path():
    inst = path_instance(free_slots=1)
    y = inst.pinned.astype(float)
    y[0, 0] = 0.5
    return inst, y


def test_monte_carlo_half_cached():
    inst, y = half_cached_path()
    s = Strategy(y, np.zeros(1))
    mc = monte_carlo_load(inst, s, 100_000, rng_seed=3)
    e = inst.graph.edge_index[(1, 0)]
    assert link_loads(inst, s)[e] == pytest.approx(0.5)
    assert mc[e] == pytest.approx(0.5, abs=0.01)


def test_monte_carlo_trivial_cases():
    inst, y = half_cached_path()
    y[0, 0] = 1.0
    mc = monte_carlo_load(inst, Strategy(y, np.zeros(1)), 1000, rng_seed=4)
    assert np.all(mc == 0)
    y[0, 0] = 0.0
    s = Strategy(y, np.zeros(1))
    assert np.array_equal(monte_carlo_load(inst, s, 1000, rng_seed=4), link_loads(inst, s))


def test_monte_carlo_matches_analytic_loads():
    inst = build(small_config(seed=2))
    rng = np.random.default_rng(5)
    y = inst.pinned.astype(float)
    room = inst.effective_cache_capacity
    for v in range(inst.node_count):
        free = np.nonzero(~inst.pinned[v])[0]
        y[v, free] = rng.dirichlet(np.ones(free.size)) * min(room[v], free.size) * 0.9
    y = np.minimum(y, 1.0)
    r = rng.uniform(0, 0.3, len(inst.requests)) * inst.demands
    s = Strategy(y, r)
    exact = link_loads(inst, s)
    mc = monte_carlo_load(inst, s, 100_000, rng_seed=6)
    busy = exact > 0.05 * exact.max()
    assert np.all(np.abs(mc[busy] - exact[busy]) <= 0.02 * exact[busy])


def test_placements_csv(tmp_path):
    inst = build(small_config(seed=0))
    y = inst.pinned.astype(float)
    y[~inst.pinned] = 0.2
    s = Strategy(y, np.zeros(len(inst.requests)))
    plans = node_plans(inst, s)
    path = tmp_path / "p.csv"
    write_placements_csv(inst, s, 5, path, rng_seed=0)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["period", "node", "items"]
    assert len(rows) == 1 + 5 * inst.node_count
    for row in rows[1:]:
        assert len(row) - 2 <= plans[int(row[1])].capacity
