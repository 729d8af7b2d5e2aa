"""Acceptance checks, one test per criterion.

Every test records a PASS/FAIL line that is printed in the terminal summary.
Run directly with ``python tests/test_acceptance.py``.  The feasibility sweep
solves 400 generated instances with all four algorithms and takes several
minutes.
"""

from __future__ import annotations

import math
import sys
import time

import numpy as np
import pytest

from instances import competing_instance, micro_instance, path_instance, shared_link_instance, small_config, \
    two_link_instance
from jointcache.boxsolve import Box, SmoothOracle, trust_region_maximize
from jointcache.convexrelax import CRConfig, solve_cr, tightened_capacities
from jointcache.harness import BENCHMARKS, build, preset, run_comparison, scaling_sweep
from jointcache.lbsb import ConstraintSystem, LBSBState, barrier_eval, compute_shifts, solve_lbsb, \
    suboptimality_certificate
from jointcache.model import Strategy, constraint_gradients, link_loads
from jointcache.placement import build_plan, coverage, estimate_marginals, monte_carlo_load, sample_placement
from jointcache.utility import UtilityProfile, objective_F
from oracles import direct_g_tilde, direct_loads, grid_error, grid_optimum, pgd_quadratic

ALGOS = ("lbsb", "cr", "greedy1", "greedy2")
SEEDS = range(20)
KAPPAS = (0.95, 0.85)
MICRO = {"micro-0.4": micro_instance(0.4), "micro-0.6": micro_instance(0.6), "micro-0.8": micro_instance(0.8),
         "competing-0.5": competing_instance(0.5), "competing-0.9": competing_instance(0.9),
         "path-0.5": path_instance(capacity=0.5), "path-0.7": path_instance(capacity=0.7),
         "shared-0.5": shared_link_instance(0.5)}
PROPERTY_INSTANCES = {"micro": micro_instance(0.6), "two-link": two_link_instance(),
                      "cycle-8/s0": build(small_config(seed=0)), "tree/s1": build(small_config(
                          seed=1, topology="balanced_tree", params={"branching": 2, "depth": 3}))}


def log_util(lam):
    return np.log(lam + 0.1)


def log_d1(lam):
    return 1.0 / (lam + 0.1)


def uniform_x(lay, rng):
    lo, hi = lay.bounds()
    return lo + (hi - lo) * rng.random(lo.size)


_SWEEP: dict = {}


def sweep():
    """All four algorithms on 20 seeds of every benchmark at both loads (cached)."""
    if not _SWEEP:
        for name in BENCHMARKS:
            for kappa in KAPPAS:
                for seed in SEEDS:
                    inst = build(preset(name, kappa=kappa, seed=seed))
                    _SWEEP[name, kappa, seed] = run_comparison(
                        inst, UtilityProfile.uniform(inst.demands), ALGOS).results
    return _SWEEP


# -- solver outcomes -------------------------------------------------------------

@pytest.mark.parametrize("name, target", [("cycle", 9.531), ("abilene", 3.812), ("dtelekom", 11.914)])
def test_c1_loose_regime_values(name, target, criterion):
    inst = build(preset(name, kappa=0.95, seed=0))
    t0 = time.perf_counter()
    res = solve_lbsb(inst, UtilityProfile.uniform(inst.demands))
    secs = time.perf_counter() - t0
    rel = abs(res.objective - target) / target
    ok = rel <= 0.01 and secs <= 60 and res.feasible
    assert criterion(f"C1 loose regime {name}", ok,
                     f"F={res.objective:.4f} target={target} rel={rel:.2e} time={secs:.1f}s")


@pytest.mark.parametrize("name", list(BENCHMARKS))
def test_c2_full_capacity_exact(name, criterion):
    inst = build(preset(name, kappa=1.0, seed=0))
    prof = UtilityProfile.uniform(inst.demands)
    best = float(np.sum(log_util(inst.demands)))
    res = run_comparison(inst, prof, ALGOS).results
    gaps = {k: abs(r.objective - best) / abs(best) for k, r in res.items()}
    ok = max(gaps.values()) <= 0.005
    detail = " ".join(f"{k}={v:.1e}" for k, v in gaps.items())
    assert criterion(f"C2 kappa=1 {name}", ok, f"sum U={best:.4f} rel gaps {detail}")


def test_c3_all_algorithms_feasible(criterion):
    runs = sweep()
    worst = {a: max(r[a].max_violation for r in runs.values()) for a in ALGOS}
    bad = [(k, a) for k, r in runs.items() for a in ALGOS if r[a].max_violation > 1e-6]
    ok = not bad
    detail = f"{len(runs)} instances; worst " + " ".join(f"{a}={v:.1e}" for a, v in worst.items())
    assert criterion("C3 feasibility", ok, detail + (f"; failures {bad[:5]}" if bad else ""))


def test_c4_lbsb_kkt_termination(criterion):
    runs = sweep()
    stat = {k: r["lbsb"].stationarity for k, r in runs.items()}
    comp = {k: r["lbsb"].complementarity for k, r in runs.items()}
    bad = [k for k in runs if not (stat[k] <= 1e-4 and comp[k] <= 1e-4)]
    detail = f"max stationarity={max(stat.values()):.1e} max complementarity={max(comp.values()):.1e}"
    assert criterion("C4 KKT termination", not bad, detail + (f"; failures {bad[:5]}" if bad else ""))


@pytest.mark.parametrize("name", list(MICRO))
def test_c5_certificates(name, criterion):
    inst = MICRO[name]
    prof = UtilityProfile.uniform(inst.demands)
    res = solve_lbsb(inst, prof)
    cert = suboptimality_certificate(inst, prof, res)
    best, _, lam = grid_optimum(inst, log_util)
    eps = grid_error(lam, log_d1, inst.demands)
    ok = res.objective >= best - cert.multiplier_bound - eps and cert.path_bound >= cert.multiplier_bound
    assert criterion(f"C5 certificates {name}", ok,
                     f"F={res.objective:.4f} grid={best:.4f} multiplier={cert.multiplier_bound:.4f} "
                     f"path={cert.path_bound:.4f} eps={eps:.4f}")


@pytest.mark.parametrize("name", list(MICRO))
def test_c6_relaxation_bracket(name, criterion):
    inst = MICRO[name]
    prof = UtilityProfile.uniform(inst.demands)
    cp, neg = tightened_capacities(inst)
    hi, _, lam_hi = grid_optimum(inst, log_util)
    hi += grid_error(lam_hi, log_d1, inst.demands)
    if neg.any():
        # the tightened problem has no feasible point, so only the upper end applies
        lo = -math.inf
    else:
        lo, _, lam_lo = grid_optimum(inst, log_util, capacity=cp)
        lo -= grid_error(lam_lo, log_d1, inst.demands)
    vals = {"lp": solve_cr(inst, prof, CRConfig(method="lp")).objective,
            "subgradient-20000": solve_cr(inst, prof, CRConfig(iterations=20000)).objective}
    ok = all(lo <= v <= hi for v in vals.values())
    detail = f"[{lo:.4f}, {hi:.4f}] " + " ".join(f"{k}={v:.4f}" for k, v in vals.items())
    short = solve_cr(inst, prof).objective
    criterion(f"C6 default 500-iteration CR {name}", None,
              f"F={short:.4f} ({'inside' if lo <= short <= hi else 'outside'} the bracket)")
    assert criterion(f"C6 bracket {name}", ok, detail)


def test_c7_scaling_trend(criterion):
    inst = two_link_instance()
    rows = scaling_sweep(inst, UtilityProfile.uniform, [1, 2, 4, 8])
    ratios = [row["ratio"] for row in rows]
    ok = ratios[-1] > ratios[0] and max(ratios) <= 1 + 1e-6 and all(row["feasible"] for row in rows)
    assert criterion("C7 scaling trend", ok, "ratios " + " ".join(f"m={r['m']}:{r['ratio']:.4f}" for r in rows))


# -- model properties ------------------------------------------------------------

@pytest.mark.parametrize("name", list(PROPERTY_INSTANCES))
def test_c8_dr_submodularity(name, criterion):
    inst = PROPERTY_INSTANCES[name]
    lay = inst.layout
    rng = np.random.default_rng(8)
    g = lay.g_link
    worst_mono, worst_lattice, worst_cross = math.inf, math.inf, -math.inf
    h = 1e-3
    for _ in range(1000):
        a, b = uniform_x(lay, rng), uniform_x(lay, rng)
        ga, gb, gj, gm = g(a), g(b), g(np.maximum(a, b)), g(np.minimum(a, b))
        worst_mono = min(worst_mono, float(np.min(gj - np.maximum(ga, gb))), float(np.min(ga - gm)))
        worst_lattice = min(worst_lattice, float(np.min(ga + gb - gj - gm)))
        # g is multilinear, so the mixed second difference is exact for any step
        x = np.clip(a, lay.bounds()[0] + h, lay.bounds()[1] - h)
        for _ in range(10):
            i, j = rng.choice(lay.n_vars, 2, replace=False)
            ei, ej = h * np.eye(lay.n_vars)[i], h * np.eye(lay.n_vars)[j]
            cross = (g(x + ei + ej) - g(x + ei - ej) - g(x - ei + ej) + g(x - ei - ej)) / (4 * h * h)
            worst_cross = max(worst_cross, float(np.max(cross)))
    ok = worst_mono >= -1e-12 and worst_lattice >= -1e-9 and worst_cross <= 1e-7
    assert criterion(f"C8 DR-submodularity {name}", ok,
                     f"min monotone gap={worst_mono:.1e} min lattice defect={worst_lattice:.1e} "
                     f"max cross partial={worst_cross:.1e}")


@pytest.mark.parametrize("name", list(PROPERTY_INSTANCES))
def test_c9_sandwich(name, criterion):
    inst = PROPERTY_INSTANCES[name]
    rng = np.random.default_rng(9)
    ybar = inst.pinned.astype(float)
    full = direct_loads(inst, np.zeros_like(ybar), np.zeros(len(inst.requests)))
    lo_gap, hi_gap = math.inf, math.inf
    used = full > 0
    for _ in range(1000):
        y = np.where(inst.pinned, 1.0, rng.random(ybar.shape))
        r = rng.random(len(inst.requests)) * inst.demands
        g = full - direct_loads(inst, y, r)
        gt = direct_g_tilde(inst, y, r)
        lo_gap = min(lo_gap, float(np.min((g - (1 - 1 / math.e) * gt)[used])))
        hi_gap = min(hi_gap, float(np.min((gt - g)[used])))
    ok = lo_gap >= -1e-12 and hi_gap >= -1e-12
    assert criterion(f"C9 sandwich {name}", ok,
                     f"{int(used.sum())} edges; min g-(1-1/e)g~={lo_gap:.2e} min g~-g={hi_gap:.2e}")


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


@pytest.mark.parametrize("name", ["two-link", "cycle-8/s0"])
def test_c10_gradients(name, criterion):
    inst = PROPERTY_INSTANCES[name]
    prof = UtilityProfile.uniform(inst.demands)
    lay = inst.layout
    rng = np.random.default_rng(10)
    system = ConstraintSystem(inst, prof)
    st = LBSBState(None, rng.uniform(0.5, 2.0, system.m), 0.5, 1.0, 1.0)
    shifts = compute_shifts(st)
    lo, hi = lay.bounds()
    full = direct_loads(inst, np.zeros_like(inst.pinned, float), np.zeros(len(inst.requests)))
    edges = np.nonzero(full > 0)[0]
    h = 1e-6
    err = {"F": 0.0, "g": 0.0, "psi": 0.0}
    points = 0
    while points < 100:
        x = lo + (hi - lo) * rng.uniform(0.05, 0.95, lo.size)
        if not np.all(system.values(x) + shifts > 1e-3):
            continue
        points += 1
        s = lay.unpack(x, inst.pinned)
        # objective over residual rates
        _, gF = objective_F(prof, s.r)
        fd = np.array([(objective_F(prof, s.r + h * e)[0] - objective_F(prof, s.r - h * e)[0]) / (2 * h)
                       for e in np.eye(s.r.size)])
        err["F"] = max(err["F"], rel_err(gF, fd))
        # link functions over every free cache entry and residual rate
        fd_y = {}
        for v, i in zip(lay.var_node, lay.var_item):
            yp, ym = s.y.copy(), s.y.copy()
            yp[v, i] += h
            ym[v, i] -= h
            fd_y[v, i] = (direct_loads(inst, ym, s.r) - direct_loads(inst, yp, s.r)) / (2 * h)
        fd_r = [(direct_loads(inst, s.y, s.r - h * e) - direct_loads(inst, s.y, s.r + h * e)) / (2 * h)
                for e in np.eye(s.r.size)]
        for e in edges:
            dy, dr = constraint_gradients(inst, s, int(e))
            err["g"] = max(err["g"], rel_err(dr, np.array([col[e] for col in fd_r])),
                           rel_err(np.array([dy[k] for k in fd_y]), np.array([col[e] for col in fd_y.values()])))
        # barrier function over the solver variables
        st.x = x
        _, gpsi, _ = barrier_eval(inst, prof, st, s)

        def psi(z):
            return barrier_eval(inst, prof, st, lay.unpack(z, inst.pinned))[0]
        fd = np.array([(psi(x + h * e) - psi(x - h * e)) / (2 * h) for e in np.eye(x.size)])
        err["psi"] = max(err["psi"], rel_err(gpsi, fd))
    ok = max(err.values()) <= 1e-5
    assert criterion(f"C10 gradients {name}", ok,
                     "max relative error " + " ".join(f"{k}={v:.1e}" for k, v in err.items()))


# -- placement and inner solver --------------------------------------------------

def test_c11_placement(criterion):
    rng = np.random.default_rng(11)
    cover_err, cap_bad, sigma_bad = 0.0, 0, 0
    for _ in range(50):
        c = int(rng.integers(1, 5))
        y = np.minimum(rng.dirichlet(np.ones(8)) * c, 1.0)
        plan = build_plan(y, c)
        cover_err = max(cover_err, float(np.max(np.abs(coverage(plan) - y))))
        full = abs(y.sum() - c) < 1e-12
        for tau in rng.random(200):
            k = len(sample_placement(plan, tau))
            cap_bad += k > c or (full and k != c)
    n = 100_000
    y = np.array([0.7, 0.5, 0.9, 0.2, 0.4, 0.3])
    est = estimate_marginals(build_plan(y, 3), n, rng_seed=1)
    sigma_bad = int(np.sum(np.abs(est - y) > 4 * np.sqrt(y * (1 - y) / n)))
    inst = build(small_config(seed=2))
    yy = inst.pinned.astype(float)
    room = inst.effective_cache_capacity
    for v in range(inst.node_count):
        free = np.nonzero(~inst.pinned[v])[0]
        yy[v, free] = rng.dirichlet(np.ones(free.size)) * min(room[v], free.size) * 0.9
    s = Strategy(np.minimum(yy, 1.0), rng.uniform(0, 0.3, len(inst.requests)) * inst.demands)
    exact = link_loads(inst, s)
    mc = monte_carlo_load(inst, s, n, rng_seed=6)
    busy = exact > 0.05 * exact.max()
    mc_err = float(np.max(np.abs(mc[busy] - exact[busy]) / exact[busy]))
    ok = cover_err <= 1e-12 and cap_bad == 0 and sigma_bad == 0 and mc_err <= 0.02
    assert criterion("C11 placement", ok, f"coverage err={cover_err:.1e} capacity breaches={cap_bad} "
                                          f"marginals outside 4 sigma={sigma_bad} load err={mc_err:.2%}")


def test_c12_trust_region(criterion):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 21))
        M = rng.normal(size=(n, n))
        H = -(M @ M.T + 0.1 * np.eye(n))
        c = rng.normal(scale=3.0, size=n)
        lo = rng.uniform(-1, 0, n)
        hi = lo + rng.uniform(0.2, 2.0, n)
        oracle = SmoothOracle(value=lambda x, H=H, c=c: 0.5 * x @ H @ x + c @ x,
                              gradient=lambda x, H=H, c=c: H @ x + c, hvp=lambda x, v, H=H: H @ v)
        res = trust_region_maximize(oracle, Box(lo, hi), lo, 1e-10)
        worst = max(worst, float(np.max(np.abs(res.x - pgd_quadratic(H, c, lo, hi)))))
    assert criterion("C12 trust region", worst <= 1e-6, f"50 problems, max deviation from oracle={worst:.1e}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
