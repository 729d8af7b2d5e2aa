"""
From cache marginals to concrete placements
===========================================

The solvers return fractional cache marginals.  The space-filling rounding
turns them into random integral placements that fill each cache exactly
and keep every item's probability.  Monte-Carlo link loads then match the
expected loads.
"""

import numpy as np

from jointcache.harness import build, preset
from jointcache.lbsb import solve_lbsb
from jointcache.model import link_loads
from jointcache.placement import build_plan, estimate_marginals, monte_carlo_load, node_plans
from jointcache.utility import UtilityProfile

# %%
# One cache with three slots.  Each row of the plan is a unit strip; items
# are laid end to end and a single uniform offset picks one item per row.
y = np.array([0.7, 0.5, 0.9, 0.2, 0.4, 0.3])
plan = build_plan(y, 3)
for k, row in enumerate(plan.rows()):
    print(f"row {k}: " + ", ".join(f"item {s.item} [{s.start:.2f}, {s.end:.2f})" for s in row))
print("empirical marginals:", np.round(estimate_marginals(plan, 100_000, rng_seed=0), 3))

# %%
# On a solved instance, simulate periods of random placements.
inst = build(preset("cycle", kappa=0.85, seed=1))
res = solve_lbsb(inst, UtilityProfile.uniform(inst.demands))
plans = node_plans(inst, res.strategy)
exact = link_loads(inst, res.strategy)
mc = monte_carlo_load(inst, res.strategy, 20_000, rng_seed=1)
busy = exact > 0.05 * exact.max()
print(f"{sum(p.capacity > 0 for p in plans)} caches with candidate items, "
      f"largest relative load error {np.max(np.abs(mc[busy] - exact[busy]) / exact[busy]):.2%}")
