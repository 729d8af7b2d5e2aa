"""
How close is LBSB to optimal?
=============================

Two tools bound the gap.  The suboptimality certificate bounds F* - F(LBSB)
from the terminal multipliers or from path counts.  The relaxation upper
bound gives a number F(LBSB) can be divided by.  As demands and capacities
grow together the ratio climbs toward one.
"""

import numpy as np

from jointcache.harness import build, preset, scaling_sweep
from jointcache.lbsb import solve_lbsb, suboptimality_certificate
from jointcache.model import Graph, Instance, Request
from jointcache.utility import UtilityProfile

# %%
# Certificates on a generated instance.
inst = build(preset("grid_2d", kappa=0.85, seed=0))
prof = UtilityProfile.uniform(inst.demands)
res = solve_lbsb(inst, prof)
cert = suboptimality_certificate(inst, prof, res)
print(f"F={res.objective:.3f}  multiplier bound={cert.multiplier_bound:.3f}  path bound={cert.path_bound:.3f}")

# %%
# A tight two-link path: six requests of demand 2, one free slot at each of
# nodes 0 and 1, and links at 60% of their full load.
g = Graph.from_undirected(3, [(0, 1), (1, 2)])
reqs = tuple(Request(i, (0, 1, 2), 2.0) for i in range(3)) + tuple(Request(i, (1, 2), 2.0) for i in range(3))
cap = np.array([0.6 * 6.0 if e == (1, 0) else 0.6 * 12.0 if e == (2, 1) else 0.0 for e in g.edges])
tight = Instance(g, 3, tuple(frozenset({2}) for _ in range(3)), reqs, cap, np.array([1, 1, 3]))
for row in scaling_sweep(tight, UtilityProfile.uniform, [1, 2, 4, 8]):
    print(f"m={row['m']:g}  LBSB={row['lbsb']:8.4f}  bound={row['upper_bound']:8.4f}  ratio={row['ratio']:.4f}")
