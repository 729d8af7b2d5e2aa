"""Two-stage comparison heuristics.

Both alternate between rate control with caches frozen (a concave program
with constraints linear in ``r``) and cache placement with rates frozen
(a monotone DR-submodular load-reduction objective).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .convexrelax import switching_subgradient
from .model import Instance, Layout, Strategy, feasibility_report
from .results import SolverResult
from .utility import UtilityProfile

__all__ = ["RateConfig", "FWConfig", "solve_rate_only", "frank_wolfe_dr", "placement_objective",
           "greedy1", "greedy2"]


@dataclass(frozen=True)
class RateConfig:
    """Rate-only solver settings.

    ``method="dual"`` minimizes the smooth Lagrangian dual with L-BFGS-B
    (the inner maximization is closed form per request);
    ``method="subgradient"`` runs the switching subgradient engine for
    ``iterations`` steps (``warm_iterations`` when warm-started).
    """

    method: str = "dual"
    dual_tol: float = 1e-12
    iterations: int = 1000
    warm_iterations: int = 300
    step_scale: float | None = None
    tol: float = 1e-10

    def __post_init__(self):
        if self.iterations < 1 or self.warm_iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.method not in ("dual", "subgradient"):
            raise ValueError(f"unknown rate method {self.method!r}")


@dataclass(frozen=True)
class FWConfig:
    """``K`` Frank-Wolfe steps of length ``1/K``."""

    iterations: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")


def _rate_constraints(lay: Layout, yv: np.ndarray):
    """``A r >= b`` on constrained links for frozen cache entries ``yv``."""
    x = np.concatenate([yv, np.zeros(lay.n_req)])
    _, P = lay.prefix(x)
    links = np.nonzero(lay.traffic & (lay.threshold > 0))[0]
    ptr, rn, rk = lay.edge_terms
    rows, cols, vals = [], [], []
    for i, e in enumerate(links):
        n, k = rn[ptr[e]:ptr[e + 1]], rk[ptr[e]:ptr[e + 1]]
        rows.append(np.full(n.size, i))
        cols.append(n)
        vals.append(P[n, k])
    if links.size:
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(links.size, lay.n_req))
    else:
        A = sp.csr_matrix((0, lay.n_req))
    # g_e = sum lam (1 - P) + sum r P >= threshold
    b = lay.threshold[links] - (lay.load_max[links] - A @ lay.demand)
    return A, b


def solve_rate_only(inst: Instance, profile: UtilityProfile, y_fixed: np.ndarray,
                    cfg: RateConfig | None = None, start: np.ndarray | None = None) -> np.ndarray:
    """Residual rates maximizing utility with the cache matrix frozen.

    Every link constraint is linear in ``r``.  The default dual method
    prices each constrained link, admits each request at the rate where its
    marginal utility equals the summed price along its path, and finally
    raises residuals by a common fraction to remove any leftover violation.
    With the subgradient method, constraint steps are exact projections onto
    the most violated half-space plus a small push inside.

    Parameters
    ----------
    y_fixed : ndarray, shape (nodes, items)
    start : ndarray, optional
        Warm start for ``r`` (run for ``warm_iterations``); defaults to zero.

    Returns
    -------
    ndarray
        Feasible residual rates.
    """
    cfg = cfg or RateConfig()
    y_fixed = np.asarray(y_fixed, dtype=float)
    if np.any(y_fixed < 0) or np.any(y_fixed > 1):
        raise ValueError("cache entries must lie in [0, 1]")
    lay = inst.layout
    A, b = _rate_constraints(lay, y_fixed[lay.var_node, lay.var_item])
    lam = lay.demand
    if A.shape[0] == 0 or np.all(b <= 0):
        return np.zeros(lay.n_req)
    if cfg.method == "dual":
        return _raise_rates(A, b, lam, _rate_dual(A, b, lam, profile, cfg.dual_tol))
    ptr, idx, val = A.indptr, A.indices, A.data

    def objective(r):
        return float(profile.values(lam - r).sum()), -profile.d1(lam - r)

    def worst(r):
        v = b - A @ r
        j = int(np.argmax(v))
        if v[j] <= 0:
            return float(v[j]), None
        d = np.zeros(lam.size)
        d[idx[ptr[j]:ptr[j + 1]]] = val[ptr[j]:ptr[j + 1]]
        return float(v[j]), d

    a = cfg.step_scale if cfg.step_scale is not None else 0.1 * float(lam.max())
    if start is None:
        r0, budget = np.zeros(lay.n_req), cfg.iterations
    else:
        r0, budget = np.asarray(start, dtype=float), cfg.warm_iterations
    best, last, _ = switching_subgradient(r0, np.zeros_like(lam), lam, objective, worst,
                                          budget, a, cfg.tol)
    cands = [c for c in (best, _raise_rates(A, b, lam, last)) if c is not None]
    return max(cands, key=lambda c: objective(c)[0])


def _rate_dual(A, b, lam, profile: UtilityProfile, tol: float) -> np.ndarray:
    """Residuals at the minimizer of the Lagrangian dual over link prices."""
    AT = A.T.tocsr()

    def dual(mu):
        price = AT @ mu
        adm = profile.rate_at_price(price, lam)
        r = lam - adm
        val = float(profile.values(adm).sum() + price @ r - mu @ b)
        return val, A @ r - b

    res = minimize(dual, np.zeros(A.shape[0]), jac=True, method="L-BFGS-B",
                   bounds=[(0.0, None)] * A.shape[0],
                   options={"ftol": tol, "gtol": tol, "maxiter": 10000, "maxcor": 20})
    return lam - profile.rate_at_price(AT @ res.x, lam)


def _raise_rates(A, b, lam, r):
    """Raise residuals of requests on violated links by a common fraction.

    All entries of ``A`` are nonnegative, so raising residuals never hurts
    another link and a single bisection suffices.
    """
    bad = A @ r - b < 0
    if not bad.any():
        return r
    touched = np.zeros(lam.size, dtype=bool)
    touched[A[bad].indices] = True
    head = np.where(touched, lam - r, 0.0)
    Ab, bb = A[bad], b[bad]

    def ok(t):
        return np.all(Ab @ (r + t * head) - bb >= 0)

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return r + hi * head


def _load_tails(lay: Layout, yv: np.ndarray, r: np.ndarray):
    """Per-hop miss factors, inclusive and exclusive prefix products, admitted rates."""
    x = np.concatenate([yv, r])
    q, P = lay.prefix(x)
    a = lay.admitted(x)
    A = np.ones_like(q)
    A[:, 1:] = P[:, :-1]
    return q, P, a, A


def placement_objective(inst: Instance, y: np.ndarray, r: np.ndarray) -> float:
    """Total load reduction ``sum_e g_e(y, r)`` over all links."""
    lay = inst.layout
    x = np.concatenate([np.asarray(y)[lay.var_node, lay.var_item], r])
    return float(lay.g_link(x)[lay.traffic].sum())


def _placement_gradient(lay: Layout, yv: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Gradient of total load reduction in the free cache entries."""
    q, _, a, A = _load_tails(lay, yv, r)
    H = lay.n_hops
    m = lay.hop_mask
    B = np.zeros_like(q)
    B[:, H - 1] = m[:, H - 1]
    for j in range(H - 2, -1, -1):
        B[:, j] = m[:, j] + q[:, j + 1] * B[:, j + 1]
    w = a[:, None] * A * B
    return np.bincount(lay.hop_var[m], weights=w[m], minlength=lay.n_y)


def frank_wolfe_dr(inst: Instance, r_fixed: np.ndarray, cfg: FWConfig | None = None) -> np.ndarray:
    """Continuous greedy over the cache polytope for fixed residual rates.

    Each step moves by ``1/K`` toward the vertex selecting, at every node,
    the ``c'`` free items with the largest positive gradient (lowest index
    on ties).

    Returns
    -------
    ndarray, shape (nodes, items)
        Cache matrix with pinned entries set to one.
    """
    cfg = cfg or FWConfig()
    lay = inst.layout
    r = np.asarray(r_fixed, dtype=float)
    yv = np.zeros(lay.n_y)
    room = lay.cache_room.astype(int)
    # variables grouped per node in ascending item order (layout order)
    starts = np.searchsorted(lay.var_node, np.arange(lay.n_nodes + 1))
    step = 1.0 / cfg.iterations
    for _ in range(cfg.iterations):
        g = _placement_gradient(lay, yv, r)
        v = np.zeros(lay.n_y)
        for node in range(lay.n_nodes):
            lo, hi = starts[node], starts[node + 1]
            if hi == lo or room[node] == 0:
                continue
            gn = g[lo:hi]
            order = np.argsort(-gn, kind="stable")[: room[node]]
            order = order[gn[order] > 0]
            v[lo + order] = 1.0
        yv = yv + step * v
    y = inst.pinned.astype(float)
    y[lay.var_node, lay.var_item] = np.minimum(yv, 1.0)
    return y


def _result(name: str, inst: Instance, profile: UtilityProfile, s: Strategy, t0: float,
            iterations: int, extras: dict) -> SolverResult:
    lam = inst.demands - s.r
    return SolverResult(
        algorithm=name,
        strategy=s,
        objective=float(profile.values(lam).sum()),
        feasibility=feasibility_report(inst, s, tol=1e-6),
        converged=True,
        iterations=iterations,
        runtime_ms=1e3 * (time.perf_counter() - t0),
        extras=extras,
    )


def greedy1(inst: Instance, profile: UtilityProfile, fw: FWConfig | None = None,
            rate: RateConfig | None = None) -> SolverResult:
    """Rate control without caches, then continuous greedy, then rate control."""
    t0 = time.perf_counter()
    empty = inst.pinned.astype(float)
    r1 = solve_rate_only(inst, profile, empty, rate)
    y = frank_wolfe_dr(inst, r1, fw)
    r2 = solve_rate_only(inst, profile, y, rate)
    s = Strategy(y, r2)
    return _result("greedy1", inst, profile, s, t0, 3, {"placement_objective": placement_objective(inst, y, r1)})


def greedy2(inst: Instance, profile: UtilityProfile, rate: RateConfig | None = None) -> SolverResult:
    """Alternate rate control and single-item placements until caches fill.

    Each placement sets to one the free pair with the largest increase in
    total load reduction (lowest node, then item, on ties).  Once the best
    increase is zero, the rates no longer change and the remaining slots are
    filled in index order without further rate steps.
    """
    t0 = time.perf_counter()
    lay = inst.layout
    V, I = inst.node_count, inst.catalog_size
    y = inst.pinned.astype(float)
    pinned = inst.pinned
    used = np.zeros(V, dtype=int)
    room = inst.effective_cache_capacity.astype(int)
    r = solve_rate_only(inst, profile, y, rate)
    gains = []
    placements = 0
    m = lay.hop_mask
    while True:
        open_pair = (y == 0) & ~pinned & (used < room)[:, None]
        if not open_pair.any():
            break
        yv = y[lay.var_node, lay.var_item]
        _, P, a, _ = _load_tails(lay, yv, r)
        # placing item at hop j removes every downstream term of the request
        tail = np.where(m, a[:, None] * P, 0.0)[:, ::-1].cumsum(axis=1)[:, ::-1]
        gv = np.bincount(lay.hop_var[m], weights=tail[m], minlength=lay.n_y)
        gain = np.zeros((V, I))
        gain[lay.var_node, lay.var_item] = gv
        gain[~open_pair] = -math.inf
        flat = int(np.argmax(gain))
        v, i = divmod(flat, I)
        y[v, i] = 1.0
        used[v] += 1
        placements += 1
        gains.append(float(gain[v, i]))
        if gain[v, i] > 0:
            r = solve_rate_only(inst, profile, y, rate, start=r)
    s = Strategy(y, r)
    return _result("greedy2", inst, profile, s, t0, placements,
                   {"placements": placements, "placement_gains": gains})
