"""Concave relaxation of the link constraints.

Replacing every load term's miss probability ``prod (1 - y)`` by the concave
surrogate ``min(1, r / lam + sum y)`` and dividing the thresholds by
``1 - 1/e`` gives a convex program whose feasible points satisfy the original
link constraints.  It is solved here by a switching subgradient method, or
exactly by a linear outer approximation of the objective.  The same surrogate with undivided thresholds contains the original feasible set,
which yields the upper bound :func:`upper_bound`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import Instance, Layout, feasibility_report, repair_d1
from .results import SolverResult
from .utility import UtilityProfile

__all__ = [
    "CRConfig",
    "CRResult",
    "BoundConfig",
    "UpperBound",
    "switching_subgradient",
    "solve_cr",
    "tightened_capacities",
    "delta_guarantee",
    "upper_bound",
]

RELAX = 1.0 - 1.0 / math.e


@dataclass(frozen=True)
class CRConfig:
    """Relaxation solver settings.

    ``method`` is ``"subgradient"`` (budgeted switching subgradient) or
    ``"lp"`` (the relaxed optimum through tangent-plane linear programs, see
    :func:`upper_bound`).  ``step_scale`` is ``a`` in the step
    ``a / sqrt(k)``; ``None`` selects ``0.1 * max demand``.
    """

    iterations: int = 500
    step_scale: float | None = None
    tol: float = 1e-9
    track_best: bool = True
    method: str = "subgradient"

    def __post_init__(self):
        if self.method not in ("subgradient", "lp"):
            raise ValueError("method must be 'subgradient' or 'lp'")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.step_scale is not None and self.step_scale <= 0:
            raise ValueError("step_scale must be positive")


@dataclass
class CRResult(SolverResult):
    d2_violation: float = math.nan
    last_objective: float = math.nan


@dataclass(frozen=True)
class BoundConfig:
    """Tangent refinement of :func:`upper_bound`."""

    max_rounds: int = 60
    rtol: float = 1e-8
    initial_tangents: int = 9


@dataclass
class UpperBound:
    value: float
    residual: float
    rounds: int


# ---------------------------------------------------------------------------
# engine


def switching_subgradient(x0: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                          objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
                          worst: Callable[[np.ndarray], tuple[float, np.ndarray | None]],
                          iterations: int, a: float, tol: float,
                          track_best: bool = True):
    """Projected switching subgradient ascent.

    Parameters
    ----------
    objective : callable
        ``x -> (value, gradient)`` of the concave objective.
    worst : callable
        ``x -> (violation, supergradient)`` of the most violated constraint
        written as ``h(x) >= b``; ``violation <= 0`` when feasible.
    iterations, a, tol : int, float, float
        Step ``k`` uses ``a / sqrt(k)``; a point is feasible when the
        violation does not exceed ``tol``.

    Returns
    -------
    best : ndarray or None
        Feasible iterate with the largest objective (``None`` if none seen).
    last : ndarray
    history : list of (best objective, last objective, last violation)

    Notes
    -----
    Constraint steps use the Polyak length ``v / |d|^2``, which lands exactly
    on the constraint when it is locally linear, plus the current step size
    along the normalized direction to move strictly inside.
    """
    x = np.minimum(np.maximum(x0, lower), upper)
    best, best_f = None, -math.inf
    history = []
    for k in range(1, iterations + 1):
        step = a / math.sqrt(k)
        v, d = worst(x)
        f, g = objective(x)
        if v <= tol:
            if f > best_f or not track_best:
                best, best_f = x.copy(), f
            gn = np.linalg.norm(g)
            if gn == 0:
                history.append((best_f, f, v))
                break
            x = x + (step / gn) * g
        else:
            dn2 = float(d @ d)
            if dn2 == 0:
                history.append((best_f, f, v))
                break
            x = x + (v / dn2 + step / math.sqrt(dn2)) * d
        x = np.minimum(np.maximum(x, lower), upper)
        history.append((best_f, f, v))
    v, _ = worst(x)
    f, _ = objective(x)
    if v <= tol and (f > best_f or not track_best):
        best, best_f = x.copy(), f
    return best, x, history


# ---------------------------------------------------------------------------
# relaxed program


class _Relaxed:
    """Surrogate constraints ``g~_e >= b_e`` plus cache capacities."""

    def __init__(self, inst: Instance, profile: UtilityProfile, divisor: float):
        self.inst = inst
        self.layout: Layout = inst.layout
        self.profile = profile
        lay = self.layout
        self.links = np.nonzero(lay.traffic & (lay.threshold > 0))[0]
        self.bound = lay.threshold[self.links] / divisor
        self.nodes = np.nonzero(lay.vars_per_node > lay.cache_room)[0]
        self.lower, self.upper = lay.bounds()

    def objective(self, x):
        lay = self.layout
        lam = lay.demand - x[lay.n_y:]
        g = np.zeros(lay.n_vars)
        g[lay.n_y:] = -self.profile.d1(lam)
        return float(self.profile.values(lam).sum()), g

    def violations(self, x):
        lay = self.layout
        vl = self.bound - lay.g_tilde(x)[self.links]
        vc = lay.cache_usage(x)[self.nodes] - lay.cache_room[self.nodes]
        return vl, vc

    def max_violation(self, x) -> float:
        vl, vc = self.violations(x)
        return float(max(vl.max(initial=0.0), vc.max(initial=0.0)))

    def worst(self, x):
        lay = self.layout
        vl, vc = self.violations(x)
        jl = int(np.argmax(vl)) if vl.size else -1
        jc = int(np.argmax(vc)) if vc.size else -1
        v_l = vl[jl] if vl.size else -math.inf
        v_c = vc[jc] if vc.size else -math.inf
        if max(v_l, v_c) <= 0:
            return max(v_l, v_c, 0.0) if max(v_l, v_c) > -math.inf else 0.0, None
        if v_l >= v_c:
            return float(v_l), lay.tilde_supergradient(x, int(self.links[jl]))
        d = np.zeros(lay.n_vars)
        d[: lay.n_y][lay.var_node == self.nodes[jc]] = -1.0
        return float(v_c), d

    def repair(self, x, tol):
        """Scale overfull caches, then raise all residuals by a common fraction."""
        lay = self.layout
        x = x.copy()
        usage = lay.cache_usage(x)
        over = usage > lay.cache_room
        if over.any():
            scale = np.ones(lay.n_nodes)
            scale[over] = lay.cache_room[over] / usage[over]
            x[: lay.n_y] *= scale[lay.var_node]
        if self.max_violation(x) <= tol:
            return x
        r0 = x[lay.n_y:].copy()
        head = lay.demand - r0
        x[lay.n_y:] = lay.demand
        if self.max_violation(x) > tol:
            return None
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            x[lay.n_y:] = r0 + mid * head
            if self.max_violation(x) <= tol:
                hi = mid
            else:
                lo = mid
        x[lay.n_y:] = r0 + hi * head
        return x


def solve_cr(inst: Instance, profile: UtilityProfile, cfg: CRConfig | None = None) -> CRResult:
    """Maximize utility over the tightened surrogate set.

    Starts from empty caches and full admission.  The best feasible iterate is
    reported; the last iterate is repaired and kept when it is better.  When
    the surrogate set is empty (very tight links) the output falls back to a
    point repaired into the original feasible set.
    """
    cfg = cfg or CRConfig()
    t0 = time.perf_counter()
    prob = _Relaxed(inst, profile, RELAX)
    lay = prob.layout
    if cfg.method == "lp":
        _, _, rounds, xs = _surrogate_lp(inst, profile, RELAX, BoundConfig())
        last = xs if xs is not None else np.concatenate([np.zeros(lay.n_y), lay.demand])
        hist = [(prob.objective(last)[0], prob.objective(last)[0], prob.max_violation(last))] * rounds
        best = None
    else:
        a = cfg.step_scale if cfg.step_scale is not None else 0.1 * float(np.max(lay.demand, initial=1.0))
        x0 = np.zeros(lay.n_vars)
        best, last, hist = switching_subgradient(x0, prob.lower, prob.upper, prob.objective, prob.worst,
                                                 cfg.iterations, a, cfg.tol, cfg.track_best)
    candidates = [c for c in (best, prob.repair(last, cfg.tol)) if c is not None]
    if candidates:
        x = max(candidates, key=lambda c: prob.objective(c)[0])
    else:
        x = repair_d1(lay, last)
    strategy = lay.unpack(x, inst.pinned)
    rep = feasibility_report(inst, strategy, tol=1e-6)
    trajectory = [{"outer_iter": k + 1, "objective": h[1], "max_violation": max(h[2], 0.0),
                   "best_objective": h[0]} for k, h in enumerate(hist)]
    return CRResult(
        algorithm="cr",
        strategy=strategy,
        objective=prob.objective(x)[0],
        feasibility=rep,
        converged=bool(candidates),
        iterations=len(hist),
        runtime_ms=1e3 * (time.perf_counter() - t0),
        trajectory=trajectory,
        extras={"surrogate_feasible": bool(candidates)},
        d2_violation=prob.max_violation(x),
        last_objective=prob.objective(last)[0],
    )


def tightened_capacities(inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    """``C' = C - (sum demand - C) / (e - 1)`` per edge and a negativity flag.

    A negative entry means the lower end of the guarantee is vacuous there.
    """
    lay = inst.layout
    c = inst.link_capacity - np.where(lay.traffic, lay.threshold, 0.0) / (math.e - 1.0)
    return c, c < 0


def delta_guarantee(inst: Instance, delta: float) -> float:
    """Rate factor ``(e - delta) / (e - 1)`` for a load ratio bound ``delta``.

    Raises
    ------
    ValueError
        If ``delta`` is outside ``[1, e]`` or some constrained edge carries
        more than ``delta`` times its capacity.
    """
    if not 1.0 <= delta <= math.e:
        raise ValueError("delta must lie in [1, e]")
    lay = inst.layout
    mask = lay.traffic
    if np.any(lay.load_max[mask] > delta * inst.link_capacity[mask] * (1 + 1e-12)):
        raise ValueError("full load exceeds delta times capacity on some edge")
    return (math.e - delta) / (math.e - 1.0)


def upper_bound(inst: Instance, profile: UtilityProfile, cfg: BoundConfig | None = None) -> UpperBound:
    """Upper bound on the optimum over the original feasible set.

    The surrogate set with undivided thresholds contains every feasible
    strategy.  Over it, the objective is bounded by tangent planes of the
    utilities and the ``min(1, .)`` terms are linearized with auxiliary
    variables, giving a linear program whose value bounds the optimum from
    above.  Tangents are added at the LP solution until the LP value and the
    true objective at that solution agree to ``rtol``; ``residual`` is the
    remaining gap, by which the bound may exceed the relaxed optimum.
    """
    value, resid, rounds, _ = _surrogate_lp(inst, profile, 1.0, cfg or BoundConfig())
    return UpperBound(value, resid, rounds)


def _surrogate_lp(inst: Instance, profile: UtilityProfile, divisor: float, cfg: BoundConfig):
    """Maximize the objective over ``g~ >= threshold / divisor`` and the caches.

    Returns the LP value, its gap to the true objective at the LP solution,
    the number of tangent rounds and the solution in solver variables
    (``None`` when the surrogate set is empty).
    """
    lay = inst.layout
    n_y, N = lay.n_y, lay.n_req
    links = np.nonzero(lay.traffic & (lay.threshold > 0))[0]
    nodes = np.nonzero(lay.vars_per_node > lay.cache_room)[0]
    ptr, tn, tk = lay.edge_terms
    t_idx = np.concatenate([np.arange(ptr[e], ptr[e + 1]) for e in links]) if links.size else np.zeros(0, int)
    T = t_idx.size
    # variable order: y (n_y), r (N), z (T), phi (N)
    nv = n_y + N + T + N
    rows, cols, vals, rhs = [], [], [], []
    row = 0
    # z_t - r_n / lam_n - sum_{j<=k} y_j <= 0
    for t, ti in enumerate(t_idx):
        n, k = tn[ti], tk[ti]
        rows += [row, row]
        cols += [n_y + N + t, n_y + n]
        vals += [1.0, -1.0 / lay.demand[n]]
        for j in range(k + 1):
            rows.append(row)
            cols.append(lay.hop_var[n, j])
            vals.append(-1.0)
        rhs.append(0.0)
        row += 1
    # -sum lam z >= ... on each link
    pos = 0
    for e in links:
        cnt = ptr[e + 1] - ptr[e]
        for t in range(pos, pos + cnt):
            rows.append(row)
            cols.append(n_y + N + t)
            vals.append(-lay.demand[tn[t_idx[t]]])
        rhs.append(-lay.threshold[e] / divisor)
        pos += cnt
        row += 1
    for v in nodes:
        for j in np.nonzero(lay.var_node == v)[0]:
            rows.append(row)
            cols.append(j)
            vals.append(1.0)
        rhs.append(lay.cache_room[v])
        row += 1
    base = (list(rows), list(cols), list(vals), list(rhs), row)
    lower, upper = lay.bounds()
    bounds = ([(lower[i], upper[i]) for i in range(n_y + N)] + [(None, 1.0)] * T + [(None, None)] * N)
    c = np.zeros(nv)
    c[n_y + N + T:] = -1.0
    # tangent points per request (admitted rates)
    pts = [list(np.linspace(0.0, 1.0, cfg.initial_tangents) * d) for d in lay.demand]
    value, resid, rounds = math.inf, math.inf, 0
    for rounds in range(1, cfg.max_rounds + 1):
        rows, cols, vals, rhs = (list(b) for b in base[:4])
        row = base[4]
        for n in range(N):
            for lam in pts[n]:
                fn = profile.functions[n]
                u = float(fn.value(lam))
                du = float(fn.d1(lam))
                if not (np.isfinite(u) and np.isfinite(du)):
                    continue
                # phi_n <= u + du * (demand - r - lam)
                rows += [row, row]
                cols += [n_y + N + T + n, n_y + n]
                vals += [1.0, du]
                rhs.append(u + du * (lay.demand[n] - lam))
                row += 1
        A = sp.csr_matrix((vals, (rows, cols)), shape=(row, nv))
        res = linprog(c, A_ub=A, b_ub=np.array(rhs), bounds=bounds, method="highs")
        if res.status == 2:
            return -math.inf, 0.0, rounds, None
        if res.status != 0:
            raise RuntimeError(f"surrogate LP failed: {res.message}")
        value = -res.fun
        r = res.x[n_y:n_y + N]
        lam_now = np.clip(lay.demand - r, 0.0, None)
        true = float(profile.values(lam_now).sum())
        resid = value - true
        if resid <= cfg.rtol * (1.0 + abs(value)):
            break
        for n in range(N):
            pts[n].append(float(lam_now[n]))
    return float(value), float(resid), rounds, res.x[:n_y + N].copy()
