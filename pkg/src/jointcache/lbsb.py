"""Lagrangian barrier method with simple bounds.

The general constraints ``c_j(x) >= 0`` (link slack ``C - rho`` and cache
slack ``c' - usage``) are folded into the shifted log barrier

    Psi(x) = F(x) + sum_j sigma_j s_j log(c_j(x) + s_j),

with shifts ``s_j = eps * sigma_j**alpha_sigma``.  Each outer iteration
maximizes ``Psi`` over the box with the trust-region solver, then either
accepts the first-order multiplier estimates
``sigma_bar_j = sigma_j s_j / (c_j + s_j)`` or shrinks the penalty ``eps``.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .boxsolve import Box, SmoothOracle, TrustRegionConfig, trust_region_maximize
from .model import Instance, Layout, Strategy, feasibility_report, repair_d1
from .results import SolverResult
from .utility import UtilityProfile, theta_bound

log = logging.getLogger(__name__)

START_ADMIT = 1e-3

__all__ = [
    "LBSBConfig",
    "LBSBState",
    "Multipliers",
    "LBSBResult",
    "Certificate",
    "ConstraintSystem",
    "barrier_eval",
    "compute_shifts",
    "multiplier_estimates",
    "solve_lbsb",
    "kkt_residuals",
    "suboptimality_certificate",
    "path_count_bound",
]


@dataclass(frozen=True)
class LBSBConfig:
    eps0: float = 0.1
    tau: float = 0.1
    alpha_omega: float = 1.0
    beta_omega: float = 1.0
    alpha_delta: float = 0.75
    beta_delta: float = 0.9
    alpha_sigma: float = 1.0
    omega_s: float = 1.0
    delta_s: float = 1.0
    omega_star: float = 1e-4
    delta_star: float = 1e-4
    violation_tol: float = 1e-6
    sigma0: float = 1.0
    sigma_floor: float = 1e-100
    max_outer: int = 200
    max_stalls: int = 3
    inner: TrustRegionConfig = field(default_factory=TrustRegionConfig)

    def __post_init__(self):
        if not 0 < self.eps0 < 1:
            raise ValueError("eps0 must lie in (0, 1)")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        for name in ("alpha_omega", "beta_omega", "alpha_delta", "beta_delta",
                     "omega_s", "delta_s", "omega_star", "delta_star", "sigma0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.alpha_sigma <= 1:
            raise ValueError("alpha_sigma must lie in (0, 1]")
        if self.alpha_delta + 1.0 / (1.0 + self.alpha_sigma) <= 1.0:
            warnings.warn("alpha_delta + 1/(1 + alpha_sigma) <= 1; local convergence theory may not apply",
                          stacklevel=2)


@dataclass
class Multipliers:
    """Link multipliers per edge and cache multipliers per node (zero where omitted)."""

    link: np.ndarray
    cache: np.ndarray


@dataclass
class LBSBState:
    """Outer-loop state; ``sigma`` is indexed by the constraint system."""

    x: np.ndarray
    sigma: np.ndarray
    eps: float
    omega: float
    delta: float
    alpha_sigma: float = 1.0

    @property
    def shifts(self) -> np.ndarray:
        return compute_shifts(self)


@dataclass
class LBSBResult(SolverResult):
    multipliers: Multipliers | None = None
    stationarity: float = math.nan
    complementarity: float = math.nan
    dual_min: float = math.nan


@dataclass
class Certificate:
    multiplier_bound: float
    path_bound: float


class ConstraintSystem:
    """The retained constraints ``c_j(x) >= 0`` of an instance.

    Links are kept when they carry traffic and their threshold is positive
    (otherwise ``g >= t`` holds for every strategy).  Cache constraints are
    kept at nodes holding more candidate variables than free slots.
    """

    def __init__(self, inst: Instance, profile: UtilityProfile):
        self.inst = inst
        self.layout: Layout = inst.layout
        self.profile = profile
        lay = self.layout
        self.links = np.nonzero(lay.traffic & (lay.threshold > 0))[0]
        self.nodes = np.nonzero(lay.vars_per_node > lay.cache_room)[0]
        self.n_links = self.links.size
        self.m = self.n_links + self.nodes.size
        cache_rows = lay.node_sum[self.nodes]
        self._cache_jac = sp.hstack([-cache_rows, sp.csr_matrix((self.nodes.size, lay.n_req))]).tocsr()
        self._cache_jac_t = self._cache_jac.T.tocsr()
        self.box = Box(*lay.bounds())
        self._cache_key = None
        self._jac = None

    # objective -------------------------------------------------------------
    def F(self, x) -> float:
        lam = self.layout.demand - x[self.layout.n_y:]
        return float(self.profile.values(lam).sum())

    def grad_F(self, x) -> np.ndarray:
        lam = self.layout.demand - x[self.layout.n_y:]
        g = np.zeros(self.layout.n_vars)
        g[self.layout.n_y:] = -self.profile.d1(lam)
        return g

    def hess_F_diag(self, x) -> np.ndarray:
        lam = self.layout.demand - x[self.layout.n_y:]
        d = np.zeros(self.layout.n_vars)
        d[self.layout.n_y:] = self.profile.d2(lam)
        return d

    # constraints -----------------------------------------------------------
    def values(self, x) -> np.ndarray:
        lay = self.layout
        link = lay.capacity[self.links] - lay.loads(x)[self.links]
        cache = lay.cache_room[self.nodes] - lay.cache_usage(x)[self.nodes]
        return np.concatenate([link, cache])

    def jacobians(self, x):
        """Link Jacobian and its transpose at ``x`` (memoized on the last point)."""
        key = x.tobytes()
        if key != self._cache_key:
            lay = self.layout
            sel, asm, asm_t = lay.jacobian_assemblers(self.links)
            vals = lay.jacobian_values(x)[sel]
            self._jac = (asm.build(vals), asm_t.build(vals))
            self._cache_key = key
        return self._jac

    def jt_dot(self, x, v) -> np.ndarray:
        """``J(x)^T v`` for a multiplier-like vector over all retained constraints."""
        _, JT = self.jacobians(x)
        return JT @ v[: self.n_links] + self._cache_jac_t @ v[self.n_links:]

    def j_dot(self, x, v) -> np.ndarray:
        J, _ = self.jacobians(x)
        return np.concatenate([J @ v, self._cache_jac @ v])

    def link_hessian(self, x, w_links) -> sp.csr_matrix:
        w = np.zeros(self.layout.n_edges)
        w[self.links] = w_links
        return self.layout.weighted_link_hessian(x, w)

    def split(self, v: np.ndarray) -> Multipliers:
        link = np.zeros(self.layout.n_edges)
        cache = np.zeros(self.layout.n_nodes)
        link[self.links] = v[: self.n_links]
        cache[self.nodes] = v[self.n_links:]
        return Multipliers(link, cache)

    def join(self, mult: Multipliers) -> np.ndarray:
        return np.concatenate([mult.link[self.links], mult.cache[self.nodes]])

    def strategy(self, x) -> Strategy:
        return self.layout.unpack(x, self.inst.pinned)


def compute_shifts(state: LBSBState) -> np.ndarray:
    return state.eps * state.sigma ** state.alpha_sigma


def multiplier_estimates(state: LBSBState, c: np.ndarray) -> np.ndarray:
    """``sigma * s / (c + s)``; ``c`` is the constraint vector at the point."""
    s = compute_shifts(state)
    den = c + s
    if np.any(den <= 0):
        raise ValueError("point outside the barrier domain")
    return state.sigma * s / den


class _HessOp:
    """``D + H - J^T diag(w) J`` applied lazily."""

    def __init__(self, system: ConstraintSystem, x, diag, H, w):
        self.sys, self.x, self.diag, self.H, self.w = system, x, diag, H, w

    def __matmul__(self, v):
        out = self.diag * v + self.H @ v
        if self.sys.m:
            out -= self.sys.jt_dot(self.x, self.w * self.sys.j_dot(self.x, v))
        return out


class _Barrier:
    def __init__(self, system: ConstraintSystem, sigma: np.ndarray, shifts: np.ndarray):
        self.sys = system
        self.sigma = sigma
        self.s = shifts
        self.coef = sigma * shifts

    def value(self, x) -> float:
        c = self.sys.values(x)
        den = c + self.s
        if np.any(den <= 0):
            return -math.inf
        return self.sys.F(x) + float(self.coef @ np.log(den))

    def sigma_bar(self, x) -> np.ndarray:
        return self.coef / (self.sys.values(x) + self.s)

    def gradient(self, x) -> np.ndarray:
        return self.sys.grad_F(x) + self.sys.jt_dot(x, self.sigma_bar(x))

    def hessian(self, x) -> _HessOp:
        c = self.sys.values(x)
        den = c + self.s
        sb = self.coef / den
        H = self.sys.link_hessian(x, sb[: self.sys.n_links])
        return _HessOp(self.sys, x.copy(), self.sys.hess_F_diag(x), H, sb / den)

    def oracle(self) -> SmoothOracle:
        return SmoothOracle(self.value, self.gradient, hessian=self.hessian)


def barrier_eval(inst: Instance, profile: UtilityProfile, state: LBSBState, s: Strategy):
    """Barrier value, gradient over solver variables and a Hessian-vector callback.

    The value is ``-inf`` outside the barrier domain; gradient and product are
    then ``None``.
    """
    system = ConstraintSystem(inst, profile)
    bar = _Barrier(system, state.sigma, compute_shifts(state))
    x = system.layout.pack(s)
    val = bar.value(x)
    if not np.isfinite(val):
        return val, None, None
    H = bar.hessian(x)
    return val, bar.gradient(x), (lambda v: H @ v)


def _pull_back(system: ConstraintSystem, x: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Restore ``c_j + s_j > 0`` after the shifts shrank.

    Overfull caches are scaled down first.  Then the requests crossing a
    link outside the domain reject an extra common fraction of their
    admitted rate, found by bisection; raising residuals lowers every link
    load, so constraints already inside stay inside.
    """
    lay = system.layout
    margin = 0.1 * shifts

    def bad(x_try):
        return system.values(x_try) + shifts <= margin

    b = bad(x)
    if not b.any():
        return x
    x = x.copy()
    nl = system.n_links
    if b[nl:].any():
        nodes = system.nodes[b[nl:]]
        target = lay.cache_room[nodes] + 0.5 * shifts[nl:][b[nl:]]
        usage = lay.cache_usage(x)[nodes]
        scale = np.ones(lay.n_nodes)
        scale[nodes] = np.clip(target / np.maximum(usage, 1e-300), 0.0, 1.0)
        x[: lay.n_y] *= scale[lay.var_node]
        b = bad(x)
    if b[:nl].any():
        edges = np.zeros(lay.n_edges, dtype=bool)
        edges[system.links[b[:nl]]] = True
        hit = np.zeros(lay.n_req, dtype=bool)
        hit[np.nonzero(lay.hop_mask & edges[lay.hop_edge])[0]] = True
        r0 = x[lay.n_y:].copy()
        head = np.where(hit, lay.demand - r0, 0.0)
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            x[lay.n_y:] = r0 + mid * head
            if bad(x).any():
                lo = mid
            else:
                hi = mid
        x[lay.n_y:] = r0 + hi * head
    if bad(x).any():
        return np.concatenate([np.zeros(lay.n_y), lay.demand])
    return x


def _pg_norm(system: ConstraintSystem, x, grad) -> float:
    b = system.box
    return float(np.linalg.norm(x - np.minimum(np.maximum(x + grad, b.lower), b.upper)))


def solve_lbsb(inst: Instance, profile: UtilityProfile, cfg: LBSBConfig | None = None,
               start: Strategy | None = None) -> LBSBResult:
    """Maximize aggregate utility subject to link and cache constraints.

    Parameters
    ----------
    inst : Instance
    profile : UtilityProfile
    cfg : LBSBConfig, optional
    start : Strategy, optional
        Defaults to empty caches and every request rejected, which is
        strictly inside all shifted constraints.  When the objective is not
        finite there, a fraction ``START_ADMIT`` of each demand is admitted.

    Returns
    -------
    LBSBResult
        Strategy projected onto the box, first-order multiplier estimates,
        terminal KKT residuals and the per-outer-iteration trajectory.  If the
        caps stop the run before the tolerances are met, ``converged`` is
        false and the iterate closest to the tolerances is repaired into the
        feasible set.  The run also stops after ``max_stalls`` consecutive
        inner solves that hit their iteration cap.
    """
    cfg = cfg or LBSBConfig()
    t0 = time.perf_counter()
    system = ConstraintSystem(inst, profile)
    lay = system.layout
    box = system.box
    if start is None:
        x = np.concatenate([np.zeros(lay.n_y), lay.demand])
        if not np.isfinite(system.F(x)):
            # utilities unbounded below at zero rate: admit a sliver of every demand
            x[lay.n_y:] *= 1.0 - START_ADMIT
    else:
        x = np.minimum(np.maximum(lay.pack(start), box.lower), box.upper)
    eps = cfg.eps0
    state = LBSBState(x, np.full(system.m, cfg.sigma0), eps,
                      cfg.omega_s * eps ** cfg.alpha_omega, cfg.delta_s * eps ** cfg.alpha_delta,
                      cfg.alpha_sigma)
    trajectory: list[dict] = []
    converged = False
    radius = cfg.inner.radius0
    total_inner = 0
    sigma_bar = state.sigma.copy()
    pg = math.inf
    # least-violating iterate in units of the stopping tolerances
    best = (math.inf, state.x, sigma_bar)
    stalls = 0
    for k in range(cfg.max_outer):
        shifts = compute_shifts(state)
        x = _pull_back(system, state.x, shifts)
        bar = _Barrier(system, state.sigma, shifts)
        tr = trust_region_maximize(bar.oracle(), box, x, max(state.omega, cfg.omega_star),
                                   cfg.inner, radius=max(radius, 1e-3))
        x = tr.x
        radius = tr.radius
        total_inner += tr.iterations
        c = system.values(x)
        sigma_bar = bar.sigma_bar(x)
        pg = _pg_norm(system, x, bar.gradient(x))
        comp = float(np.linalg.norm(c * sigma_bar))
        rep = feasibility_report(inst, system.strategy(x), tol=cfg.violation_tol)
        trajectory.append({
            "outer_iter": k + 1,
            "objective": system.F(x),
            "max_violation": rep.max_violation,
            "satisfied_ratio": rep.satisfied_ratio,
            "epsilon": state.eps,
            "omega_k": state.omega,
            "delta_k": state.delta,
            "inner_iters": tr.iterations,
            "elapsed_ms": 1e3 * (time.perf_counter() - t0),
        })
        log.debug("outer %d: F=%.6g pg=%.3g comp=%.3g viol=%.3g eps=%.3g omega=%.3g inner=%d conv=%s",
                  k + 1, trajectory[-1]["objective"], pg, comp, rep.max_violation, state.eps, state.omega,
                  tr.iterations, tr.converged)
        state.x = x
        score = max(pg / cfg.omega_star, comp / cfg.delta_star, rep.max_violation / cfg.violation_tol)
        if score < best[0]:
            best = (score, x, sigma_bar)
        if score <= 1.0:
            converged = True
            break
        stalls = 0 if tr.converged else stalls + 1
        if stalls >= cfg.max_stalls:
            break
        local = float(np.linalg.norm(c * sigma_bar / state.sigma ** cfg.alpha_sigma))
        if local <= state.delta:
            # multipliers of inactive constraints decay geometrically; keep them representable
            state.sigma = np.maximum(sigma_bar, cfg.sigma_floor)
            state.omega *= state.eps ** cfg.beta_omega
            state.delta *= state.eps ** cfg.beta_delta
        else:
            state.eps *= cfg.tau
            state.omega = cfg.omega_s * state.eps ** cfg.alpha_omega
            state.delta = cfg.delta_s * state.eps ** cfg.alpha_delta
        if state.eps < 1e-300:
            break
    x = state.x
    if not converged:
        _, x, sigma_bar = best
    repaired = False
    rep = feasibility_report(inst, system.strategy(x), tol=cfg.violation_tol)
    if not rep.feasible:
        x = repair_d1(lay, x)
        repaired = True
    strategy = system.strategy(x)
    rep = feasibility_report(inst, strategy, tol=cfg.violation_tol)
    mult = system.split(sigma_bar)
    stat, comp, dual = kkt_residuals(inst, profile, strategy, mult)
    return LBSBResult(
        algorithm="lbsb",
        strategy=strategy,
        objective=system.F(x),
        feasibility=rep,
        converged=converged,
        iterations=len(trajectory),
        runtime_ms=1e3 * (time.perf_counter() - t0),
        trajectory=trajectory,
        extras={"inner_iterations": total_inner, "repaired": repaired, "epsilon": state.eps},
        multipliers=mult,
        stationarity=stat,
        complementarity=comp,
        dual_min=dual,
    )


def kkt_residuals(inst: Instance, profile: UtilityProfile, s: Strategy,
                  multipliers: Multipliers) -> tuple[float, float, float]:
    """Stationarity, complementarity and dual-feasibility measures.

    Returns
    -------
    stationarity : float
        Norm of the projected-gradient residual of the Lagrangian.
    complementarity : float
        Norm of ``slack_j * multiplier_j`` over the retained constraints.
    dual_min : float
        Smallest multiplier (``inf`` without retained constraints).
    """
    system = ConstraintSystem(inst, profile)
    lay = system.layout
    x = lay.pack(s)
    sig = system.join(multipliers)
    if np.any(sig < 0):
        raise ValueError("multipliers must be nonnegative")
    grad = system.grad_F(x) + system.jt_dot(x, sig)
    x_in = np.minimum(np.maximum(x, system.box.lower), system.box.upper)
    stat = _pg_norm(system, x_in, grad)
    comp = float(np.linalg.norm(system.values(x) * sig))
    dual = float(sig.min()) if sig.size else math.inf
    return stat, comp, dual


def suboptimality_certificate(inst: Instance, profile: UtilityProfile, result: LBSBResult,
                              domain_floor: float = 0.0) -> Certificate:
    """Additive bounds on ``F* - F(result)``.

    ``multiplier_bound`` weighs the positive thresholds by the terminal link
    multipliers; ``path_bound`` replaces them with ``theta * n_paths / C``.

    Raises
    ------
    ValueError
        If the utility's ``theta`` is infinite on ``[domain_floor, inf)``.
    """
    lay = inst.layout
    theta = max(theta_bound(fn, domain_floor) for fn in set(profile.functions)) if profile.functions else 0.0
    if not np.isfinite(theta):
        raise ValueError("theta is unbounded; supply a positive domain_floor")
    tpos = np.where(lay.traffic, np.maximum(lay.threshold, 0.0), 0.0)
    mu = result.multipliers.link if result.multipliers is not None else np.zeros(lay.n_edges)
    b3 = float(mu @ tpos)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tpos > 0, lay.n_paths * tpos / lay.capacity, 0.0)
    b4 = float(theta * ratio.sum())
    return Certificate(b3, b4)


def path_count_bound(n_paths, excess, capacity, theta: float = 1.0) -> float:
    """``theta * sum n * max(0, excess) / C`` for explicit link data."""
    n_paths, excess, capacity = map(np.atleast_1d, (n_paths, excess, capacity))
    return float(theta * np.sum(n_paths * np.maximum(excess, 0.0) / capacity))
