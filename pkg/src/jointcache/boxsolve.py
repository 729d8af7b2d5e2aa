"""Box-constrained trust-region maximization.

Each iteration builds the quadratic model of the objective, follows the
projected-gradient path ``s(t) = P(x + t g) - x`` to its first local maximum
inside the trust region (the generalized Cauchy point), then optionally
improves the step by cycles of truncated conjugate gradients on the free
variables followed by a search along the projected CG path.  The refinement
only ever raises the model value, so the usual Cauchy-decrease guarantees
carry over.

Objectives may return ``-inf`` outside their domain (barrier functions).  A
trial step that leaves the domain is cut back to ``backoff`` times the
largest finite fraction of itself before the usual ratio test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

__all__ = [
    "Box",
    "SmoothOracle",
    "TrustRegionConfig",
    "TrustRegionResult",
    "project_box",
    "pg_residual",
    "trust_region_maximize",
]


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in shape")
        if np.any(lo > hi):
            raise ValueError("empty box: lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def size(self) -> int:
        return self.lower.size


@dataclass
class SmoothOracle:
    """Objective callbacks.

    ``hessian(x)`` may return any object supporting ``@`` with a vector; when
    given it is formed once per iterate.  Otherwise ``hvp(x, v)`` is used, and
    failing that a forward difference of the gradient.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hvp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], object]] = None

    def hvp_at(self, x: np.ndarray, g: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        if self.hessian is not None:
            H = self.hessian(x)
            return lambda v: H @ v
        if self.hvp is not None:
            return lambda v: self.hvp(x, v)

        def fd(v):
            nv = np.linalg.norm(v)
            if nv == 0:
                return np.zeros_like(v)
            h = 1e-7 * (1.0 + np.linalg.norm(x)) / nv
            return (self.gradient(x + h * v) - g) / h

        return fd


@dataclass(frozen=True)
class TrustRegionConfig:
    mu: float = 0.1
    eta: float = 0.75
    gamma0: float = 0.25
    gamma1: float = 0.5
    gamma2: float = 2.0
    radius0: float = 1.0
    max_iter: int = 5000
    refine: bool = True
    cg_max_iter: int = 200
    max_cycles: int = 10
    backoff: float = 0.9

    def __post_init__(self):
        if not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        if not 0 <= self.backoff < 1:
            raise ValueError("backoff must lie in [0, 1)")
        if not self.mu < self.eta < 1:
            raise ValueError("eta must lie in (mu, 1)")
        if not 0 < self.gamma0 <= self.gamma1 <= 1 <= self.gamma2:
            raise ValueError("need 0 < gamma0 <= gamma1 <= 1 <= gamma2")
        if self.radius0 <= 0:
            raise ValueError("initial radius must be positive")


class TrustRegionResult(NamedTuple):
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    value: float
    radius: float


def project_box(b: Box, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != b.lower.shape:
        raise ValueError(f"vector of shape {x.shape} does not match box of shape {b.lower.shape}")
    return np.minimum(np.maximum(x, b.lower), b.upper)


def pg_residual(b: Box, x, grad, tol: float = 1e-12) -> np.ndarray:
    """``x - P(x + grad)``; zero exactly at first-order points of a maximization."""
    x = np.asarray(x, dtype=float)
    if np.any(x < b.lower - tol) or np.any(x > b.upper + tol):
        raise ValueError("point outside the box")
    return x - project_box(b, x + np.asarray(grad, dtype=float))


def _boundary_step(s: np.ndarray, d: np.ndarray, radius: float) -> float:
    """Largest ``tau >= 0`` with ``|s + tau d| <= radius``."""
    dd = d @ d
    if dd == 0:
        return np.inf
    sd = s @ d
    ss = s @ s
    disc = sd * sd + dd * (radius * radius - ss)
    if disc <= 0:
        return 0.0
    return max(0.0, (-sd + np.sqrt(disc)) / dd)


def _path_max(x0, d, gm, lo, hi, hv, radius, s0, t_max=np.inf):
    """First local maximizer of the model along ``u(t) = P(x0 + t d) - x0``.

    ``gm`` is the model gradient at the offset ``s0`` (with ``x0 = x + s0``);
    the search stops at ``t_max`` and keeps ``|s0 + u| <= radius``.  Returns
    the increment, its Hessian product and whether a breakpoint was passed.
    """
    n = x0.size
    bp = np.full(n, np.inf)
    up = d > 0
    dn = d < 0
    with np.errstate(over="ignore"):
        bp[up] = (hi[up] - x0[up]) / d[up]
        bp[dn] = (lo[dn] - x0[dn]) / d[dn]
    order = np.argsort(bp)
    bps = bp[order]
    u = np.zeros(n)
    Hu = np.zeros(n)
    dd = np.where(bp > 0, d, 0.0)
    t = 0.0
    crossed = False
    pos = int(np.searchsorted(bps, 0.0, side="right"))
    while np.any(dd):
        t_next = min(bps[pos] if pos < n else np.inf, t_max)
        seg = t_next - t
        Hd = hv(dd)
        f1 = gm @ dd + Hu @ dd
        f2 = dd @ Hd
        if f1 <= 0:
            break
        tau_r = _boundary_step(s0 + u, dd, radius)
        tau = seg
        if f2 < 0:
            tau = min(tau, -f1 / f2)
        hit_radius = tau_r <= tau
        tau = min(tau, tau_r)
        u = u + tau * dd
        Hu = Hu + tau * Hd
        if hit_radius or tau < seg or t_next >= t_max:
            break
        # advance to the next breakpoint; freeze every component reaching it
        t = t_next
        crossed = True
        while pos < n and bps[pos] <= t:
            dd[order[pos]] = 0.0
            pos += 1
    u = np.minimum(np.maximum(x0 + u, lo), hi) - x0
    return u, Hu, crossed


def _cg(r, free, s, hv, radius, max_iter):
    """Steihaug CG for the model restricted to ``free``, inside the region."""
    rr = r @ r
    w = np.zeros_like(r)
    if rr == 0:
        return w
    tol = min(0.1, np.sqrt(np.sqrt(rr))) * np.sqrt(rr)
    p = r.copy()
    for _ in range(max_iter):
        Hp = np.where(free, hv(p), 0.0)
        curv = p @ Hp
        tau_r = _boundary_step(s + w, p, radius)
        if curv >= 0:
            return w + tau_r * p
        alpha = rr / -curv
        if alpha >= tau_r:
            return w + tau_r * p
        w = w + alpha * p
        r = r + alpha * Hp
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return w


def _step(x, g, lo, hi, hv, radius, cfg):
    """Trial step: generalized Cauchy point, then CG / projected-path cycles."""
    s, Hs, _ = _path_max(x, g, g, lo, hi, hv, radius, np.zeros_like(x))
    if cfg.refine:
        for _ in range(cfg.max_cycles):
            xs = x + s
            free = (xs > lo) & (xs < hi)
            if not free.any():
                break
            gm = g + Hs
            w = _cg(np.where(free, gm, 0.0), free, s, hv, radius, cfg.cg_max_iter)
            if not np.any(w):
                break
            u, Hu, crossed = _path_max(xs, w, gm, lo, hi, hv, radius, s, 1.0)
            s = np.minimum(np.maximum(xs + u, lo), hi) - x
            Hs = Hs + Hu
            if not crossed:
                break
    return s, g @ s + 0.5 * (s @ hv(s))


def _back_off(oracle, x, s, lo, hi, frac, steps=30):
    """Scale ``s`` to ``frac`` of the largest finite fraction found by bisection."""
    a, b = 0.0, 1.0
    with np.errstate(all="ignore"):
        for _ in range(steps):
            m = 0.5 * (a + b)
            if np.isfinite(oracle.value(np.minimum(np.maximum(x + m * s, lo), hi))):
                a = m
            else:
                b = m
        s = frac * a * s
        x_new = np.minimum(np.maximum(x + s, lo), hi)
        return s, x_new, float(oracle.value(x_new)) if a > 0 else -np.inf


def trust_region_maximize(oracle: SmoothOracle, b: Box, start, omega: float,
                          cfg: TrustRegionConfig | None = None,
                          radius: float | None = None, callback=None) -> TrustRegionResult:
    """Maximize a smooth function over a box until the projected-gradient
    residual norm drops to ``omega``.

    Parameters
    ----------
    oracle : SmoothOracle
    b : Box
    start : array_like
        Feasible starting point (projected onto the box).
    omega : float
        Target Euclidean norm of ``x - P(x + grad)``.
    cfg : TrustRegionConfig, optional
    radius : float, optional
        Initial radius; overrides ``cfg.radius0`` (used for warm starts).
    callback : callable, optional
        Called as ``callback(iteration, x, value, residual, radius, step_norm, rho)``
        after every trial step.

    Returns
    -------
    TrustRegionResult
        ``converged`` is false when the iteration cap or a numerical stall
        ended the run; the best (last accepted) point is returned.
    """
    cfg = cfg or TrustRegionConfig()
    lo, hi = b.lower, b.upper
    x = project_box(b, start)
    f = float(oracle.value(x))
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")
    g = oracle.gradient(x)
    delta = float(radius if radius is not None else cfg.radius0)
    res = np.linalg.norm(x - np.minimum(np.maximum(x + g, lo), hi))
    it = 0
    hv = None
    while res > omega and it < cfg.max_iter:
        it += 1
        if hv is None:
            hv = oracle.hvp_at(x, g)
        s, pred = _step(x, g, lo, hi, hv, delta, cfg)
        snorm = np.linalg.norm(s)
        if snorm == 0 or pred <= 0:
            # the model sees no ascent; numerically stationary
            break
        x_new = np.minimum(np.maximum(x + s, lo), hi)
        with np.errstate(all="ignore"):
            f_new = float(oracle.value(x_new))
        if not np.isfinite(f_new) and cfg.backoff:
            # the step left the function's domain: retreat along it
            s, x_new, f_new = _back_off(oracle, x, s, lo, hi, cfg.backoff)
            snorm = np.linalg.norm(s)
            pred = g @ s + 0.5 * (s @ hv(s))
        if np.isfinite(f_new) and pred > 0:
            rho = (f_new - f) / pred
        else:
            rho = -np.inf
        if callback is not None:
            callback(it, x, f, res, delta, snorm, rho)
        if rho >= cfg.mu and f_new >= f:
            x, f = x_new, f_new
            g = oracle.gradient(x)
            hv = None
            res = np.linalg.norm(x - np.minimum(np.maximum(x + g, lo), hi))
            if rho >= cfg.eta:
                delta = max(delta, cfg.gamma2 * snorm)
        else:
            delta = min(max(cfg.gamma1 * snorm, cfg.gamma0 * delta), cfg.gamma1 * delta)
            if delta <= 1e-15 * (1.0 + np.linalg.norm(x)):
                break
    return TrustRegionResult(x, float(res), it, bool(res <= omega), f, delta)
