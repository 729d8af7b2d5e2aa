"""Utility families and the aggregate objective over residual rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "UtilityFunction",
    "LogShifted",
    "AlphaFair",
    "UtilityProfile",
    "objective_F",
    "theta_bound",
    "is_unbounded_above",
    "utility_from_dict",
    "utility_to_dict",
]


class UtilityFunction:
    """Twice differentiable, non-decreasing, concave utility of an admitted rate."""

    def value(self, lam):
        raise NotImplementedError

    def d1(self, lam):
        raise NotImplementedError

    def d2(self, lam):
        raise NotImplementedError

    def rate_at_price(self, price, upper):
        """Maximizer of ``U(lam) - price * lam`` over ``[0, upper]``.

        The default bisects the decreasing derivative; subclasses with a
        closed-form inverse override it.
        """
        p = np.asarray(price, dtype=float)
        lo = np.zeros(np.broadcast(p, upper).shape)
        hi = np.broadcast_to(np.asarray(upper, dtype=float), lo.shape).copy()
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            up = self.d1(mid) > p
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class LogShifted(UtilityFunction):
    """``U(lam) = ln(lam + offset)``; finite at ``lam = 0``."""

    offset: float = 0.1

    def value(self, lam):
        return np.log(np.asarray(lam, dtype=float) + self.offset)

    def d1(self, lam):
        return 1.0 / (np.asarray(lam, dtype=float) + self.offset)

    def d2(self, lam):
        return -1.0 / (np.asarray(lam, dtype=float) + self.offset) ** 2

    def rate_at_price(self, price, upper):
        with np.errstate(divide="ignore"):
            lam = 1.0 / np.asarray(price, dtype=float) - self.offset
        return np.clip(lam, 0.0, upper)


@dataclass(frozen=True)
class AlphaFair(UtilityFunction):
    """``w * lam**(1-a) / (1-a)``, or ``w * ln(lam)`` when ``a == 1``."""

    alpha: float = 1.0
    weight: float = 1.0

    def value(self, lam):
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore"):
            if self.alpha == 1.0:
                return self.weight * np.log(lam)
            return self.weight * lam ** (1.0 - self.alpha) / (1.0 - self.alpha)

    def d1(self, lam):
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore"):
            return self.weight * lam ** (-self.alpha)

    def d2(self, lam):
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore"):
            return -self.alpha * self.weight * lam ** (-self.alpha - 1.0)

    def rate_at_price(self, price, upper):
        with np.errstate(divide="ignore"):
            lam = (self.weight / np.asarray(price, dtype=float)) ** (1.0 / self.alpha)
        return np.clip(lam, 0.0, upper)


class UtilityProfile:
    """One utility per request together with the demand vector.

    Requests sharing a function object are evaluated in a single vectorized
    call, so the common case of one family for all requests costs one pass.
    """

    def __init__(self, functions: Sequence[UtilityFunction] | UtilityFunction, demand: np.ndarray):
        self.demand = np.asarray(demand, dtype=float)
        n = self.demand.size
        if isinstance(functions, UtilityFunction):
            functions = [functions] * n
        functions = list(functions)
        if len(functions) != n:
            raise ValueError(f"{len(functions)} utility functions for {n} requests")
        self.functions = functions
        groups: dict[UtilityFunction, list[int]] = {}
        for k, fn in enumerate(functions):
            groups.setdefault(fn, []).append(k)
        self._groups = [(fn, np.array(idx, dtype=int)) for fn, idx in groups.items()]

    @classmethod
    def uniform(cls, demand, fn: UtilityFunction | None = None) -> "UtilityProfile":
        return cls(fn if fn is not None else LogShifted(0.1), demand)

    def _apply(self, method: str, lam: np.ndarray) -> np.ndarray:
        out = np.empty_like(lam, dtype=float)
        for fn, idx in self._groups:
            out[idx] = getattr(fn, method)(lam[idx])
        return out

    def values(self, lam):
        return self._apply("value", np.asarray(lam, dtype=float))

    def d1(self, lam):
        return self._apply("d1", np.asarray(lam, dtype=float))

    def d2(self, lam):
        return self._apply("d2", np.asarray(lam, dtype=float))

    def rate_at_price(self, price, upper) -> np.ndarray:
        """Per-request maximizer of ``U(lam) - price * lam`` on ``[0, upper]``."""
        price = np.asarray(price, dtype=float)
        upper = np.broadcast_to(np.asarray(upper, dtype=float), price.shape)
        out = np.empty_like(price)
        for fn, idx in self._groups:
            out[idx] = fn.rate_at_price(price[idx], upper[idx])
        return out

    def max_value(self) -> float:
        """Objective with every request fully admitted."""
        return float(self.values(self.demand).sum())


def objective_F(profile: UtilityProfile, r, check: bool = True) -> tuple[float, np.ndarray]:
    """Aggregate utility ``sum U_n(demand_n - r_n)`` and its gradient in ``r``.

    Raises
    ------
    ValueError
        If ``r`` leaves ``[0, demand]`` by more than rounding noise.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != profile.demand.shape:
        raise ValueError("residual vector length does not match the profile")
    if check:
        slack = 1e-12 * max(1.0, float(np.max(profile.demand, initial=0.0)))
        if np.any(r < -slack) or np.any(r > profile.demand + slack):
            raise ValueError("residual rates outside [0, demand]")
    lam = profile.demand - r
    return float(profile.values(lam).sum()), -profile.d1(lam)


def theta_bound(fn: UtilityFunction, domain_floor: float = 0.0) -> float:
    """``sup lam * U'(lam)`` over ``lam >= domain_floor``; ``inf`` when unbounded."""
    if domain_floor < 0:
        raise ValueError("domain_floor must be nonnegative")
    if isinstance(fn, LogShifted):
        # lam / (lam + w0) increases towards 1
        return 1.0
    if isinstance(fn, AlphaFair):
        # w * lam**(1 - a): constant at a == 1, increasing for a < 1
        if fn.alpha == 1.0:
            return float(fn.weight)
        if fn.alpha < 1.0:
            return math.inf
        if domain_floor == 0.0:
            return math.inf
        return float(fn.weight * domain_floor ** (1.0 - fn.alpha))
    raise TypeError(f"no closed-form theta for {type(fn).__name__}")


def is_unbounded_above(fn: UtilityFunction) -> bool:
    if isinstance(fn, LogShifted):
        return True
    if isinstance(fn, AlphaFair):
        return fn.alpha <= 1.0
    raise TypeError(f"unknown utility {type(fn).__name__}")


def utility_from_dict(d: dict) -> UtilityFunction:
    kind = d.get("kind", "log_shifted")
    if kind == "log_shifted":
        return LogShifted(float(d.get("offset", 0.1)))
    if kind == "alpha_fair":
        return AlphaFair(float(d.get("alpha", 1.0)), float(d.get("weight", 1.0)))
    raise ValueError(f"unknown utility kind {kind!r}")


def utility_to_dict(fn: UtilityFunction) -> dict:
    if isinstance(fn, LogShifted):
        return {"kind": "log_shifted", "offset": fn.offset}
    if isinstance(fn, AlphaFair):
        return {"kind": "alpha_fair", "alpha": fn.alpha, "weight": fn.weight}
    raise TypeError(f"unknown utility {type(fn).__name__}")
