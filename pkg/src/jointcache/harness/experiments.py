"""Algorithm comparisons, capacity sweeps and scaling sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from ..baselines import greedy1, greedy2
from ..convexrelax import solve_cr, upper_bound
from ..lbsb import solve_lbsb, suboptimality_certificate
from ..model import Instance
from ..results import SolverResult
from ..utility import UtilityProfile
from .generate import GenConfig, build, rescale_kappa

__all__ = ["ALGORITHMS", "RESULT_COLUMNS", "ExperimentResult", "run_comparison", "write_rows_csv",
           "kappa_sweep", "scaling_sweep", "solve"]

Solver = Callable[[Instance, UtilityProfile, object], SolverResult]

ALGORITHMS: dict[str, Solver] = {
    "lbsb": lambda inst, prof, cfg: solve_lbsb(inst, prof, cfg),
    "cr": lambda inst, prof, cfg: solve_cr(inst, prof, cfg),
    # greedy settings are keyword dicts, e.g. {"fw": FWConfig(50)}
    "greedy1": lambda inst, prof, cfg: greedy1(inst, prof, **(cfg or {})),
    "greedy2": lambda inst, prof, cfg: greedy2(inst, prof, **(cfg or {})),
}

RESULT_COLUMNS = ["topology", "seed", "kappa", "algorithm", "objective", "normalized", "feasible",
                  "max_violation", "runtime_ms", "iterations"]


def solve(name: str, inst: Instance, profile: UtilityProfile, cfg=None) -> SolverResult:
    """Run one algorithm by name (``lbsb``, ``cr``, ``greedy1``, ``greedy2``)."""
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}")
    return ALGORITHMS[name](inst, profile, cfg)


@dataclass
class ExperimentResult:
    """Results of several algorithms on one instance.

    ``normalized`` divides each objective by the LBSB objective of the same
    instance (``nan`` when LBSB was not run or returned zero).
    """

    fingerprint: str
    topology: str
    seed: int
    kappa: float
    results: dict[str, SolverResult] = field(default_factory=dict)

    @property
    def normalized(self) -> dict[str, float]:
        ref = self.results.get("lbsb")
        den = ref.objective if ref is not None else math.nan
        ok = den != 0 and np.isfinite(den)
        return {k: r.objective / den if ok else math.nan for k, r in self.results.items()}

    @property
    def all_feasible(self) -> bool:
        return all(r.feasible for r in self.results.values())

    def rows(self) -> list[dict]:
        norm = self.normalized
        return [{
            "topology": self.topology,
            "seed": self.seed,
            "kappa": self.kappa,
            "algorithm": name,
            "objective": r.objective,
            "normalized": norm[name],
            "feasible": r.feasible,
            "max_violation": r.max_violation,
            "runtime_ms": r.runtime_ms,
            "iterations": r.iterations,
        } for name, r in self.results.items()]


def run_comparison(inst: Instance, profile: UtilityProfile,
                   algorithms: Iterable[str] = ("lbsb", "cr", "greedy1", "greedy2"),
                   configs: dict | None = None, topology: str = "", seed: int = 0,
                   kappa: float = math.nan, fingerprint: str = "") -> ExperimentResult:
    """Solve one instance with each algorithm.

    Solvers that stop on an iteration cap are reported with
    ``converged=False`` rather than raising.
    """
    configs = configs or {}
    out = ExperimentResult(fingerprint, topology, seed, kappa)
    for name in algorithms:
        out.results[name] = solve(name, inst, profile, configs.get(name))
    return out


def write_rows_csv(rows: list[dict], path, columns: list[str] | None = None) -> None:
    """Write rows to a path or an open text stream."""
    columns = columns or RESULT_COLUMNS
    if hasattr(path, "write"):
        _dump(rows, path, columns)
        return
    with open(path, "w", newline="") as fh:
        _dump(rows, fh, columns)


def _dump(rows, fh, columns) -> None:
    w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)


def kappa_sweep(cfg: GenConfig, kappas: Iterable[float], profile_of=None,
                algorithms: Iterable[str] = ("lbsb", "cr", "greedy1", "greedy2"),
                configs: dict | None = None) -> list[dict]:
    """Objectives per algorithm as the capacities shrink.

    The instance is generated once from ``cfg``; every ``kappa`` only
    rescales link capacities, so the requests are identical across rows.

    Parameters
    ----------
    profile_of : callable, optional
        ``demand -> UtilityProfile``; defaults to the shifted logarithm.
    """
    profile_of = profile_of or UtilityProfile.uniform
    base = build(cfg)
    profile = profile_of(base.demands)
    rows = []
    for kappa in kappas:
        if not 0 < kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        inst = rescale_kappa(base, kappa)
        res = run_comparison(inst, profile, algorithms, configs, cfg.topology, cfg.seed, kappa,
                             cfg.fingerprint())
        rows.extend(res.rows())
    return rows


def scaling_sweep(inst: Instance, profile_of, ms: Iterable[float], lbsb_cfg=None,
                  theta_floor: float = 0.0) -> list[dict]:
    """LBSB objective against the relaxation upper bound as demands grow.

    Demands and capacities are multiplied by ``m``.  Each row holds the
    LBSB objective, the upper bound with its residual, their ratio and the
    path-count certificate (``nan`` when the utility's ``theta`` is
    unbounded).

    Parameters
    ----------
    profile_of : callable
        ``demand -> UtilityProfile`` applied to each scaled instance.
    """
    rows = []
    for m in ms:
        if m < 1:
            raise ValueError("scale factors must be at least 1")
        scaled = inst.scaled(m)
        prof = profile_of(scaled.demands)
        res = solve_lbsb(scaled, prof, lbsb_cfg)
        ub = upper_bound(scaled, prof)
        try:
            cert = suboptimality_certificate(scaled, prof, res, theta_floor).path_bound
        except ValueError:
            cert = math.nan
        rows.append({"m": m, "lbsb": res.objective, "upper_bound": ub.value, "bound_residual": ub.residual,
                     "ratio": res.objective / ub.value, "path_bound": cert, "converged": res.converged,
                     "feasible": res.feasible})
    return rows
