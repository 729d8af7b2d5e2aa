"""Result containers shared by all solvers and their CSV/JSON serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import FeasibilityReport, Strategy, strategy_to_dict

__all__ = ["SolverResult", "TRAJECTORY_COLUMNS", "write_trajectory_csv", "result_to_dict"]

TRAJECTORY_COLUMNS = ["outer_iter", "objective", "max_violation", "satisfied_ratio",
                      "epsilon", "omega_k", "delta_k", "inner_iters", "elapsed_ms"]


@dataclass
class SolverResult:
    algorithm: str
    strategy: Strategy
    objective: float
    feasibility: FeasibilityReport
    converged: bool
    iterations: int
    runtime_ms: float
    trajectory: list[dict] = field(default_factory=list)
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.feasibility.feasible

    @property
    def max_violation(self) -> float:
        return self.feasibility.max_violation


def write_trajectory_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in TRAJECTORY_COLUMNS})


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {k: _plain(u) for k, u in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(u) for u in v]
    return v


def result_to_dict(res: SolverResult) -> dict:
    d = strategy_to_dict(res.strategy)
    d.update({
        "algorithm": res.algorithm,
        "objective": res.objective,
        "feasible": res.feasible,
        "max_violation": res.max_violation,
        "converged": res.converged,
        "iterations": res.iterations,
        "runtime_ms": res.runtime_ms,
        "extras": _plain(res.extras),
    })
    return d


def dumps_result(res: SolverResult) -> str:
    return json.dumps(result_to_dict(res), indent=1)
