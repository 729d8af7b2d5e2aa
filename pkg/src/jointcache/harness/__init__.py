"""Topologies, workload generation and experiment drivers."""

from .experiments import (ALGORITHMS, RESULT_COLUMNS, ExperimentResult, kappa_sweep, run_comparison,
                          scaling_sweep, solve, write_rows_csv)
from .generate import BENCHMARKS, GenConfig, build, generate_instance, preset, rescale_kappa, zipf_draw, zipf_weights
from .topology import generate_topology, load_edge_list

__all__ = ["GenConfig", "BENCHMARKS", "build", "generate_instance", "preset", "rescale_kappa",
           "zipf_draw", "zipf_weights", "generate_topology", "load_edge_list", "ALGORITHMS",
           "RESULT_COLUMNS", "ExperimentResult", "run_comparison", "write_rows_csv", "kappa_sweep",
           "scaling_sweep", "solve"]
