"""Exact structure learning for dynamic Bayesian networks.

A mixed-integer quadratic program over intra-slice and lagged weights is
solved by branch-and-bound; acyclicity of the intra-slice graph is enforced
by cycle cuts added lazily, only when a candidate actually contains a cycle.
"""

from .bench import ExperimentConfig, fit, load_timeseries_csv, run_experiment
from .datagen import GenConfig, NoiseSpec, TimeSeriesPanel, draw_stationary, generate_ground_truth, lag_stack, simulate
from .errors import ConfigError, DataError, DbnError, ExplosiveProcessError, GenerationError
from .graph import Cycle, DbnGraph, EdgeSupport, find_cycles, is_acyclic
from .metrics import MetricReport, best_delta_sweep, evaluate
from .objective import L1, L2_LITERAL_ABS, L2_SQUARED, MiqpInstance, RegMode, build_instance, score
from .oracle import exhaustive_min
from .solver import CutStrategy, SolveReport, SolverConfig, solve

__all__ = [
    "ExperimentConfig", "fit", "load_timeseries_csv", "run_experiment",
    "GenConfig", "NoiseSpec", "TimeSeriesPanel", "draw_stationary", "generate_ground_truth", "lag_stack", "simulate",
    "ConfigError", "DataError", "DbnError", "ExplosiveProcessError", "GenerationError",
    "Cycle", "DbnGraph", "EdgeSupport", "find_cycles", "is_acyclic",
    "MetricReport", "best_delta_sweep", "evaluate",
    "L1", "L2_LITERAL_ABS", "L2_SQUARED", "MiqpInstance", "RegMode", "build_instance", "score",
    "exhaustive_min",
    "CutStrategy", "SolveReport", "SolverConfig", "solve",
]
