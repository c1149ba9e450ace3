"""Restrained branching random walks: exact simulation, monotone couplings,
moment equations, spectral phase parameters and regime experiments."""
from __future__ import annotations

__version__ = "0.1.0"

from .graph import Graph, Kernel, alpha_weights, build_graph, build_kernel, restrict_kernel
from .profiles import RateProfile, make_profile, truncate
from .simulate import Configuration, SimParams, Trajectory, run_replicas, run_sim, summarize

__all__ = [
    "Graph", "Kernel", "alpha_weights", "build_graph", "build_kernel", "restrict_kernel",
    "RateProfile", "make_profile", "truncate",
    "Configuration", "SimParams", "Trajectory", "run_replicas", "run_sim", "summarize",
]
