"""Hierarchical minimax decomposition and JLW routing simulation for the supermarket model."""
from .decomposition import (
    Decomposition,
    ReducedSystem,
    bonded_components,
    brute_force_decompose,
    decompose,
    harmonic_drift,
    minimax_value,
    pin_cluster,
    reduce,
    restricted_drift,
    synthesize_witness,
)
from .model import Instance, StaticPolicy, load_instance, policy_graph, static_drift, validate
from .simulator import SimConfig, Trajectory, coupled_run, jlw_route, properly_clustered, run, shape_statistic, step

__all__ = [
    "Decomposition",
    "Instance",
    "ReducedSystem",
    "SimConfig",
    "StaticPolicy",
    "Trajectory",
    "bonded_components",
    "brute_force_decompose",
    "coupled_run",
    "decompose",
    "harmonic_drift",
    "jlw_route",
    "load_instance",
    "minimax_value",
    "pin_cluster",
    "policy_graph",
    "properly_clustered",
    "reduce",
    "restricted_drift",
    "run",
    "shape_statistic",
    "static_drift",
    "step",
    "synthesize_witness",
    "validate",
]
