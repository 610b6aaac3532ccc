"""Wireless erasure networks with destination-ack feedback.

Cut-set analysis, an exact Markov model of randomized packet forwarding,
Lyapunov drift checks, and a seeded simulator with a compiled kernel.
"""

from . import _backend
from .topology import (
    ReceptionModel,
    Topology,
    TopologyError,
    cut_capacity,
    fig4_topology,
    insert_feedback_delay_chain,
    load_topology,
    min_cut,
    validate,
)
from .protocol import SimConfig, aggregate_trials, run

BACKEND = _backend.NAME

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ReceptionModel", "SimConfig", "Topology", "TopologyError",
    "aggregate_trials", "cut_capacity", "fig4_topology", "insert_feedback_delay_chain",
    "load_topology", "min_cut", "run", "validate",
]
