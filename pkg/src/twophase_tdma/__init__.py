"""Two-phase distributed TDMA scheduling: randomized slot acquisition followed by anytime compaction."""

from .dslr import DslrNode, DslrSimulation, Phase2Result, run_phase2
from .oracle import Schedule, brute_force_optimum, greedy_coloring, verify_feasible
from .rdtdma import RdTdmaConfig, RdTdmaNode, run_phase1
from .simcore import ChannelConfig, Engine, Message
from .topology import Topology, generate_random, interference_graph, two_hop

__all__ = [
    "ChannelConfig",
    "DslrNode",
    "DslrSimulation",
    "Engine",
    "Message",
    "Phase2Result",
    "RdTdmaConfig",
    "RdTdmaNode",
    "Schedule",
    "Topology",
    "brute_force_optimum",
    "generate_random",
    "greedy_coloring",
    "interference_graph",
    "run_phase1",
    "run_phase2",
    "two_hop",
]

__version__ = "0.1.0"
