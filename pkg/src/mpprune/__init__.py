"""Distributed closeness-centrality pruning under multi-packet messaging.

Simulates the pruning protocol in its original form and with silent leaves,
over lossy links with Go-Back-N retransmission, and compares both against
the exact closeness oracle.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .graph import (GeometricSpec, Graph, GraphError, diameter, dump, exact_closeness, exact_leader,
                    generate_geometric, hop_distance, load_edge_list, load_graph)
from .protocol import AppMessage, NodeState, Variant, init_state
from .simnet import RunMetrics, SimConfig, run_simulation, select_most_central
from .transport import GbnReceiver, GbnSender, Packet, assemble, fragment
from .experiment import ExperimentPlan, PairedSample, QualityRecord, quality_sweep, run_plan, summarize
from .stats import effect_size, wilcoxon_signed_rank

__all__ = [
    "GeometricSpec", "Graph", "GraphError", "diameter", "dump", "exact_closeness", "exact_leader",
    "generate_geometric", "hop_distance", "load_edge_list", "load_graph",
    "AppMessage", "NodeState", "Variant", "init_state",
    "RunMetrics", "SimConfig", "run_simulation", "select_most_central",
    "GbnReceiver", "GbnSender", "Packet", "assemble", "fragment",
    "ExperimentPlan", "PairedSample", "QualityRecord", "quality_sweep", "run_plan", "summarize",
    "effect_size", "wilcoxon_signed_rank",
]
