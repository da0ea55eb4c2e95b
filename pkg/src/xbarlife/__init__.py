"""Lifespan simulator and offline scheduler for ReRAM crossbar DNN accelerators."""

from .arch import AcceleratorConfig, CellAddress, CrossbarState, EnduranceModel, WearCounters
from .engine import SimPolicy, SimReport, compare, inference_latency, run
from .faults import (Decision, FaultLedger, FaultToleranceProfile, ToyEvaluator, affected_layers,
                     assess, estimate_thresholds)
from .scheduler import (BindingPlan, PlanInfeasible, bind, compute_batch_size,
                        reassign_spare_column, schedule)
from .transpose import permutation_cycles, transpose_check, transposed_index
from .wear_leveling import WlPolicy
from .workload import Layer, LayerKind, NetworkGraph, build_encoder_block, build_encoder_stack, validate_graph

__version__ = "0.1.0"

__all__ = [
    "AcceleratorConfig", "CellAddress", "CrossbarState", "EnduranceModel", "WearCounters",
    "SimPolicy", "SimReport", "compare", "inference_latency", "run",
    "Decision", "FaultLedger", "FaultToleranceProfile", "ToyEvaluator", "affected_layers", "assess",
    "estimate_thresholds", "BindingPlan", "PlanInfeasible", "bind", "compute_batch_size",
    "reassign_spare_column", "schedule", "permutation_cycles", "transpose_check", "transposed_index",
    "WlPolicy", "Layer", "LayerKind", "NetworkGraph", "build_encoder_block", "build_encoder_stack",
    "validate_graph",
]
