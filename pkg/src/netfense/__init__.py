"""Budgeted edge perturbation that hides a private node attribute from GCN inference
while keeping target-label predictions intact."""

from .defense import DefenseConfig, PerturbationPlan, multi_target_defense, single_target_defense
from .errors import ConfigError, DataError, NetfenseError, NumericError, StateError
from .gcn import GcnModel, build_normalized, train_gcn
from .graph import AttributedGraph, DataSplit, EdgeFlip, LabelSet, apply_flip, generate_sbm, load_graph
from .ppr import build_ppr

__all__ = [
    "AttributedGraph",
    "ConfigError",
    "DataError",
    "DataSplit",
    "DefenseConfig",
    "EdgeFlip",
    "GcnModel",
    "LabelSet",
    "NetfenseError",
    "NumericError",
    "PerturbationPlan",
    "StateError",
    "apply_flip",
    "build_normalized",
    "build_ppr",
    "generate_sbm",
    "load_graph",
    "multi_target_defense",
    "single_target_defense",
    "train_gcn",
]
