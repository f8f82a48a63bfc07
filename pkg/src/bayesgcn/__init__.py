"""Bayesian graph convolutional networks.

Node classification with a GCN ensemble whose members are trained on graphs
drawn from an assortative mixed-membership stochastic block model fitted to
the observed graph.
"""
__version__ = "0.1.0"

from .graph import (Dataset, DatasetFormatError, Graph, LabelSet, generate_sbm, load_dataset,
                    make_split, normalize_adjacency, planted_partition, save_dataset,
                    synthetic_dataset)
from .gcn import GcnnConfig, GcnnWeights, mc_dropout_predict, predict, train
from .mmsbm import (BlockParams, ExpandedParams, MmsbmHyper, init_from_softmax, map_inference,
                    to_block_params, to_expanded)
from .sampler import sample_graph
from .ensemble import EnsembleConfig, EnsemblePrediction, aggregate, run
from .attack import AttackConfig, classification_margin, run_attack_experiment

__all__ = [
    "Dataset", "DatasetFormatError", "Graph", "LabelSet", "generate_sbm", "load_dataset",
    "make_split", "normalize_adjacency", "planted_partition", "save_dataset", "synthetic_dataset",
    "GcnnConfig", "GcnnWeights", "mc_dropout_predict", "predict", "train",
    "BlockParams", "ExpandedParams", "MmsbmHyper", "init_from_softmax", "map_inference",
    "to_block_params", "to_expanded", "sample_graph",
    "EnsembleConfig", "EnsemblePrediction", "aggregate", "run",
    "AttackConfig", "classification_margin", "run_attack_experiment",
]
