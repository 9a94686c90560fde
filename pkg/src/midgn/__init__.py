"""Multi-view intent-disentangling graph networks for bundle recommendation, in numpy."""

__version__ = "0.1.0"

from .data import (
    BundleDataset,
    InteractionMatrix,
    SplitDataset,
    load_dataset,
    load_interactions,
    save_dataset,
    sample_triples,
    split_interactions,
    validate_stats,
)
from .graph import BipartiteGraph, build_bipartite, neighbors
from .metrics import RankingReport, evaluate, ndcg_at_k, recall_at_k
from .model import ModelConfig, build_graphs, full_forward, score_pairs, train_epoch
from .params import ParameterStore, init_parameters, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_synthetic, intent_alignment, save_synthetic
from .training import fit
