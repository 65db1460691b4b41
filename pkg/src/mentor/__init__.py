"""Multimodal graph recommender: propagated per-modality embeddings, frozen
item semantic graphs, Gaussian moment-matching alignment, and two
self-supervised feature-enhancement losses trained jointly with BPR."""

from .config import TrainConfig, parse_config
from .ingest import SplitDataset, apply_k_core, build_split, load_features, load_interactions
from .train import GraphBundle, make_bundle, train_loop

__all__ = [
    "TrainConfig",
    "parse_config",
    "SplitDataset",
    "apply_k_core",
    "build_split",
    "load_features",
    "load_interactions",
    "GraphBundle",
    "make_bundle",
    "train_loop",
]
