"""Pathfinder discovery networks: GCNs that learn their message-passing graph."""

from .dataset import GraphDataset
from .estimator import PathfinderClassifier, TieStrengthFeatures
from .models import build_model, load_checkpoint, save_checkpoint
from .sparse import CsrMatrix
from .synth import SyntheticConfig, generate
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CsrMatrix",
    "GraphDataset",
    "PathfinderClassifier",
    "SyntheticConfig",
    "TieStrengthFeatures",
    "TrainConfig",
    "build_model",
    "generate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
