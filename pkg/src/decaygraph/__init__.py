"""Decay-aware bipartite graph learning for irregular multivariate time series."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward
from .data import Dataset, Episode, SyntheticConfig, load_dataset, split_dataset, synthesize
from .model import AblationFlags, DecayGraphClassifier, ModelConfig

__all__ = [
    "Tensor",
    "backward",
    "Dataset",
    "Episode",
    "SyntheticConfig",
    "load_dataset",
    "split_dataset",
    "synthesize",
    "AblationFlags",
    "DecayGraphClassifier",
    "ModelConfig",
    "__version__",
]
