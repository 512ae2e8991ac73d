"""Hierarchical motion VAE prior for refinement, in-betweening and completion."""
from .hmvae import ArchConfig, HmVaeModel, TrainConfig, make_variant
from .skeleton import Skeleton, preset
from .tensor import Tensor

__all__ = ["ArchConfig", "HmVaeModel", "Skeleton", "Tensor", "TrainConfig", "make_variant", "preset"]
__version__ = "0.1.0"
