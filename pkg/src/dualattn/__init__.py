"""Dual (affinity + difference) attention with adaptive fusion, at toy scale."""
from .attention import DualAttention, DualAttentionConfig, affinity_attention, difference_attention
from .fusion import FusionParams, adaptive_fuse
from .model import ModelConfig, PairClassifier
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "DualAttention", "DualAttentionConfig", "FusionParams", "ModelConfig", "PairClassifier",
    "Tensor", "adaptive_fuse", "affinity_attention", "difference_attention",
]
