"""Symbolic-label-guided human motion forecasting on a small numpy autodiff core.

Pose sequences are labelled per frame (by hand or by PCA + k-means on short
motion windows), a causal TCN recognises labels over the observed clip, a
GRU encoder-decoder forecasts future labels and a label-conditioned GRU
generator rolls out future poses.
"""
from .autodiff import Tape, Tensor, backward
from .models import ModelConfig, Normalizer, full_forward, init_params
from .training import TrainConfig, Trainer

__all__ = ["Tape", "Tensor", "backward", "ModelConfig", "Normalizer", "full_forward",
           "init_params", "TrainConfig", "Trainer"]
__version__ = "0.1.0"
