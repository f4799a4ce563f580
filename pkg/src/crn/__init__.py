"""Cascaded refinement network for point-cloud completion, on a numpy autodiff core."""

from .config import NetConfig, RunConfig, TrainConfig
from .tensor import Tensor, backward

__all__ = ["NetConfig", "RunConfig", "TrainConfig", "Tensor", "backward"]
__version__ = "0.1.0"
