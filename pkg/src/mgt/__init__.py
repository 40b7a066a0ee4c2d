"""Multi-scale geometry-aware transformer for 3D point cloud
classification, built on a minimal reverse-mode autodiff core."""

from .attention import AttentionConfig
from .autodiff import Tensor
from .errors import ConfigError, FormatError, NumericError
from .estimator import MgtClassifier
from .geometry import PointCloud, ScaleConfig
from .gradcheck import grad_check
from .model import MgtModel, ModelConfig, predict
from .training import TrainConfig, evaluate, train

__all__ = [
    "AttentionConfig", "ConfigError", "FormatError", "MgtClassifier",
    "MgtModel", "ModelConfig", "NumericError", "PointCloud", "ScaleConfig",
    "Tensor", "TrainConfig", "evaluate", "grad_check", "predict", "train",
]

__version__ = "0.1.0"
