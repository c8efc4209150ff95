"""tetrisphase: spin-model phase detection with a sparse multi-kernel CNN
and symbolic distillation of the learned order parameters."""

from . import analysis, correlators, nn_core, spin_models, tetriscnn
from .config import ExperimentConfig, load_config
from .correlators import KernelSpec
from .spin_models import IgtParams, SpinDataset, TfimParams
from .tetriscnn import TetrisConfig, TetrisModel, build, train

__all__ = [
    "analysis",
    "correlators",
    "nn_core",
    "spin_models",
    "tetriscnn",
    "ExperimentConfig",
    "load_config",
    "KernelSpec",
    "IgtParams",
    "SpinDataset",
    "TfimParams",
    "TetrisConfig",
    "TetrisModel",
    "build",
    "train",
]

__version__ = "0.1.0"
