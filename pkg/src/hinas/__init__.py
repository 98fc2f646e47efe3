"""Differentiable hierarchical architecture search for image denoising and super-resolution."""
from .config import SearchConfig, TrainConfig
from .derive import CellGenotype, WidthPath, derive_cell, viterbi_widths
from .errors import ConfigError, NumericalError
from .losses import LossConfig, psnr, restoration_loss, ssim
from .search import SearchResult, run_search
from .supernet import RestorationTask, SuperNet
from .train import run_eval, run_train

__version__ = "0.1.0"

__all__ = [
    "CellGenotype",
    "ConfigError",
    "LossConfig",
    "NumericalError",
    "RestorationTask",
    "SearchConfig",
    "SearchResult",
    "SuperNet",
    "TrainConfig",
    "WidthPath",
    "derive_cell",
    "psnr",
    "restoration_loss",
    "run_eval",
    "run_search",
    "run_train",
    "ssim",
    "viterbi_widths",
]
