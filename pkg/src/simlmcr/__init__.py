"""Non-negative MCR-ALS with shift-invariant multi-linearity (SIML) for
multi-sample GC×GC-MS tensors."""

from .denoise import DenoiseConfig, denoise
from .mcr import FitOptions, Model, fit, load_model, multi_start, save_model
from .metrics import evaluate, match_components, var_explained
from .siml import SimlConfig, apply_siml
from .simulate import SimConfig, generate
from .tensor import AugmentedMatrix, Gc2Dataset, augment, read_container, unaugment, write_container

__version__ = "0.1.0"

__all__ = [
    "AugmentedMatrix",
    "DenoiseConfig",
    "FitOptions",
    "Gc2Dataset",
    "Model",
    "SimConfig",
    "SimlConfig",
    "apply_siml",
    "augment",
    "denoise",
    "evaluate",
    "fit",
    "generate",
    "load_model",
    "match_components",
    "multi_start",
    "read_container",
    "save_model",
    "unaugment",
    "var_explained",
    "write_container",
]
