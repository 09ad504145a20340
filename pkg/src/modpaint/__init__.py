"""Mask-aware image inpainting: model, training loop, and file formats.

The public surface is re-exported here; submodules stay importable for
the finer-grained pieces (tensor ops, spectral blocks, mask math).
"""

from .config import ConfigError, RunConfig, config_from_dict, load_config
from .generator import Discriminator, Generator, GeneratorConfig
from .maskgen import MaskConfig, sample_object_aware_mask
from .prng import Prng
from .tensor import AutodiffError, Tensor, grad, no_record, set_precision, tape
from .training import (
    Adam,
    TrainingConfig,
    TrainingDiverged,
    load_generator,
    load_run_checkpoint,
    save_run_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AutodiffError",
    "ConfigError",
    "Discriminator",
    "Generator",
    "GeneratorConfig",
    "MaskConfig",
    "Prng",
    "RunConfig",
    "Tensor",
    "TrainingConfig",
    "TrainingDiverged",
    "config_from_dict",
    "grad",
    "load_config",
    "load_generator",
    "load_run_checkpoint",
    "no_record",
    "sample_object_aware_mask",
    "save_run_checkpoint",
    "set_precision",
    "tape",
    "train",
    "__version__",
]
