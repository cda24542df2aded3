"""Desk-scale pyramid feature alignment network for video deblurring.

numpy tensors with a reverse-mode tape, modulated deformable convolution,
structure-to-detail downsampling, cascade guided deformable alignment,
attention fusion, pyramid decoding, multi-scale losses and a synthetic
blur harness. Hot sampling kernels use numba when available; set
``PFAN_NO_NUMBA=1`` to force the pure numpy path.
"""

from .model import PFAN, ModelConfig, restore
from .tensor import ContractError, GradientTape, ShapeError, Tensor, backward, precision
from .train import ExperimentConfig, RunReport, evaluate, train

__all__ = [
    "PFAN",
    "ModelConfig",
    "restore",
    "Tensor",
    "GradientTape",
    "backward",
    "precision",
    "ShapeError",
    "ContractError",
    "ExperimentConfig",
    "RunReport",
    "train",
    "evaluate",
]

__version__ = "0.1.0"
