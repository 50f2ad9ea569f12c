"""Desk-scale diffusion laboratory.

Training and sampling for v-prediction diffusion models on toy 2-D and
small-image datasets, with a zero-terminal-SNR schedule, a feature-distance
fine-tuning objective, classifier-free guidance, and analytic oracles for
verification.
"""

from .errors import (
    ConfigError,
    ContractError,
    DifflabError,
    DimensionError,
    NumericalError,
)
from .tensor import Tape, Tensor, backward

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "DifflabError",
    "DimensionError",
    "ContractError",
    "ConfigError",
    "NumericalError",
]

__version__ = "0.1.0"
