"""Convolution-free scene segmentation with multi-shifted-window attention."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, grad_check  # noqa: F401
