"""CPU tensor stack: kernel backends, autodiff tape, ops and layers."""

from .autodiff import Tensor, as_tensor, no_grad
from .backend import BACKEND_NAME, USE_COMPILED, col2im, get_backend, im2col
from .layers import Conv2d, GroupNorm, Linear, Module

__all__ = [
    "Tensor", "as_tensor", "no_grad",
    "BACKEND_NAME", "USE_COMPILED", "im2col", "col2im", "get_backend",
    "Module", "Conv2d", "Linear", "GroupNorm",
]
