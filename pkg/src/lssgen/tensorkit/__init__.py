"""Numerical substrate: float64 tensors as numpy arrays, conv layers with manual
backward passes, FFTs, seeded Gaussian streams and the LST1 container."""
from .gradcheck import GradCheckReport, grad_check
from .io import load_checkpoint, load_tensor, save_checkpoint, save_tensor
from .layers import Conv2d, ConvTranspose2d, Layer, Linear, ResBlock, Sequential, SiLU
from .ops import (ShapeError, avg_pool2x, bilinear_up2x, conv2d, conv_transpose2d, fft2,
                  ifft2, nearest_up2x)
from .optim import Adam
from .rng import Rng

__all__ = [
    "Adam", "Conv2d", "ConvTranspose2d", "GradCheckReport", "Layer", "Linear", "ResBlock",
    "Rng", "Sequential", "ShapeError", "SiLU", "avg_pool2x", "bilinear_up2x", "conv2d",
    "conv_transpose2d", "fft2", "grad_check", "ifft2", "load_checkpoint", "load_tensor",
    "nearest_up2x", "save_checkpoint", "save_tensor",
]
