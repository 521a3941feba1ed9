"""Convolution, transposed convolution, resampling and FFT primitives.

All arrays are float64. Spatial operators accept either a single ``[C, H, W]``
tensor or a batch ``[B, C, H, W]`` and return the same rank they were given.
Stride and padding follow cross-correlation (PyTorch-style) conventions;
``pad_mode="circular"`` treats the image as a torus.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PAD_MODES = ("zeros", "circular")


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [B,C,H,W], got shape {x.shape}")


def _unbatch(x: np.ndarray, squeeze: bool) -> np.ndarray:
    return x[0] if squeeze else x


def _check_mode(pad_mode: str) -> None:
    if pad_mode not in PAD_MODES:
        raise ValueError(f"pad_mode must be one of {PAD_MODES}, got {pad_mode!r}")


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _fold_matrix(length: int, n: int, offset: int, pad_mode: str) -> np.ndarray:
    """0/1 matrix mapping a padded axis of ``length`` back onto ``n`` samples."""
    src = np.arange(length) - offset
    fold = np.zeros((length, n))
    if pad_mode == "circular":
        fold[np.arange(length), src % n] = 1.0
    else:
        keep = (src >= 0) & (src < n)
        fold[np.arange(length)[keep], src[keep]] = 1.0
    return fold


def pad2d(x: np.ndarray, padding: int, pad_mode: str = "zeros") -> np.ndarray:
    _check_mode(pad_mode)
    if padding == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (padding, padding)]
    return np.pad(x, width, mode="wrap" if pad_mode == "circular" else "constant")


def pad2d_adjoint(g: np.ndarray, padding: int, pad_mode: str, hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of :func:`pad2d`: sums padded contributions back onto the source grid."""
    h, w = hw
    if padding == 0:
        return g
    if pad_mode == "zeros":
        return g[..., padding:padding + h, padding:padding + w]
    fh = _fold_matrix(g.shape[-2], h, padding, pad_mode)
    fw = _fold_matrix(g.shape[-1], w, padding, pad_mode)
    return np.matmul(np.matmul(fh.T, g), fw)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :ho, :wo]


def _check_conv(x4: np.ndarray, weight: np.ndarray, stride: int, padding: int) -> tuple[int, int]:
    if weight.ndim != 4:
        raise ShapeError(f"weight must be [C_out,C_in,k,k], got {weight.shape}")
    if x4.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"input has {x4.shape[1]} channels but weight expects {weight.shape[1]}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    ho = conv_output_size(x4.shape[2], weight.shape[2], stride, padding)
    wo = conv_output_size(x4.shape[3], weight.shape[3], stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(
            f"non-positive output size {ho}x{wo} for input {x4.shape[2:]} "
            f"kernel {weight.shape[2:]} stride {stride} padding {padding}")
    return ho, wo


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, pad_mode: str = "zeros"):
    """2D cross-correlation. ``weight`` is ``[C_out, C_in, kh, kw]``."""
    x4, squeeze = _batched(x)
    weight = np.asarray(weight, dtype=np.float64)
    ho, wo = _check_conv(x4, weight, stride, padding)
    win = _windows(pad2d(x4, padding, pad_mode), weight.shape[2], weight.shape[3], stride, ho, wo)
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + np.asarray(bias)[None, :, None, None]
    return _unbatch(np.ascontiguousarray(out), squeeze)


def conv2d_input_adjoint(g, weight, stride: int, padding: int, pad_mode: str, in_hw):
    """Apply the transpose of ``x -> conv2d(x, weight)`` for inputs of spatial size ``in_hw``."""
    g4, squeeze = _batched(g)
    weight = np.asarray(weight, dtype=np.float64)
    _check_mode(pad_mode)
    h, w = in_hw
    kh, kw = weight.shape[2], weight.shape[3]
    ho, wo = g4.shape[2], g4.shape[3]
    if (conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)) != (ho, wo):
        raise ShapeError(f"gradient of size {ho}x{wo} does not match a conv2d of input {h}x{w}")
    if g4.shape[1] != weight.shape[0]:
        raise ShapeError(f"gradient has {g4.shape[1]} channels, weight produces {weight.shape[0]}")
    cols = np.tensordot(g4, weight, axes=([1], [0]))  # B, ho, wo, C, kh, kw
    buf = np.zeros((g4.shape[0], weight.shape[1], h + 2 * padding, w + 2 * padding))
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for a in range(kh):
        for b in range(kw):
            buf[:, :, a:a + span_h:stride, b:b + span_w:stride] += cols[..., a, b].transpose(0, 3, 1, 2)
    return _unbatch(pad2d_adjoint(buf, padding, pad_mode, (h, w)), squeeze)


def conv2d_weight_grad(x, g, kernel_hw, stride: int, padding: int, pad_mode: str):
    """Gradient of ``<conv2d(x, W), g>`` with respect to ``W``."""
    x4, _ = _batched(x)
    g4, _ = _batched(g)
    kh, kw = kernel_hw
    win = _windows(pad2d(x4, padding, pad_mode), kh, kw, stride, g4.shape[2], g4.shape[3])
    return np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0, pad_mode: str = "zeros"):
    """Transposed convolution producing an output of size ``stride * H``.

    Defined as the exact adjoint of ``conv2d(., weight, stride, padding)`` acting
    on inputs of size ``stride * H``; ``weight`` is ``[C_in, C_out, kh, kw]``,
    i.e. the same array a forward conv2d from ``C_out`` to ``C_in`` channels uses.
    """
    x4, squeeze = _batched(x)
    weight = np.asarray(weight, dtype=np.float64)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if weight.ndim != 4 or weight.shape[0] != x4.shape[1]:
        raise ShapeError(f"weight {getattr(weight, 'shape', None)} incompatible with input channels {x4.shape[1]}")
    out_hw = (stride * x4.shape[2], stride * x4.shape[3])
    out = conv2d_input_adjoint(x4, weight, stride, padding, pad_mode, out_hw)
    if bias is not None:
        out = out + np.asarray(bias)[None, :, None, None]
    return _unbatch(out, squeeze)


def avg_pool2x(x):
    """2x2 average pooling over the last two axes."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"average pooling needs even spatial size, got {h}x{w}")
    return x.reshape(*x.shape[:-2], h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


def nearest_up2x(x):
    x = np.asarray(x, dtype=np.float64)
    return x.repeat(2, axis=-2).repeat(2, axis=-1)


def _bilinear_axis(x: np.ndarray, axis: int, boundary: str) -> np.ndarray:
    if boundary == "wrap":
        prev, nxt = np.roll(x, 1, axis=axis), np.roll(x, -1, axis=axis)
    elif boundary == "edge":
        n = x.shape[axis]
        idx = np.arange(n)
        prev = np.take(x, np.maximum(idx - 1, 0), axis=axis)
        nxt = np.take(x, np.minimum(idx + 1, n - 1), axis=axis)
    else:
        raise ValueError(f"boundary must be 'wrap' or 'edge', got {boundary!r}")
    even = 0.75 * x + 0.25 * prev
    odd = 0.75 * x + 0.25 * nxt
    out = np.stack([even, odd], axis=axis + 1 if axis >= 0 else axis)
    shape = list(x.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def bilinear_up2x(x, boundary: str = "wrap"):
    """Separable 2x bilinear interpolation with half-pixel sample alignment.

    Output sample ``j`` sits at input coordinate ``j/2 - 1/4``, the geometry that
    inverts 2x2 average pooling; linear ramps are reproduced exactly away from
    the boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    return _bilinear_axis(_bilinear_axis(x, x.ndim - 2, boundary), x.ndim - 1, boundary)


def fft2(x):
    """Unnormalised 2D DFT over the last two axes."""
    x = np.asarray(x)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ShapeError(f"fft2 needs at least a [h, w] array, got {x.shape}")
    return np.fft.fft2(x, axes=(-2, -1))


def ifft2(spectrum):
    """Inverse of :func:`fft2` (carries the 1/(hw) factor)."""
    return np.fft.ifft2(spectrum, axes=(-2, -1))


def frequency_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer DFT frequencies ``(fy, fx)`` on an ``h x w`` grid, numpy FFT ordering."""
    fy = np.fft.fftfreq(h, d=1.0 / h)
    fx = np.fft.fftfreq(w, d=1.0 / w)
    return np.meshgrid(fy, fx, indexing="ij")
