"""Differentiable layer primitives: convolutions, dense, activations, BCE.

Images are NCHW. Convolutions lower to one GEMM through an im2col view; the
scatter back (col2im) is a loop over kernel taps, which is also the forward
pass of the transposed convolution.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _send, as_tensor, check_finite

BCE_CLAMP = 1e-7


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """(before, after) padding giving ``ceil(size / stride)`` outputs.

    Odd totals put the extra row after, as TensorFlow does.
    """
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    if padding == "valid":
        if size < kernel:
            raise ShapeError(f"valid convolution: input {size} smaller than kernel {kernel}")
        return (size - kernel) // stride + 1
    raise ValueError(f"unknown padding mode {padding!r}")


def _pads(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    if padding == "same":
        return same_padding(h, kh, stride), same_padding(w, kw, stride)
    return (0, 0), (0, 0)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pads) -> tuple[np.ndarray, int, int]:
    """Rows are output positions (n, i, j); columns are (di, dj, c)."""
    (pt, pb), (pl, pr) = pads
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 4, 5, 1).reshape(n * ho * wo, kh * kw * c)
    return cols, ho, wo


def _col2im(cols: np.ndarray, xshape: tuple, kh: int, kw: int, stride: int,
            pads, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = xshape
    (pt, pb), (pl, pr) = pads
    hp, wp = h + pt + pb, w + pl + pr
    # accumulate channel-last so every tap adds contiguous slabs
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    blocks = cols.reshape(n, ho, wo, kh, kw, c)
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    for di in range(kh):
        for dj in range(kw):
            out[:, di:di + he:stride, dj:dj + we:stride] += blocks[:, :, :, di, dj]
    return out[:, pt:pt + h, pl:pl + w].transpose(0, 3, 1, 2)


def _check_conv(x: Tensor, k: Tensor, b: Tensor | None, in_axis: int, name: str):
    if x.ndim != 4:
        raise ShapeError(f"{name}: input must be N x C x H x W, got {x.shape}")
    if k.ndim != 4:
        raise ShapeError(f"{name}: kernel must be 4-D, got {k.shape}")
    if x.shape[1] != k.shape[in_axis]:
        raise ShapeError(
            f"{name}: input has {x.shape[1]} channels but kernel {k.shape} expects {k.shape[in_axis]}")
    out_ch = k.shape[1 - in_axis]
    if b is not None and b.shape != (out_ch,):
        raise ShapeError(f"{name}: bias shape {b.shape} != ({out_ch},)")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D cross-correlation; ``kernel`` is out_ch x in_ch x kh x kw."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    bias = None if bias is None else as_tensor(bias)
    _check_conv(x, kernel, bias, 1, "conv2d")
    if stride < 1:
        raise ValueError("stride must be positive")
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    conv_output_size(h, kh, stride, padding)
    conv_output_size(w, kw, stride, padding)
    pads = _pads(h, w, kh, kw, stride, padding)
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pads)
    k2 = kernel.data.transpose(0, 2, 3, 1).reshape(o, -1)
    out = cols @ k2.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if kernel.requires_grad:
            _send(kernel, (g2.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2))
        if bias is not None and bias.requires_grad:
            _send(bias, g2.sum(axis=0))
        if x.requires_grad:
            _send(x, _col2im(g2 @ k2, x.shape, kh, kw, stride, pads, ho, wo))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._make(np.ascontiguousarray(out), parents, bw, "conv2d")


def conv2d_transpose(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                     stride: int = 1) -> Tensor:
    """Adjoint of a "same" ``conv2d`` with respect to its input.

    ``kernel`` is in_ch x out_ch x kh x kw: the very array a forward conv from
    out_ch to in_ch channels would use. Output spatial size is input x stride.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    bias = None if bias is None else as_tensor(bias)
    _check_conv(x, kernel, bias, 0, "conv2d_transpose")
    if stride < 1:
        raise ValueError("stride must be positive")
    n, i_ch, h, w = x.shape
    _, o, kh, kw = kernel.shape
    H, W = h * stride, w * stride
    pads = _pads(H, W, kh, kw, stride, "same")
    k2 = kernel.data.transpose(0, 2, 3, 1).reshape(i_ch, -1)
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, i_ch)
    out = _col2im(x2 @ k2, (n, o, H, W), kh, kw, stride, pads, h, w)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def bw(g):
        cols, _, _ = _im2col(g, kh, kw, stride, pads)
        if kernel.requires_grad:
            _send(kernel, (x2.T @ cols).reshape(i_ch, kh, kw, o).transpose(0, 3, 1, 2))
        if bias is not None and bias.requires_grad:
            _send(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            _send(x, (cols @ k2.T).reshape(n, h, w, i_ch).transpose(0, 3, 1, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._make(np.ascontiguousarray(out), parents, bw, "conv2d_transpose")


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped in_features x out_features."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    out = x @ weight
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense: bias shape {bias.shape} != ({weight.shape[1]},)")
        out = out + bias
    check_finite(out.data, "dense")
    return out


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: _send(x, g * mask))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return Tensor._make(s, (x,), lambda g: _send(x, g * s * (1.0 - s)))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind in ("linear", "none"):
        return as_tensor(x)
    raise ValueError(f"unknown activation {kind!r}")


def bce_loss(output: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; ``output`` is clamped to [1e-7, 1 - 1e-7]."""
    output = as_tensor(output)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=output.dtype)
    if output.shape != t.shape:
        raise ShapeError(f"bce_loss: output {output.shape} vs target {t.shape}")
    o = output.data
    oc = np.clip(o, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = o.size
    val = -(t * np.log(oc) + (1.0 - t) * np.log1p(-oc)).sum() / n
    inside = (o >= BCE_CLAMP) & (o <= 1.0 - BCE_CLAMP)

    def bw(g):
        _send(output, g * inside * (oc - t) / (oc * (1.0 - oc)) / n)

    return Tensor._make(np.asarray(val, dtype=o.dtype), (output,), bw, "bce_loss")


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)
