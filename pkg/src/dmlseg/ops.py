"""Forward/backward implementations of the network's operation set.

Convolution uses a strided window view plus tensordot (im2col without the
copy); max pooling saves argmax indices so backward can route gradients to
the winning element, ties to the lowest linear index.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor, push_node


def _window_view(padded: np.ndarray, kh: int, kw: int, stride: int,
                 dilation: int, h_out: int, w_out: int) -> np.ndarray:
    """View of shape (N, C, kh, kw, h_out, w_out) over a padded array."""
    n, c, _, _ = padded.shape
    sn, sc, sh, sw = padded.strides
    return np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, kh, kw, h_out, w_out),
        strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, *, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with dilation, zero padding and bias.

    weight is (C_out, C_in, kH, kW); bias is (C_out,) stored as
    (1, C_out, 1, 1).
    """
    n, c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ConfigError(f"conv2d: input has {c_in} channels, weight expects {c_in_w}")
    if bias.shape != (1, c_out, 1, 1):
        raise ConfigError(f"conv2d: bias shape {bias.shape} != (1, {c_out}, 1, 1)")
    eff_h = (kh - 1) * dilation + 1
    eff_w = (kw - 1) * dilation + 1
    hp, wp = h + 2 * padding, w + 2 * padding
    if eff_h > hp or eff_w > wp:
        raise ConfigError(
            f"conv2d: effective kernel {eff_h}x{eff_w} exceeds padded input {hp}x{wp}")
    h_out = (hp - eff_h) // stride + 1
    w_out = (wp - eff_w) // stride + 1

    if padding > 0:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data
    cols = _window_view(padded, kh, kw, stride, dilation, h_out, w_out)
    # (N, h_out, w_out, C_out) <- sum over (C_in, kh, kw)
    out_data = np.tensordot(cols, weight.data, axes=([1, 2, 3], [1, 2, 3]))
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    out_data += bias.data
    if not np.isfinite(out_data).all():
        raise NumericError("conv2d produced non-finite values")

    requires = x.requires_grad or weight.requires_grad or bias.requires_grad
    out = Tensor(out_data, requires_grad=requires)

    def backward_fn(g: np.ndarray) -> None:
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3), keepdims=True))
        if weight.requires_grad:
            # (C_out, C_in, kh, kw) <- sum over (N, h_out, w_out)
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
            weight.accumulate_grad(gw)
        if x.requires_grad:
            # gradient w.r.t. every window element, then scatter-add back
            gcols = np.tensordot(g, weight.data, axes=([1], [0]))  # (N, ho, wo, C_in, kh, kw)
            gpad = np.zeros((n, c_in, hp, wp), dtype=g.dtype)
            for u in range(kh):
                for v in range(kw):
                    gpad[:, :,
                         u * dilation:u * dilation + stride * h_out:stride,
                         v * dilation:v * dilation + stride * w_out:stride] += \
                        gcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            if padding > 0:
                x.accumulate_grad(gpad[:, :, padding:-padding, padding:-padding])
            else:
                x.accumulate_grad(gpad)

    push_node((x, weight, bias), out, backward_fn)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), requires_grad=x.requires_grad)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    push_node((x,), out, backward_fn)
    return out


def maxpool2d(x: Tensor, *, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Sliding-window max with -inf padding semantics."""
    n, c, h, w = x.shape
    if kernel < 1:
        raise ConfigError(f"maxpool2d: kernel must be >= 1, got {kernel}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kernel > hp or kernel > wp:
        raise ConfigError(f"maxpool2d: kernel {kernel} exceeds padded input {hp}x{wp}")
    h_out = (hp - kernel) // stride + 1
    w_out = (wp - kernel) // stride + 1
    if padding >= kernel:
        # first window would sit entirely in the padding band
        raise ConfigError(f"maxpool2d: padding {padding} >= kernel {kernel}")

    if padding > 0:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                        constant_values=-np.inf)
    else:
        padded = x.data
    view = np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, h_out, w_out, kernel, kernel),
        strides=(padded.strides[0], padded.strides[1],
                 padded.strides[2] * stride, padded.strides[3] * stride,
                 padded.strides[2], padded.strides[3]),
        writeable=False,
    )
    flat = view.reshape(n, c, h_out, w_out, kernel * kernel)
    arg = np.argmax(flat, axis=-1)  # first occurrence = lowest linear index
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward_fn(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        gpad = np.zeros((n, c, hp, wp), dtype=g.dtype)
        oh = np.arange(h_out)[:, None] * stride
        ow = np.arange(w_out)[None, :] * stride
        rows = oh[None, None] + arg // kernel
        cols = ow[None, None] + arg % kernel
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        flat_idx = ((nn * c + cc) * hp + rows) * wp + cols
        np.add.at(gpad.reshape(-1), flat_idx.reshape(-1), g.reshape(-1))
        if padding > 0:
            x.accumulate_grad(gpad[:, :, padding:-padding, padding:-padding])
        else:
            x.accumulate_grad(gpad)

    push_node((x,), out, backward_fn)
    return out


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each cell into a factor x factor block."""
    if factor < 1:
        raise ConfigError(f"upsample_nearest: factor must be >= 1, got {factor}")
    if factor == 1:
        out_data = x.data.copy()
    else:
        out_data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    out = Tensor(out_data, requires_grad=x.requires_grad)
    n, c, h, w = x.shape

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            if factor == 1:
                x.accumulate_grad(g)
            else:
                x.accumulate_grad(g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    push_node((x,), out, backward_fn)
    return out


def elementwise_sum(inputs: Sequence[Tensor]) -> Tensor:
    """Left-to-right elementwise sum of same-shaped tensors."""
    if len(inputs) < 1:
        raise ConfigError("elementwise_sum needs at least one input")
    shape = inputs[0].shape
    for t in inputs[1:]:
        if t.shape != shape:
            raise ConfigError(f"elementwise_sum: shape {t.shape} != {shape}")
    out_data = inputs[0].data.copy()
    for t in inputs[1:]:
        out_data += t.data
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))

    def backward_fn(g: np.ndarray) -> None:
        for t in inputs:
            if t.requires_grad:
                t.accumulate_grad(g)

    push_node(tuple(inputs), out, backward_fn)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    out = Tensor(x.data * c, requires_grad=x.requires_grad)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * c)

    push_node((x,), out, backward_fn)
    return out


def shift(x: Tensor, c: float) -> Tensor:
    """Add a python scalar; gradient passes through unchanged."""
    out = Tensor(x.data + c, requires_grad=x.requires_grad)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g)

    push_node((x,), out, backward_fn)
    return out


def reduce_sum(x: Tensor) -> Tensor:
    """Sum all elements into a (1, 1, 1, 1) scalar."""
    out = Tensor(x.data.sum().reshape(1, 1, 1, 1), requires_grad=x.requires_grad)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g.reshape(())))

    push_node((x,), out, backward_fn)
    return out
