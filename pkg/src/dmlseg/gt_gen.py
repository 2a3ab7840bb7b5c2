"""Ground truth for dense multi-label supervision.

A segmentation mask is turned into per-class binary channels, then each
channel is dilated with a centered window (sliding max, borders clipped)
and sampled on the coarser grid the multi-label heads predict on.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError

IGNORE = 255


def binarize_channels(mask: np.ndarray, num_classes: int) -> np.ndarray:
    """(H, W) class indices -> (K, H, W) {0,1} stack; ignore is 0 everywhere."""
    bad = (mask >= num_classes) & (mask != IGNORE)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise DataError(f"mask value {int(mask[y, x])} at pixel ({y}, {x}) "
                        f"is outside 0..{num_classes - 1}")
    return (mask[None, :, :] == np.arange(num_classes)[:, None, None]).astype(np.uint8)


def dilate_window(binary: np.ndarray, window: int, out_stride: int) -> np.ndarray:
    """Per-channel window max, centered, clipped at borders, strided output.

    Output cell (r, c) looks at the window centered on mask pixel
    (r*s + (s-1)//2, c*s + (s-1)//2).  Zero padding is equivalent to
    clipping for binary input.
    """
    if window % 2 == 0 or window < 1:
        raise ConfigError(f"dilation window must be odd and positive, got {window}")
    k, h, w = binary.shape
    if h % out_stride or w % out_stride:
        raise ConfigError(f"mask size {h}x{w} not divisible by stride {out_stride}")
    half = (window - 1) // 2
    off = (out_stride - 1) // 2
    if window == 1 and out_stride == 1:
        return binary.copy()
    padded = np.pad(binary, ((0, 0), (half, half), (half, half)))
    sk, sh, sw = padded.strides
    view = np.lib.stride_tricks.as_strided(
        padded,
        shape=(k, h, w, window, window),
        strides=(sk, sh, sw, sh, sw),
        writeable=False,
    )
    full = view.max(axis=(3, 4))
    return np.ascontiguousarray(full[:, off::out_stride, off::out_stride])


def effective_window(window: int, stride: int) -> int:
    """Mask-grid extent of a window defined on a grid `stride` times coarser.

    A window of w cells spans stride*w pixels; the centered odd window
    closest to that extent is stride*w - 1 when the stride is even.
    """
    return stride * window if stride % 2 else stride * window - 1


def downsample_mask(mask: np.ndarray, factor: int, num_classes: int) -> np.ndarray:
    """Majority-vote decimation; ignore excluded, ties to the lowest class,
    all-ignore cells stay ignore."""
    if factor == 1:
        return mask.copy()
    h, w = mask.shape
    if h % factor or w % factor:
        raise ConfigError(f"mask size {h}x{w} not divisible by factor {factor}")
    blocks = (mask.reshape(h // factor, factor, w // factor, factor)
                  .transpose(0, 2, 1, 3)
                  .reshape(h // factor, w // factor, factor * factor))
    counts = np.stack([(blocks == c).sum(axis=2) for c in range(num_classes)])
    out = counts.argmax(axis=0).astype(mask.dtype)
    out[counts.sum(axis=0) == 0] = IGNORE
    return out


def gen_multilabel_gt(mask: np.ndarray, config) -> list[np.ndarray]:
    """One (K, H_dml, W_dml) presence target per level from a full-size mask.

    The mask is first decimated to the backbone output grid; window sizes
    are defined on the multi-label grid and mapped to their extent there.
    """
    h, w = mask.shape
    s_low = config.s_low
    if h % s_low or w % s_low:
        raise ConfigError(f"mask size {h}x{w} not divisible by backbone stride {s_low}")
    grid_mask = downsample_mask(mask, s_low, config.num_classes)
    return multilabel_from_grid_mask(grid_mask, config)


def multilabel_from_grid_mask(grid_mask: np.ndarray, config) -> list[np.ndarray]:
    """Targets from a mask already at the backbone output grid."""
    s = config.dml_extra_stride
    h, w = grid_mask.shape
    if h % s or w % s:
        raise ConfigError(f"grid mask {h}x{w} not divisible by extra stride {s}")
    binary = binarize_channels(grid_mask, config.num_classes)
    return [dilate_window(binary, effective_window(wj, s), s)
            for wj in config.window_sizes]
