"""Tensor, FFT, convolution, shuffle and windowing primitives.

Every feature map is a float64 ``numpy.ndarray`` laid out as N x C x H x W.
All functions here are pure: they never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "Spectrum",
    "WindowSet",
    "as_tensor",
    "fft2d",
    "inverse_fft2d",
    "pixel_shuffle",
    "pixel_unshuffle",
    "conv2d",
    "transposed_conv2d",
    "nn_interp",
    "coordinate_grid",
    "reflect_index",
    "window_indices",
    "window_partition",
    "window_merge",
    "overlap_window_size",
]


def as_tensor(x, ndim: int | None = None) -> np.ndarray:
    """Return ``x`` as a float64 array, optionally checking its rank."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-D tensor, got shape {arr.shape}")
    if any(s < 1 for s in arr.shape):
        raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
    return arr


# --------------------------------------------------------------------------
# Fourier transforms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    """Complex 2-D frequency plane of one real channel.

    ``dc_at_origin`` is True for the raw transform (bin (0, 0) holds the DC
    term) and False once the plane has been center-shifted for display.
    """

    values: np.ndarray
    dc_at_origin: bool = True

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def centered(self) -> "Spectrum":
        if not self.dc_at_origin:
            return self
        return Spectrum(np.fft.fftshift(self.values), dc_at_origin=False)

    def uncentered(self) -> "Spectrum":
        if self.dc_at_origin:
            return self
        return Spectrum(np.fft.ifftshift(self.values), dc_at_origin=True)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def fft2d(plane) -> Spectrum:
    """Unnormalized forward DFT of a single 2-D plane."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2 or min(plane.shape) < 1:
        raise ShapeError(f"fft2d expects a 2-D plane, got shape {plane.shape}")
    return Spectrum(np.fft.fft2(plane), dc_at_origin=True)


def inverse_fft2d(spec: Spectrum) -> np.ndarray:
    """Real part of the inverse DFT, normalized by 1/(UV)."""
    if not spec.dc_at_origin:
        raise ShapeError("inverse_fft2d needs a spectrum with DC at the origin")
    values = np.asarray(spec.values)
    if values.ndim != 2:
        raise ShapeError(f"spectrum must be 2-D, got shape {values.shape}")
    return np.fft.ifft2(values).real


# --------------------------------------------------------------------------
# Sub-pixel rearrangements
# --------------------------------------------------------------------------


def pixel_shuffle(x, r: int) -> np.ndarray:
    """Rearrange ``N x (r^2 C) x h x w`` into ``N x C x rh x rw``.

    ``out[n, c, r*i + a, r*j + b] == x[n, c*r*r + a*r + b, i, j]``.
    """
    x = as_tensor(x, 4)
    n, ch, h, w = x.shape
    if r < 1 or ch % (r * r):
        raise ShapeError(f"channel count {ch} is not divisible by r^2={r * r}")
    c = ch // (r * r)
    y = x.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return y.reshape(n, c, h * r, w * r)


def pixel_unshuffle(x, r: int) -> np.ndarray:
    """Exact inverse of :func:`pixel_shuffle`."""
    x = as_tensor(x, 4)
    n, c, hh, ww = x.shape
    if r < 1 or hh % r or ww % r:
        raise ShapeError(f"spatial extents {hh}x{ww} are not divisible by r={r}")
    h, w = hh // r, ww // r
    y = x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return y.reshape(n, c * r * r, h, w)


# --------------------------------------------------------------------------
# Convolutions and resampling
# --------------------------------------------------------------------------


def _conv_out_extent(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"non-integral conv output: extent {size}, kernel {k}, "
            f"stride {stride}, padding {padding}"
        )
    return span // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded 2-D cross-correlation (no kernel flip).

    ``weight`` has shape ``Cout x Cin x kh x kw``.
    """
    x = as_tensor(x, 4)
    weight = as_tensor(weight, 4)
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"input has {cin} channels, weight expects {cin_w}")
    oh = _conv_out_extent(h, kh, stride, padding)
    ow = _conv_out_extent(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :oh, :ow]
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64).reshape(1, cout, 1, 1)
    return np.ascontiguousarray(out)


def transposed_conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Scatter-form transposed convolution.

    ``weight`` has shape ``Cin x Cout x kh x kw`` (the layout of the conv it
    transposes). Output extent is ``(h - 1) * stride + k - 2 * padding``.
    """
    x = as_tensor(x, 4)
    weight = as_tensor(weight, 4)
    n, cin, h, w = x.shape
    cin_w, cout, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"input has {cin} channels, weight expects {cin_w}")
    fh, fw = (h - 1) * stride + kh, (w - 1) * stride + kw
    if fh - 2 * padding < 1 or fw - 2 * padding < 1:
        raise ShapeError("padding removes the whole transposed-conv output")
    full = np.zeros((n, cout, fh, fw))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(x, weight[:, :, i, j], axes=([1], [0]))
            full[:, :, i : i + stride * (h - 1) + 1 : stride, j : j + stride * (w - 1) + 1 : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    out = full[:, :, padding : fh - padding, padding : fw - padding]
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64).reshape(1, cout, 1, 1)
    return np.ascontiguousarray(out)


def nn_interp(x, r: int) -> np.ndarray:
    """Nearest-neighbour upsampling: every pixel becomes an r x r block."""
    x = as_tensor(x, 4)
    if r < 1:
        raise ShapeError(f"scale must be >= 1, got {r}")
    return np.repeat(np.repeat(x, r, axis=2), r, axis=3)


def coordinate_grid(height: int, width: int) -> np.ndarray:
    """Pixel-centre coordinates in (-1, 1); channel 0 is y, channel 1 is x."""
    if height < 1 or width < 1:
        raise ShapeError("grid extents must be >= 1")
    ys = (2.0 * np.arange(height) + 1.0) / height - 1.0
    xs = (2.0 * np.arange(width) + 1.0) / width - 1.0
    grid = np.empty((2, height, width))
    grid[0] = ys[:, None]
    grid[1] = xs[None, :]
    return grid


# --------------------------------------------------------------------------
# Windowing
# --------------------------------------------------------------------------


def reflect_index(idx, n: int) -> np.ndarray:
    """Map arbitrary integer indices into ``[0, n)`` by mirror reflection.

    Uses the edge-excluding convention (``-1 -> 1``), repeated as needed.
    """
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.mod(idx, period)
    return np.where(m > n - 1, period - m, m)


def overlap_window_size(m: int, r: int, alpha: float) -> int:
    """LR window extent of overlapping cross attention, ``(1 + alpha) * m / r``."""
    return int(round((1.0 + alpha) * m / r))


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def window_indices(height: int, width: int, window, stride, count=None):
    """Source indices for every window of a (possibly overlapping) partition.

    Window ``k`` along an axis starts at ``k * stride - (window - stride) // 2``;
    positions outside the source are mirror-reflected. ``count`` fixes the
    number of windows per axis (default: enough strides to cover the source).

    Returns ``(rows, cols, origins, grid)`` where ``rows``/``cols`` have shape
    ``(n_windows, wh * ww)``.
    """
    wh, ww = _pair(window)
    sh, sw = _pair(stride)
    if wh < sh or ww < sw:
        raise ShapeError("window must be at least as large as its stride")
    if count is None:
        nh, nw = -(-height // sh), -(-width // sw)
    else:
        nh, nw = _pair(count)
    # a single mirror fold must suffice on each side
    for size, win, st, cnt in ((height, wh, sh, nh), (width, ww, sw, nw)):
        before = (win - st) // 2
        after = (cnt - 1) * st + win - before - size
        if max(before, after) > 0 and max(before, after) >= size:
            raise ShapeError(
                f"window {win} (stride {st}) needs more mirror padding than "
                f"the source extent {size} provides"
            )
    oy = np.arange(nh) * sh - (wh - sh) // 2
    ox = np.arange(nw) * sw - (ww - sw) // 2
    ry = reflect_index(oy[:, None] + np.arange(wh)[None, :], height)  # nh x wh
    rx = reflect_index(ox[:, None] + np.arange(ww)[None, :], width)  # nw x ww
    rows = np.broadcast_to(ry[:, None, :, None], (nh, nw, wh, ww)).reshape(nh * nw, wh * ww)
    cols = np.broadcast_to(rx[None, :, None, :], (nh, nw, wh, ww)).reshape(nh * nw, wh * ww)
    origins = [(int(a), int(b)) for a in oy for b in ox]
    return rows, cols, origins, (nh, nw)


@dataclass
class WindowSet:
    """Windows cut from an ``N x C x H x W`` source.

    ``blocks`` has shape ``N x n_windows x C x window_h x window_w``.
    """

    blocks: np.ndarray
    origins: list[tuple[int, int]]
    window: tuple[int, int]
    stride: tuple[int, int]
    source_shape: tuple[int, ...]
    grid: tuple[int, int] = field(default=(0, 0))

    @property
    def overlapping(self) -> bool:
        return self.window != self.stride

    def __len__(self) -> int:
        return self.blocks.shape[1]


def window_partition(x, window, stride=None) -> WindowSet:
    """Cut ``x`` into windows; ``stride == window`` gives a plain tiling.

    Sources that the stride grid does not tile exactly are mirror-padded.
    """
    x = as_tensor(x, 4)
    win = _pair(window)
    st = win if stride is None else _pair(stride)
    n, c, h, w = x.shape
    rows, cols, origins, grid = window_indices(h, w, win, st)
    blocks = x[:, :, rows, cols]  # N x C x nW x T
    blocks = blocks.transpose(0, 2, 1, 3).reshape(n, len(origins), c, win[0], win[1])
    return WindowSet(blocks, origins, win, st, x.shape, grid)


def window_merge(ws: WindowSet) -> np.ndarray:
    """Reassemble a partition into the source layout.

    For a tiling every source pixel is taken from the window that owns it;
    for overlapping windows the copies covering a pixel are averaged.
    """
    n, c, h, w = ws.source_shape
    wh, ww = ws.window
    sh, sw = ws.stride
    nh, nw = ws.grid
    out = np.zeros((n, c, h, w))
    if not ws.overlapping:
        canvas = ws.blocks.reshape(n, nh, nw, c, wh, ww).transpose(0, 3, 1, 4, 2, 5)
        canvas = canvas.reshape(n, c, nh * wh, nw * ww)
        return np.ascontiguousarray(canvas[:, :, :h, :w])
    rows, cols, _, _ = window_indices(h, w, ws.window, ws.stride, count=ws.grid)
    counts = np.zeros((h, w))
    vals = ws.blocks.reshape(n, len(ws.origins), c, wh * ww).transpose(0, 2, 1, 3)
    oy = np.arange(nh)[:, None] * sh - (wh - sh) // 2 + np.arange(wh)
    ox = np.arange(nw)[:, None] * sw - (ww - sw) // 2 + np.arange(ww)
    # only positions that fall inside the source (not reflected copies) count
    iny = np.broadcast_to(((oy >= 0) & (oy < h))[:, None, :, None], (nh, nw, wh, ww))
    inx = np.broadcast_to(((ox >= 0) & (ox < w))[None, :, None, :], (nh, nw, wh, ww))
    inside = (iny & inx).reshape(nh * nw, wh * ww)
    np.add.at(out, (slice(None), slice(None), rows[inside], cols[inside]), vals[:, :, inside])
    np.add.at(counts, (rows[inside], cols[inside]), 1.0)
    return out / np.maximum(counts, 1.0)
