"""Reverse-mode gradients for the operations the upsamplers use.

Each differentiable op here computes its forward value with :mod:`numcore`
and, when a :class:`GradTape` is passed, records a vector-Jacobian product.
:func:`backward` replays the tape in exact reverse order.

Values are identified by object identity; the tape keeps references to every
recorded input and output so identities stay unique while it is alive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from . import numcore
from .errors import NumericError, ShapeError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: np.ndarray
    vjp: Callable


@dataclass
class GradTape:
    """Forward-pass record used to compute gradients."""

    entries: list[TapeEntry] = field(default_factory=list)
    param_grads: dict[str, np.ndarray] = field(default_factory=dict)

    def record(self, op: str, inputs: Sequence, output: np.ndarray, vjp: Callable) -> None:
        self.entries.append(TapeEntry(op, tuple(inputs), output, vjp))

    @property
    def ops(self) -> list[str]:
        return [e.op for e in self.entries]


def backward(loss_grad, tape: GradTape, wrt: dict[str, np.ndarray], output=None) -> dict[str, np.ndarray]:
    """Propagate ``loss_grad`` from ``output`` (default: last recorded value).

    Returns a gradient for every array in ``wrt``, keyed by the same names;
    arrays the output does not depend on get zeros. The result is also stored
    in ``tape.param_grads``.
    """
    if not tape.entries:
        raise ShapeError("empty tape")
    if output is None:
        output = tape.entries[-1].output
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != np.shape(output):
        raise ShapeError(f"loss gradient shape {loss_grad.shape} != output shape {np.shape(output)}")

    grads: dict[int, np.ndarray] = {id(output): loss_grad}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        in_grads = entry.vjp(g)
        for value, gi in zip(entry.inputs, in_grads):
            if gi is None or not isinstance(value, np.ndarray):
                continue
            key = id(value)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi

    out = {}
    for name, arr in wrt.items():
        g = grads.get(id(arr))
        out[name] = np.zeros_like(arr, dtype=np.float64) if g is None else np.asarray(g).reshape(arr.shape)
    tape.param_grads = dict(out)
    return out


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one element at a time."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value while perturbing element {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def gradient_mismatch(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-8) -> float:
    """Largest ``|a - n| / (rtol * max(|a|, |n|) + atol)``; passing means < 1."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ShapeError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    bound = rtol * np.maximum(np.abs(a), np.abs(n)) + atol
    return float(np.max(np.abs(a - n) / bound))


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# Convolutions, resampling, rearrangements
# --------------------------------------------------------------------------


def conv2d_backward(g, x, weight, stride: int = 1, padding: int = 0):
    """Gradients of :func:`numcore.conv2d` w.r.t. input, weight and bias."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    oh, ow = g.shape[2], g.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    gxp = np.zeros_like(xp)
    gw = np.empty_like(weight)
    for i in range(kh):
        for j in range(kw):
            ys = slice(i, i + stride * (oh - 1) + 1, stride)
            xs = slice(j, j + stride * (ow - 1) + 1, stride)
            patch = xp[:, :, ys, xs]
            gw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
            gxp[:, :, ys, xs] += np.tensordot(g, weight[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
    gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
    gb = g.sum(axis=(0, 2, 3))
    return gx, gw, gb


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, tape: GradTape | None = None):
    y = numcore.conv2d(x, weight, bias, stride=stride, padding=padding)
    if tape is not None:
        def vjp(g):
            gx, gw, gb = conv2d_backward(g, x, weight, stride, padding)
            return gx, gw, (gb if bias is not None else None)

        tape.record("conv2d", (x, weight, bias), y, vjp)
    return y


def transposed_conv2d_backward(g, x, weight, stride: int = 1, padding: int = 0):
    n, cin, h, w = x.shape
    _, cout, kh, kw = weight.shape
    if padding:
        g = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    gx = np.zeros_like(x)
    gw = np.empty_like(weight)
    for i in range(kh):
        for j in range(kw):
            gs = g[:, :, i : i + stride * (h - 1) + 1 : stride, j : j + stride * (w - 1) + 1 : stride]
            gx += np.tensordot(gs, weight[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
            gw[:, :, i, j] = np.tensordot(x, gs, axes=([0, 2, 3], [0, 2, 3]))
    return gx, gw


def transposed_conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, tape: GradTape | None = None):
    y = numcore.transposed_conv2d(x, weight, bias, stride=stride, padding=padding)
    if tape is not None:
        def vjp(g):
            gx, gw = transposed_conv2d_backward(g, x, weight, stride, padding)
            return gx, gw, (g.sum(axis=(0, 2, 3)) if bias is not None else None)

        tape.record("transposed_conv2d", (x, weight, bias), y, vjp)
    return y


def nn_interp(x, r: int, tape: GradTape | None = None):
    y = numcore.nn_interp(x, r)
    if tape is not None:
        def vjp(g):
            n, c, hh, ww = g.shape
            return (g.reshape(n, c, hh // r, r, ww // r, r).sum(axis=(3, 5)),)

        tape.record("nn_interp", (x,), y, vjp)
    return y


def pixel_shuffle(x, r: int, tape: GradTape | None = None):
    y = numcore.pixel_shuffle(x, r)
    if tape is not None:
        tape.record("pixel_shuffle", (x,), y, lambda g: (numcore.pixel_unshuffle(g, r),))
    return y


def pixel_unshuffle(x, r: int, tape: GradTape | None = None):
    y = numcore.pixel_unshuffle(x, r)
    if tape is not None:
        tape.record("pixel_unshuffle", (x,), y, lambda g: (numcore.pixel_shuffle(g, r),))
    return y


def to_groups(x, s: int, tape: GradTape | None = None):
    """``N x (C s^2) x h x w`` -> ``N x s^2 x C x h x w``.

    Group ``g = a*s + b`` collects the channels that :func:`pixel_shuffle`
    sends to sub-pixel offset ``(a, b)``.
    """
    n, ch, h, w = x.shape
    y = np.ascontiguousarray(x.reshape(n, ch // (s * s), s * s, h, w).transpose(0, 2, 1, 3, 4))
    if tape is not None:
        tape.record("to_groups", (x,), y, lambda g: (g.transpose(0, 2, 1, 3, 4).reshape(x.shape),))
    return y


def from_groups(xg, tape: GradTape | None = None):
    n, gcount, c, h, w = xg.shape
    y = np.ascontiguousarray(xg.transpose(0, 2, 1, 3, 4).reshape(n, c * gcount, h, w))
    if tape is not None:
        tape.record(
            "from_groups",
            (xg,),
            y,
            lambda g: (np.ascontiguousarray(g.reshape(n, c, gcount, h, w).transpose(0, 2, 1, 3, 4)),),
        )
    return y


# --------------------------------------------------------------------------
# Elementwise and small linear algebra
# --------------------------------------------------------------------------


def add(a, b, tape: GradTape | None = None):
    y = a + b
    if tape is not None:
        tape.record("add", (a, b), y, lambda g: (_sum_to(g, np.shape(a)), _sum_to(g, np.shape(b))))
    return y


def scale(x, k: float, tape: GradTape | None = None):
    y = x * k
    if tape is not None:
        tape.record("scale", (x,), y, lambda g: (g * k,))
    return y


def gelu(x, tape: GradTape | None = None):
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    y = x * cdf
    if tape is not None:
        def vjp(g):
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
            return (g * (cdf + x * pdf),)

        tape.record("gelu", (x,), y, vjp)
    return y


def layer_norm(x, gain, offset, eps: float = 1e-5, tape: GradTape | None = None):
    """Normalize each pixel over the channel axis of an NCHW map."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    shape = (1, -1, 1, 1)
    y = xhat * gain.reshape(shape) + offset.reshape(shape)
    if tape is not None:
        def vjp(g):
            ggain = (g * xhat).sum(axis=(0, 2, 3))
            goff = g.sum(axis=(0, 2, 3))
            gxhat = g * gain.reshape(shape)
            gx = inv * (
                gxhat
                - gxhat.mean(axis=1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
            )
            return gx, ggain, goff

        tape.record("layer_norm", (x, gain, offset), y, vjp)
    return y


def softmax(x, axis: int = -1, tape: GradTape | None = None):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    if tape is not None:
        tape.record("softmax", (x,), y, lambda g: (softmax_backward(g, y, axis),))
    return y


def softmax_backward(g, y, axis: int = -1):
    """VJP of softmax given its output ``y``."""
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


def bmm(a, b, tape: GradTape | None = None):
    """Batched matrix product over matching leading dimensions."""
    y = a @ b
    if tape is not None:
        tape.record(
            "bmm",
            (a, b),
            y,
            lambda g: (g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g),
        )
    return y


def swap_last(x, tape: GradTape | None = None):
    y = np.swapaxes(x, -1, -2)
    if tape is not None:
        tape.record("swap_last", (x,), y, lambda g: (np.swapaxes(g, -1, -2),))
    return y


def token_linear(t, weight, bias=None, tape: GradTape | None = None):
    """``t @ weight + bias`` over the trailing (channel) axis."""
    y = t @ weight
    if bias is not None:
        y = y + bias
    if tape is not None:
        def vjp(g):
            gt = g @ weight.T
            lead = g.reshape(-1, g.shape[-1])
            gw = t.reshape(-1, t.shape[-1]).T @ lead
            gb = lead.sum(axis=0) if bias is not None else None
            return gt, gw, gb

        tape.record("token_linear", (t, weight, bias), y, vjp)
    return y


def grouped_linear(xg, weight, bias, tape: GradTape | None = None):
    """Per-pixel channel mixing inside each sub-pixel group.

    ``xg``: ``N x G x Cin x h x w``; ``weight``: ``Gw x Cout x Cin`` with
    ``Gw`` either 1 (shared across groups) or ``G``; ``bias``: ``Gw x Cout``.
    """
    y = np.einsum("goi,ngihw->ngohw", weight, xg, optimize=True) + bias[None, :, :, None, None]
    if tape is not None:
        shared = weight.shape[0] == 1 and xg.shape[1] != 1

        def vjp(g):
            gx = np.einsum("goi,ngohw->ngihw", weight, g, optimize=True)
            gw = np.einsum("ngohw,ngihw->goi", g, xg, optimize=True)
            gb = g.sum(axis=(0, 3, 4))
            if shared:
                gw = gw.sum(axis=0, keepdims=True)
                gb = gb.sum(axis=0, keepdims=True)
            return gx, gw, gb

        tape.record("grouped_linear", (xg, weight, bias), y, vjp)
    return y


# --------------------------------------------------------------------------
# Fourier-feature modulation and windows
# --------------------------------------------------------------------------


def fourier_modulation(freq, coords):
    """Modulation vectors ``concat(cos(pi*phi), sin(pi*phi))`` per group.

    ``freq``: ``G x (C/2) x 2``; ``coords``: ``G x 2 x h x w``.
    Returns ``(modulation G x C x h x w, phases G x C/2 x h x w)``.
    """
    phi = np.einsum("gkd,gdhw->gkhw", freq, coords)
    m = np.concatenate([np.cos(np.pi * phi), np.sin(np.pi * phi)], axis=1)
    return m, phi


def fourier_modulate(xg, freq, coords, tape: GradTape | None = None):
    """Multiply each group's features by its Fourier modulation."""
    m, phi = fourier_modulation(freq, coords)
    if xg.shape[1:] != m.shape:
        raise ShapeError(f"grouped features {xg.shape} do not match modulation {m.shape}")
    y = xg * m[None]
    if tape is not None:
        def vjp(g):
            half = phi.shape[1]
            gm = (g * xg).sum(axis=0)
            gphi = np.pi * (np.cos(np.pi * phi) * gm[:, half:] - np.sin(np.pi * phi) * gm[:, :half])
            gfreq = np.einsum("gkhw,gdhw->gkd", gphi, coords)
            return g * m[None], gfreq, None

        tape.record("fourier_modulate", (xg, freq, coords), y, vjp)
    return y


def gather_tokens(x, rows, cols, tape: GradTape | None = None):
    """Pick window tokens: ``B x C x H x W`` -> ``B x nW x T x C``."""
    y = np.ascontiguousarray(x[:, :, rows, cols].transpose(0, 2, 3, 1))
    if tape is not None:
        def vjp(g):
            gx = np.zeros_like(x)
            np.add.at(gx, (slice(None), slice(None), rows, cols), g.transpose(0, 3, 1, 2))
            return (gx,)

        tape.record("gather_tokens", (x,), y, vjp)
    return y


def merge_tiles(tokens, grid, window, out_hw, tape: GradTape | None = None):
    """Place tiling-window tokens back on the canvas and crop to ``out_hw``.

    ``tokens``: ``B x (nh*nw) x (wh*ww) x C``.
    """
    b, _, _, c = tokens.shape
    nh, nw = grid
    wh, ww = window
    h, w = out_hw
    canvas = tokens.reshape(b, nh, nw, wh, ww, c).transpose(0, 5, 1, 3, 2, 4)
    canvas = canvas.reshape(b, c, nh * wh, nw * ww)
    y = np.ascontiguousarray(canvas[:, :, :h, :w])
    if tape is not None:
        def vjp(g):
            full = np.zeros((b, c, nh * wh, nw * ww))
            full[:, :, :h, :w] = g
            gt = full.reshape(b, c, nh, wh, nw, ww).transpose(0, 2, 4, 3, 5, 1)
            return (np.ascontiguousarray(gt.reshape(tokens.shape)),)

        tape.record("merge_tiles", (tokens,), y, vjp)
    return y
