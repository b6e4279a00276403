"""Pixel-domain and frequency-domain L1 losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .grad import GradTape


@dataclass
class LossValue:
    """A scalar loss plus, when requested, its gradient w.r.t. ``pred``.

    ``node`` is the 0-d array recorded on a tape (pass it to
    :func:`fgasr.grad.backward` as the output).
    """

    value: float
    grad: np.ndarray | None = None
    node: np.ndarray | None = None

    def __float__(self) -> float:
        return self.value


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def _finish(value, grad_fn, pred, with_grad, tape, op):
    node = np.asarray(value, dtype=np.float64)
    grad = grad_fn() if (with_grad or tape is not None) else None
    if tape is not None:
        tape.record(op, (pred,), node, lambda g: (grad * float(g),))
    return LossValue(float(value), grad if with_grad else None, node)


def l1_pixel(pred, target, with_grad: bool = False, tape: GradTape | None = None) -> LossValue:
    """Mean absolute difference over all elements."""
    pred, target = _check_pair(pred, target)
    diff = pred - target
    value = np.abs(diff).mean()
    return _finish(value, lambda: np.sign(diff) / diff.size, pred, with_grad, tape, "l1_pixel")


def _half_spectrum_mask(u: int, v: int) -> np.ndarray:
    mask = np.zeros((u, v))
    mask[: u // 2 + 1, :] = 1.0
    return mask


def l1_freq(pred, target, with_grad: bool = False, tape: GradTape | None = None) -> LossValue:
    """Frequency-domain L1 over the non-redundant half spectrum.

    For ``C x U x V`` inputs::

        2 / (U V C) * sum_c sum_{u <= U//2} sum_v |dRe| + |dIm|

    where ``d`` is the difference of the unnormalized channel-wise DFTs. The
    rows ``u = 0`` and ``u = U/2`` (even U) are self-conjugate yet still get
    the factor 2; this is deliberate. A leading batch axis is averaged.
    """
    pred, target = _check_pair(pred, target)
    if pred.ndim not in (3, 4):
        raise ShapeError(f"l1_freq expects C x U x V or N x C x U x V, got {pred.shape}")
    u, v = pred.shape[-2:]
    count = int(np.prod(pred.shape[:-2]))  # C, or N*C
    diff = np.fft.fft2(pred - target)
    mask = _half_spectrum_mask(u, v)
    k = 2.0 / (u * v * count)
    value = k * ((np.abs(diff.real) + np.abs(diff.imag)) * mask).sum()

    def grad_fn():
        g = (np.sign(diff.real) + 1j * np.sign(diff.imag)) * mask
        # adjoint of the unnormalized DFT applied to the sign pattern
        return k * (u * v) * np.fft.ifft2(g).real

    return _finish(value, grad_fn, pred, with_grad, tape, "l1_freq")


def combined_loss(
    pred,
    target,
    lambda_pix: float = 1.0,
    lambda_freq: float = 1.0,
    with_grad: bool = False,
    tape: GradTape | None = None,
) -> LossValue:
    """``lambda_pix * L1 + lambda_freq * FL1``; a zero weight drops its term."""
    pred, target = _check_pair(pred, target)
    value = 0.0
    grad = np.zeros_like(pred)
    want = with_grad or tape is not None
    if lambda_pix:
        lp = l1_pixel(pred, target, with_grad=want)
        value += lambda_pix * lp.value
        if want:
            grad += lambda_pix * lp.grad
    if lambda_freq:
        lf = l1_freq(pred, target, with_grad=want)
        value += lambda_freq * lf.value
        if want:
            grad += lambda_freq * lf.grad
    return _finish(value, lambda: grad, pred, with_grad, tape, "combined_loss")
