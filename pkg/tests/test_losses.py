import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgasr.errors import ShapeError
from fgasr.grad import GradTape, backward, finite_diff_gradient, gradient_mismatch
from fgasr.losses import combined_loss, l1_freq, l1_pixel
from oracles import direct_dft2


def test_l1_pixel_basics(rng):
    a = rng.normal(size=(3, 4, 5))
    assert l1_pixel(a, a).value == 0.0
    assert l1_pixel(a + 0.5, a).value == pytest.approx(0.5, abs=1e-12)
    b = rng.normal(size=a.shape)
    ref = sum(abs(p - q) for p, q in zip(a.ravel(), b.ravel())) / a.size
    assert abs(l1_pixel(a, b).value - ref) < 1e-12
    with pytest.raises(ShapeError):
        l1_pixel(a, a[:2])


def test_l1_freq_identical_is_zero(rng):
    a = rng.normal(size=(3, 8, 8))
    assert l1_freq(a, a).value < 1e-9


@pytest.mark.parametrize("c", [0.3, -1.25])
@pytest.mark.parametrize("shape", [(3, 8, 8), (1, 5, 6)])
def test_l1_freq_dc_offset_closed_form(rng, c, shape):
    t = rng.normal(size=shape)
    assert abs(l1_freq(t + c, t).value - 2 * abs(c)) < 1e-9


def _brute_force_bins(pred, target):
    """|dRe| + |dIm| for every bin of every channel, via the direct DFT."""
    return np.stack([np.abs((d := direct_dft2(p) - direct_dft2(q)).real) + np.abs(d.imag) for p, q in zip(pred, target)])


@pytest.mark.parametrize("shape", [(1, 4, 4), (2, 6, 5), (1, 5, 4)])
def test_l1_freq_against_full_spectrum_oracle(rng, shape):
    pred = rng.normal(size=shape)
    target = rng.normal(size=shape)
    c, u, v = shape
    bins = _brute_force_bins(pred, target)
    full = bins.sum() / (u * v * c)
    got = l1_freq(pred, target).value
    # rows that are their own conjugate partners are counted twice by the factor 2
    self_conj = [0] + ([u // 2] if u % 2 == 0 else [])
    extra = bins[:, self_conj, :].sum() / (u * v * c)
    assert abs(got - (full + extra)) < 1e-6
    assert got > full


def test_l1_freq_circular_shift_is_penalized(rng):
    a = rng.normal(size=(3, 8, 8))
    shifted = np.roll(a, 1, axis=2)
    assert np.allclose(np.abs(np.fft.fft2(shifted)), np.abs(np.fft.fft2(a)))
    assert l1_freq(shifted, a).value > 1e-3


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3))
def test_l1_freq_symmetry_and_scaling(seed, lam):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 6, 6))
    b = rng.normal(size=(2, 6, 6))
    ab = l1_freq(a, b).value
    assert ab >= 0
    assert abs(ab - l1_freq(b, a).value) < 1e-9
    assert abs(l1_freq(lam * a, lam * b).value - abs(lam) * ab) < 1e-9 * max(1.0, abs(lam) * ab)


def test_l1_freq_batched_matches_mean(rng):
    a = rng.normal(size=(2, 3, 4, 4))
    b = rng.normal(size=(2, 3, 4, 4))
    per = [l1_freq(a[i], b[i]).value for i in range(2)]
    assert l1_freq(a, b).value == pytest.approx(np.mean(per), rel=1e-12)


@pytest.mark.parametrize("shape", [(3, 6, 6), (1, 5, 4), (2, 3, 4, 4)])
def test_l1_freq_gradient_matches_finite_differences(rng, shape):
    pred = rng.normal(size=shape)
    target = rng.normal(size=shape)
    analytic = l1_freq(pred, target, with_grad=True).grad
    numeric = finite_diff_gradient(lambda p: l1_freq(p, target).value, pred)
    assert gradient_mismatch(analytic, numeric) < 1.0


def test_l1_pixel_gradient_and_tape(rng):
    pred = rng.normal(size=(2, 3, 3))
    target = rng.normal(size=(2, 3, 3))
    numeric = finite_diff_gradient(lambda p: l1_pixel(p, target).value, pred)
    tape = GradTape()
    loss = l1_pixel(pred, target, tape=tape)
    analytic = backward(1.0, tape, {"p": pred}, output=loss.node)["p"]
    assert gradient_mismatch(analytic, numeric) < 1.0


def test_combined_loss_weights(rng):
    pred = rng.normal(size=(3, 4, 4))
    target = rng.normal(size=(3, 4, 4))
    both = combined_loss(pred, target, 0.5, 2.0, with_grad=True)
    assert both.value == pytest.approx(0.5 * l1_pixel(pred, target).value + 2.0 * l1_freq(pred, target).value)
    numeric = finite_diff_gradient(lambda p: combined_loss(p, target, 0.5, 2.0).value, pred)
    assert gradient_mismatch(both.grad, numeric) < 1.0
