"""Analytic gradients against central finite differences.

Each op is reduced to a scalar ``sum(op(...) * R)`` with a fixed random R;
the tape's gradient must match the numeric one at rtol 1e-4 / atol 1e-8.
"""

import numpy as np
import pytest

from fgasr import grad as G
from fgasr import numcore
from fgasr.errors import NumericError, ShapeError
from fgasr.grad import backward, finite_diff_gradient, gradient_mismatch

RTOL, ATOL = 1e-4, 1e-8


def check_op(fn, inputs: dict, seed=0):
    """Compare tape gradients of ``sum(fn(**inputs) * R)`` with finite differences."""
    rng = np.random.default_rng(seed)
    out = fn(**inputs, tape=None)
    proj = rng.normal(size=np.shape(out))
    tape = G.GradTape()
    y = fn(**inputs, tape=tape)
    analytic = backward(proj, tape, inputs, output=y)
    worst = 0.0
    for name, arr in inputs.items():
        def f(v, name=name):
            args = dict(inputs)
            args[name] = v
            return float(np.sum(fn(**args, tape=None) * proj))

        numeric = finite_diff_gradient(f, arr)
        worst = max(worst, gradient_mismatch(analytic[name], numeric, RTOL, ATOL))
    assert worst < 1.0, f"gradient mismatch ratio {worst:.3g}"
    return analytic


def test_finite_diff_basics(rng):
    x = rng.normal(size=(3, 4))
    g = finite_diff_gradient(lambda v: float(np.sum(v**2)), x)
    assert np.max(np.abs(g - 2 * x)) < 1e-6
    assert np.all(finite_diff_gradient(lambda v: 3.0, x) == 0)
    with pytest.raises(NumericError):
        finite_diff_gradient(lambda v: float("nan"), x)


def test_zero_upstream_gives_zero_gradients(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    tape = G.GradTape()
    y = G.gelu(G.conv2d(x, w, b, padding=1, tape=tape), tape=tape)
    grads = backward(np.zeros_like(y), tape, {"x": x, "w": w, "b": b})
    assert all(np.all(g == 0) for g in grads.values())


def test_affine_hand_derivative(rng):
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    tape = G.GradTape()
    y = G.token_linear(x, w, b, tape=tape)
    g = backward(np.ones_like(y), tape, {"w": w, "b": b})
    assert np.allclose(g["w"], np.repeat(x.sum(axis=0)[:, None], 2, axis=1))
    assert np.allclose(g["b"], 5.0)


def test_backward_visits_in_reverse_order(rng):
    x = rng.normal(size=(1, 4, 2, 2))
    tape = G.GradTape()
    seen = []
    y = G.pixel_shuffle(x, 2, tape=tape)
    z = G.scale(y, 2.0, tape=tape)
    for e in tape.entries:
        vjp = e.vjp
        e.vjp = lambda g, vjp=vjp, op=e.op: (seen.append(op), vjp(g))[1]
    backward(np.ones_like(z), tape, {"x": x})
    assert seen == ["scale", "pixel_shuffle"]


def test_backward_shape_mismatch(rng):
    tape = G.GradTape()
    y = G.scale(rng.normal(size=(2, 2)), 1.0, tape=tape)
    with pytest.raises(ShapeError):
        backward(np.ones(3), tape, {})


def test_pixel_shuffle_adjoint_is_unshuffle(rng):
    x = rng.normal(size=(2, 12, 3, 2))
    tape = G.GradTape()
    y = G.pixel_shuffle(x, 2, tape=tape)
    up = rng.normal(size=y.shape)
    g = backward(up, tape, {"x": x})["x"]
    assert np.array_equal(g, numcore.pixel_unshuffle(up, 2))


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)])
def test_conv2d_gradients(rng, stride, padding, k):
    h = 6 if (6 + 2 * padding - k) % stride == 0 else 5
    check_op(
        lambda x, w, b, tape: G.conv2d(x, w, b, stride=stride, padding=padding, tape=tape),
        {"x": rng.normal(size=(2, 2, h, h)), "w": rng.normal(size=(3, 2, k, k)), "b": rng.normal(size=3)},
    )


@pytest.mark.parametrize("stride,padding,k", [(2, 1, 4), (3, 1, 5), (1, 1, 3)])
def test_transposed_conv2d_gradients(rng, stride, padding, k):
    check_op(
        lambda x, w, b, tape: G.transposed_conv2d(x, w, b, stride=stride, padding=padding, tape=tape),
        {"x": rng.normal(size=(1, 2, 3, 2)), "w": rng.normal(size=(2, 3, k, k)), "b": rng.normal(size=3)},
    )


def test_transposed_conv_is_conv_input_gradient(rng):
    # transposed conv applied to dy equals d(sum(conv(x) * dy))/dx
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 4, 4))
    dy = rng.normal(size=numcore.conv2d(x, w, stride=2, padding=1).shape)
    fd = finite_diff_gradient(lambda v: float(np.sum(numcore.conv2d(v, w, stride=2, padding=1) * dy)), x)
    tc = numcore.transposed_conv2d(dy, w, stride=2, padding=1)
    assert tc.shape == x.shape
    assert gradient_mismatch(tc, fd) < 1.0


def test_nn_interp_gradient(rng):
    check_op(lambda x, tape: G.nn_interp(x, 3, tape=tape), {"x": rng.normal(size=(1, 2, 2, 3))})


def test_pixel_shuffle_and_unshuffle_gradients(rng):
    check_op(lambda x, tape: G.pixel_shuffle(x, 2, tape=tape), {"x": rng.normal(size=(1, 8, 2, 3))})
    check_op(lambda x, tape: G.pixel_unshuffle(x, 3, tape=tape), {"x": rng.normal(size=(1, 1, 3, 6))})


def test_group_rearrangements(rng):
    check_op(lambda x, tape: G.to_groups(x, 2, tape=tape), {"x": rng.normal(size=(2, 8, 2, 2))})
    check_op(lambda x, tape: G.from_groups(x, tape=tape), {"x": rng.normal(size=(2, 4, 2, 2, 3))})


def test_elementwise_gradients(rng):
    check_op(lambda x, tape: G.gelu(x, tape=tape), {"x": rng.normal(size=(3, 4)) * 2})
    check_op(lambda x, tape: G.scale(x, -1.7, tape=tape), {"x": rng.normal(size=(3,))})
    check_op(
        lambda a, b, tape: G.add(a, b, tape=tape),
        {"a": rng.normal(size=(2, 3, 4)), "b": rng.normal(size=(1, 3, 1))},
    )


def test_layer_norm_gradient(rng):
    check_op(
        lambda x, g, o, tape: G.layer_norm(x, g, o, tape=tape),
        {"x": rng.normal(size=(2, 5, 3, 2)), "g": rng.normal(size=5), "o": rng.normal(size=5)},
    )


def test_softmax_gradient_and_zero_sum(rng):
    x = rng.normal(size=(2, 3, 6))
    check_op(lambda x, tape: G.softmax(x, tape=tape), {"x": x})
    y = G.softmax(x)
    gx = G.softmax_backward(rng.normal(size=x.shape), y)
    assert np.max(np.abs(gx.sum(axis=-1))) < 1e-10


def test_matmul_family_gradients(rng):
    check_op(
        lambda a, b, tape: G.bmm(a, b, tape=tape),
        {"a": rng.normal(size=(2, 3, 4, 5)), "b": rng.normal(size=(2, 3, 5, 2))},
    )
    check_op(lambda x, tape: G.swap_last(x, tape=tape), {"x": rng.normal(size=(2, 3, 4))})
    check_op(
        lambda t, w, b, tape: G.token_linear(t, w, b, tape=tape),
        {"t": rng.normal(size=(2, 3, 4, 5)), "w": rng.normal(size=(5, 3)), "b": rng.normal(size=3)},
    )


@pytest.mark.parametrize("groups_w", [1, 4])
def test_grouped_linear_gradient(rng, groups_w):
    check_op(
        lambda x, w, b, tape: G.grouped_linear(x, w, b, tape=tape),
        {
            "x": rng.normal(size=(2, 4, 3, 2, 2)),
            "w": rng.normal(size=(groups_w, 5, 3)),
            "b": rng.normal(size=(groups_w, 5)),
        },
    )


def test_fourier_modulate_gradient(rng):
    coords = rng.uniform(-1, 1, size=(4, 2, 2, 3))
    check_op(
        lambda x, f, tape: G.fourier_modulate(x, f, coords, tape=tape),
        {"x": rng.normal(size=(2, 4, 6, 2, 3)), "f": rng.normal(size=(4, 3, 2))},
    )


def test_window_gather_and_merge_gradients(rng):
    rows, cols, _, grid = numcore.window_indices(3, 3, 3, 1)
    check_op(lambda x, tape: G.gather_tokens(x, rows, cols, tape=tape), {"x": rng.normal(size=(1, 2, 3, 3))})
    tokens = rng.normal(size=(1, 4, 16, 2))
    check_op(lambda t, tape: G.merge_tiles(t, (2, 2), (4, 4), (6, 7), tape=tape), {"t": tokens})
