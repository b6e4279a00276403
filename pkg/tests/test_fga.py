import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles_fga
from fgasr import fga, numcore
from fgasr.errors import ConfigError, ShapeError
from fgasr.fga import (
    FgaConfig,
    baseline_forward,
    cal_forward,
    ffmlp_stage,
    fga_forward,
    flops_estimate,
    fourier_feature_embed,
    init_params,
    parameter_count,
)
from oracles import naive_conv2d


def randomize(params, rng, scale=0.5):
    """Perturb every tensor so zero-initialized biases and unit gains matter."""
    return {k: v + scale * rng.normal(size=v.shape) for k, v in params.items()}


# ---------------------------------------------------------------- config / init


def test_config_defaults():
    cfg = FgaConfig()
    assert cfg.stage_scales == [2, 2]
    assert (cfg.win_pre, cfg.win_post) == (5, 4)
    assert cfg.mlp_hidden == cfg.channels
    assert FgaConfig(scale=8).stage_scales == [2, 2, 2]
    assert FgaConfig(scale=3).stage_scales == [3]
    assert FgaConfig(scale=3).win_post == 6


def test_config_overlap_rule_when_window_unset():
    cfg = FgaConfig(scale=1, win_post=4, win_pre=None, alpha=0.5)
    assert cfg.win_pre == numcore.overlap_window_size(4, 1, 0.5) == 6
    assert FgaConfig(scale=2, win_pre=None, alpha=0.0).win_pre == 2


@pytest.mark.parametrize(
    "kwargs",
    [
        {"channels": 7},
        {"scale": 4, "stage_scales": [2, 3]},
        {"scale": 2, "win_post": 5},
        {"alpha": 1.0},
        {"scale": 2, "alpha": 0.0, "win_pre": 5},
        {"scale": 4, "win_pre": 0},
    ],
)
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        FgaConfig(**kwargs)


def test_init_is_deterministic_and_bounded():
    cfg = FgaConfig(channels=8, scale=4, seed=3)
    a, b = init_params(cfg), init_params(cfg)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(replace(cfg, seed=4))
    assert not np.array_equal(a["final.weight"], c["final.weight"])
    for name, arr in a.items():
        assert np.all(np.isfinite(arr))
        if name.endswith("conv.weight") or name == "final.weight":
            assert np.max(np.abs(arr)) <= math.sqrt(1.0 / (arr.shape[1] * 9))
        if name.endswith(".bias") or name.endswith(".offset"):
            assert np.all(arr == 0)


def test_default_parameter_budget():
    cfg = FgaConfig(channels=64, scale=4)
    count = parameter_count(cfg)
    assert count == sum(v.size for v in init_params(cfg).values())
    assert abs(count - 0.3e6) <= 0.2 * 0.3e6


def test_parameter_count_tracks_toggles():
    full = FgaConfig(channels=8, scale=2)
    bare = replace(full, use_ff=False, use_mlp=False, use_cal=False)
    assert parameter_count(bare) == parameter_count(full, "spc")
    assert parameter_count(full) > parameter_count(replace(full, use_cal=False)) > parameter_count(bare)
    assert parameter_count(replace(full, share_mlp=False)) > parameter_count(full)


def test_lattice_frequencies():
    lat = fga.lattice_frequencies(6)
    assert lat.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1], [0, 2], [2, 0]]


# ---------------------------------------------------------------- Fourier features


def test_zero_frequency_passes_cos_half():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 4 * 6, 2, 2))
    y = fourier_feature_embed(x, 2, np.zeros((4, 3, 2)))
    xg = x.reshape(1, 6, 4, 2, 2)
    yg = y.reshape(1, 6, 4, 2, 2)
    assert np.array_equal(yg[:, :3], xg[:, :3])
    assert np.all(yg[:, 3:] == 0)


def test_fourier_embed_hand_table():
    # s = 2 on a 1x1 map: HR pixel centres are +-0.5; phase = y + 0.5 x
    freq = np.tile(np.array([[[1.0, 0.5]]]), (4, 1, 1))
    y = fourier_feature_embed(np.ones((1, 8, 1, 1)), 2, freq)[0, :, 0, 0]
    h = math.sqrt(0.5)
    expected_phase = {0: -0.75, 1: -0.25, 2: 0.25, 3: 0.75}  # g = a*2 + b
    table = {0: (-h, -h), 1: (h, -h), 2: (h, h), 3: (-h, h)}
    for g, phase in expected_phase.items():
        cos_v, sin_v = table[g]
        assert math.cos(math.pi * phase) == pytest.approx(cos_v)
        assert y[0 * 4 + g] == pytest.approx(cos_v, abs=1e-12)
        assert y[1 * 4 + g] == pytest.approx(sin_v, abs=1e-12)


def test_subpixel_groups_are_distinct():
    freq = np.tile(fga.lattice_frequencies(2)[None], (4, 1, 1)) + 1.0
    y = fourier_feature_embed(np.ones((1, 16, 3, 3)), 2, freq)
    yg = y.reshape(1, 4, 4, 3, 3)
    diffs = [np.max(np.abs(yg[:, :, a] - yg[:, :, b])) for a in range(4) for b in range(a + 1, 4)]
    assert min(diffs) > 0


def test_fourier_embed_shape_errors():
    with pytest.raises(ShapeError):
        fourier_feature_embed(np.ones((1, 8, 2, 2)), 2, np.zeros((4, 2, 2)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.sampled_from([2, 3]))
def test_modulation_differs_across_groups_for_nonzero_frequencies(seed, s):
    rng = np.random.default_rng(seed)
    freq = rng.normal(size=(s * s, 2, 2))
    freq[np.abs(freq) < 1e-3] = 0.5
    coords = fga.subpixel_coordinates(2, 2, s)
    from fgasr.grad import fourier_modulation

    m, _ = fourier_modulation(freq, coords)
    flat = m.reshape(s * s, -1)
    assert max(np.max(np.abs(flat[a] - flat[b])) for a in range(s * s) for b in range(a + 1, s * s)) > 0


# ---------------------------------------------------------------- FF-MLP stage


def test_stage_without_ff_and_mlp_is_subpixel_conv(rng):
    cfg = FgaConfig(channels=4, scale=2, use_ff=False, use_mlp=False, use_cal=False)
    p = randomize(init_params(cfg), rng)
    x = rng.normal(size=(1, 4, 3, 3))
    y = ffmlp_stage(x, p, 0, 2, cfg)
    ref = numcore.pixel_shuffle(numcore.conv2d(x, p["stage0.conv.weight"], p["stage0.conv.bias"], padding=1), 2)
    assert np.array_equal(y, ref)
    assert y.shape == (1, 4, 6, 6)


@pytest.mark.parametrize("share", [True, False])
@pytest.mark.parametrize("ff,mlp", [(True, True), (True, False), (False, True)])
def test_stage_matches_scalar_reference(rng, share, ff, mlp):
    cfg = FgaConfig(channels=4, scale=2, use_ff=ff, use_mlp=mlp, share_mlp=share, mlp_hidden=5)
    p = randomize(init_params(cfg), rng)
    x = rng.normal(size=(1, 4, 3, 3))
    got = ffmlp_stage(x, p, 0, 2, cfg)
    ref = oracles_fga.stage(x, p, 0, 2, use_ff=ff, use_mlp=mlp)
    assert np.max(np.abs(got - ref)) < 1e-10


# ---------------------------------------------------------------- CAL


def test_cal_single_lr_token_with_identity_projections(rng):
    c = 4
    cfg = FgaConfig(channels=c, scale=2, win_post=2, win_pre=1, alpha=0.0)
    p = randomize(init_params(cfg), rng)
    p["cal.proj_k"] = np.eye(c)
    p["cal.proj_v"] = np.eye(c)
    f_lr = rng.normal(size=(1, c, 2, 3))
    f_hr = rng.normal(size=(1, c, 4, 6))
    out, attn = cal_forward(f_lr, f_hr, p, cfg, return_attention=True)
    assert attn.shape == (1, 6, 4, 1)
    assert np.all(attn == 1.0)
    # by hand: every HR pixel receives the projected, normalized value of its LR pixel
    mu = f_lr.mean(axis=1, keepdims=True)
    var = f_lr.var(axis=1, keepdims=True)
    g, o = p["cal.norm_kv.gain"].reshape(1, c, 1, 1), p["cal.norm_kv.offset"].reshape(1, c, 1, 1)
    v = (f_lr - mu) / np.sqrt(var + 1e-5) * g + o
    projected = np.einsum("nchw,co->nohw", v, p["cal.proj_out.weight"]) + p["cal.proj_out.bias"].reshape(1, c, 1, 1)
    x = f_hr + numcore.nn_interp(projected, 2)
    zero_attn = dict(p)
    zero_attn["cal.proj_out.weight"] = np.zeros((c, c))
    zero_attn["cal.proj_out.bias"] = np.zeros(c)
    # the feed-forward branch of x through the same weights
    expected = cal_forward(f_lr, x, zero_attn, cfg)
    assert np.max(np.abs(out - expected)) < 1e-12


def test_cal_zero_output_projection_leaves_only_mlp_branch(rng):
    c = 4
    cfg = FgaConfig(channels=c, scale=2)
    p = randomize(init_params(cfg), rng)
    p["cal.proj_out.weight"] = np.zeros((c, c))
    p["cal.proj_out.bias"] = np.zeros(c)
    f_lr = rng.normal(size=(1, c, 4, 4))
    f_hr = rng.normal(size=(1, c, 8, 8))
    out = cal_forward(f_lr, f_hr, p, cfg)
    y = fga.G.layer_norm(f_hr, p["cal.norm_mlp.gain"], p["cal.norm_mlp.offset"])
    y = numcore.conv2d(fga.G.gelu(numcore.conv2d(y, p["cal.ffn1.weight"], p["cal.ffn1.bias"])), p["cal.ffn2.weight"], p["cal.ffn2.bias"])
    assert np.max(np.abs(out - (f_hr + y))) < 1e-12


def test_cal_default_window_pairs(rng):
    cfg = FgaConfig(channels=8, scale=4)
    p = init_params(cfg)
    f_lr = rng.normal(size=(1, 8, 4, 4))
    f_hr = rng.normal(size=(1, 8, 16, 16))
    _, attn = cal_forward(f_lr, f_hr, p, cfg, return_attention=True)
    # 16x16 / 4^2 = 16 window pairs, 16 queries x 25 keys each
    assert attn.shape == (1, 16, 16, 25)
    assert np.allclose(attn.sum(axis=-1), 1.0)


def test_cal_rejects_bad_ratio(rng):
    cfg = FgaConfig(channels=4, scale=2)
    with pytest.raises(ShapeError):
        cal_forward(np.zeros((1, 4, 2, 2)), np.zeros((1, 4, 6, 6)), init_params(cfg), cfg)


def test_cal_matches_scalar_reference_with_padding(rng):
    # 3x3 LR at x2: the 6x6 HR map is mirror-padded to two 4x4 tiles per axis
    cfg = FgaConfig(channels=4, scale=2, win_post=4, win_pre=3)
    p = randomize(init_params(cfg), rng)
    f_lr = rng.normal(size=(1, 4, 3, 3))
    f_hr = rng.normal(size=(1, 4, 6, 6))
    got = cal_forward(f_lr, f_hr, p, cfg)
    ref = oracles_fga.cal(f_lr, f_hr, p, 2, 4, 3)
    assert np.max(np.abs(got - ref)) < 1e-10


# ---------------------------------------------------------------- full forward


def test_scale_one_all_off_is_conv_conv(rng):
    cfg = FgaConfig(channels=4, scale=1, use_ff=False, use_mlp=False, use_cal=False)
    p = randomize(init_params(cfg), rng)
    x = rng.normal(size=(1, 4, 5, 5))
    y = fga_forward(x, p, cfg)
    ref = naive_conv2d(naive_conv2d(x, p["stage0.conv.weight"], p["stage0.conv.bias"], 1, 1), p["final.weight"], p["final.bias"], 1, 1)
    assert y.shape == (1, 3, 5, 5)
    assert np.max(np.abs(y - ref)) < 1e-12


def test_x4_shape_contract(rng):
    cfg = FgaConfig(channels=8, scale=4)
    y = fga_forward(rng.normal(size=(1, 8, 8, 8)), init_params(cfg), cfg)
    assert y.shape == (1, 3, 32, 32)


@pytest.mark.parametrize(
    "scale,kwargs",
    [(2, {}), (4, {}), (2, {"win_pre": 2, "alpha": 0.0}), (2, {"share_mlp": False})],
)
def test_full_forward_matches_scalar_reference(rng, scale, kwargs):
    cfg = FgaConfig(channels=8, scale=scale, mlp_hidden=6, **kwargs)
    p = randomize(init_params(cfg), rng, scale=0.3)
    x = rng.normal(size=(1, 8, 4, 4))
    got = fga_forward(x, p, cfg)
    ref = oracles_fga.fga(x, p, cfg.stage_scales, scale, cfg.win_post, cfg.win_pre)
    assert np.max(np.abs(got - ref)) < 1e-10


def test_forward_is_deterministic(rng):
    cfg = FgaConfig(channels=8, scale=2)
    p = init_params(cfg)
    x = rng.normal(size=(1, 8, 4, 4))
    assert np.array_equal(fga_forward(x, p, cfg), fga_forward(x.copy(), p, cfg))


def test_channel_mismatch(rng):
    cfg = FgaConfig(channels=8, scale=2)
    with pytest.raises(ShapeError):
        fga_forward(np.zeros((1, 6, 4, 4)), init_params(cfg), cfg)


# ---------------------------------------------------------------- baselines


@pytest.mark.parametrize("scale", [1, 2, 3, 4])
def test_all_toggles_off_equals_spc_bitwise(rng, scale):
    cfg = FgaConfig(channels=4, scale=scale, use_ff=False, use_mlp=False, use_cal=False)
    p = randomize(init_params(cfg, "spc"), rng)
    x = rng.normal(size=(1, 4, 5, 5))
    assert np.array_equal(fga_forward(x, p, cfg), baseline_forward("spc", x, p, scale))


def test_spc_with_identity_final_conv_is_shuffle_of_conv(rng):
    c = 4
    cfg = FgaConfig(channels=c, scale=2, out_channels=c)
    p = randomize(init_params(cfg, "spc"), rng)
    p["final.weight"] = np.zeros((c, c, 3, 3))
    p["final.weight"][np.arange(c), np.arange(c), 1, 1] = 1.0
    p["final.bias"] = np.zeros(c)
    x = rng.normal(size=(1, c, 3, 3))
    ref = numcore.pixel_shuffle(numcore.conv2d(x, p["stage0.conv.weight"], p["stage0.conv.bias"], padding=1), 2)
    assert np.array_equal(baseline_forward("spc", x, p, 2), ref)


def test_deconv_uniform_kernel_overlap_pattern():
    cfg = FgaConfig(channels=2, scale=4)
    p = init_params(cfg, "deconv")
    p["deconv.weight"] = np.zeros((1, 1, 6, 6))
    p["deconv.weight"][:] = 1.0
    p["deconv.bias"] = np.zeros(1)
    p["final.weight"] = np.zeros((1, 1, 3, 3))
    p["final.weight"][0, 0, 1, 1] = 1.0
    p["final.bias"] = np.zeros(1)
    y = baseline_forward("deconv", np.ones((1, 1, 3, 3)), p, 4)[0, 0]
    # taps per output row: a 6-wide kernel at stride 4 overlaps unevenly (period 4)
    per_axis = np.array([1, 1, 1, 2, 2, 1, 1, 2, 2, 1, 1, 1], dtype=float)
    assert y.shape == (12, 12)
    assert np.array_equal(y, np.outer(per_axis, per_axis))


def test_all_methods_share_output_shape(rng):
    cfg = FgaConfig(channels=4, scale=4)
    x = rng.normal(size=(1, 4, 4, 4))
    shapes = {fga.upsampler_forward(m, x, init_params(cfg, m), cfg).shape for m in fga.METHODS}
    assert shapes == {(1, 3, 16, 16)}


def test_unknown_method():
    with pytest.raises(ConfigError):
        init_params(FgaConfig(channels=4), "bicubic")


def test_constant_input_equivariance_smoke(rng):
    # SPC features of a constant map are constant per channel away from the
    # zero-padded border; Fourier modulation makes every channel vary.
    cfg = FgaConfig(channels=4, scale=2)
    p = randomize(init_params(cfg), rng)
    x = np.ones((1, 4, 6, 6))
    expanded = numcore.conv2d(x, p["stage0.conv.weight"], p["stage0.conv.bias"], padding=1)
    interior = expanded[:, :, 1:-1, 1:-1]
    assert np.max(interior.var(axis=(2, 3))) < 1e-24
    modulated = fourier_feature_embed(expanded, 2, p["stage0.freq"])[:, :, 1:-1, 1:-1]
    assert np.min(modulated.var(axis=(2, 3))) > 0


# ---------------------------------------------------------------- FLOPs


def test_flops_formulas_by_substitution():
    H = W = 64
    C, M, r, a = 64, 16, 4, 0.5
    hw = H * W
    assert flops_estimate("sa", H, W, C, M) == 4 * hw * C**2 + 2 * M**2 * hw * C
    ca = (1 + 2 / r**2) * hw * C**2 + (2 * M**2 / r**2) * hw * C
    assert flops_estimate("ca", H, W, C, M, r) == pytest.approx(ca, rel=1e-15)
    ow = (1 + 2 / r**2) * hw * C**2 + (1 + a) ** 2 * (2 * M**2 / r**2) * hw * C
    assert flops_estimate("owca", H, W, C, M, r, a) == pytest.approx(ow, rel=1e-15)
    assert flops_estimate("sa", H, W, C, M) == 67108864 + 134217728
    assert flops_estimate("ca", H, W, C, M, r) == pytest.approx(18874368 + 8388608)


def test_ca_at_unit_scale_drops_one_projection_term():
    H, W, C, M = 8, 8, 16, 4
    diff = flops_estimate("sa", H, W, C, M) - flops_estimate("ca", H, W, C, M, 1, 0.0)
    assert diff == H * W * C * C


@settings(max_examples=200, deadline=None)
@given(
    H=st.integers(1, 512),
    W=st.integers(1, 512),
    C=st.integers(1, 256),
    M=st.integers(1, 32),
    r=st.integers(1, 8),
)
def test_owca_without_overlap_equals_ca(H, W, C, M, r):
    assert flops_estimate("owca", H, W, C, M, r, 0.0) == flops_estimate("ca", H, W, C, M, r)
    assert flops_estimate("ca", H, W, C, M, r) < flops_estimate("sa", H, W, C, M)


# ---------------------------------------------------------------- end-to-end gradient


@pytest.mark.parametrize("method", ["fga", "spc", "deconv", "interp_conv"])
def test_pipeline_gradients_match_finite_differences(rng, method):
    from fgasr.grad import GradTape, backward, finite_diff_gradient, gradient_mismatch
    from fgasr.losses import combined_loss

    cfg = FgaConfig(channels=4, scale=2, win_post=2, win_pre=3, mlp_hidden=4)
    p = randomize(init_params(cfg, method), rng, 0.3)
    x = rng.normal(size=(1, 4, 3, 3))
    target = rng.uniform(size=(1, 3, 6, 6))

    def loss_of(params):
        return combined_loss(fga.upsampler_forward(method, x, params, cfg), target).value

    tape = GradTape()
    out = fga.upsampler_forward(method, x, p, cfg, tape=tape)
    loss = combined_loss(out, target, tape=tape)
    grads = backward(1.0, tape, p, output=loss.node)
    worst = 0.0
    for name in p:
        def f(v, name=name):
            q = dict(p)
            q[name] = v
            return loss_of(q)

        worst = max(worst, gradient_mismatch(grads[name], finite_diff_gradient(f, p[name])))
    assert worst < 1.0
