"""Fourier-guided attention upsampler, baseline upsamplers and FLOPs counts.

Parameters are plain ``dict[str, ndarray]`` keyed by dotted names. The
stage convolutions and the final convolution use the same names in the FGA
and sub-pixel-convolution parameter sets so weights can be shared between
them.

Every forward accepts an optional :class:`~fgasr.grad.GradTape`; when given,
the pass is recorded for :func:`fgasr.grad.backward`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import grad as G
from . import numcore
from .errors import ConfigError, ShapeError

Params = dict[str, np.ndarray]

METHODS = ("fga", "spc", "deconv", "interp_conv")

_DEFAULT_STAGES = {1: [1], 2: [2], 3: [3], 4: [2, 2], 8: [2, 2, 2]}


def default_stage_scales(r: int) -> list[int]:
    """Pixel-shuffle pyramid: factors of 2 first, then the remaining primes."""
    if r in _DEFAULT_STAGES:
        return list(_DEFAULT_STAGES[r])
    out, rest, p = [], r, 2
    while rest > 1:
        while rest % p == 0:
            out.append(p)
            rest //= p
        p += 1
    return out


def default_win_post(r: int) -> int:
    """Smallest multiple of ``r`` that is at least 4."""
    return r * max(1, -(-4 // r))


@dataclass
class FgaConfig:
    """Structure of an FGA upsampler.

    ``win_pre`` is the LR-side attention window. When it is None the window
    follows the overlap rule ``round((1 + alpha) * win_post / scale)``.
    """

    channels: int = 64
    scale: int = 4
    stage_scales: list[int] | None = None
    mlp_hidden: int | None = None
    win_pre: int | None = 5
    win_post: int | None = None
    alpha: float = 0.5
    use_ff: bool = True
    use_mlp: bool = True
    use_cal: bool = True
    share_mlp: bool = True
    ffn_ratio: int = 2
    out_channels: int = 3
    deconv_kernel: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.channels < 2 or self.channels % 2:
            raise ConfigError(f"channels must be even (cos/sin split), got {self.channels}")
        if self.stage_scales is None:
            self.stage_scales = default_stage_scales(self.scale)
        self.stage_scales = [int(s) for s in self.stage_scales]
        if any(s < 1 for s in self.stage_scales) or math.prod(self.stage_scales) != self.scale:
            raise ConfigError(f"stage scales {self.stage_scales} do not multiply to {self.scale}")
        if self.mlp_hidden is None:
            self.mlp_hidden = self.channels
        if self.win_post is None:
            self.win_post = default_win_post(self.scale)
        if self.win_post % self.scale:
            raise ConfigError(f"win_post {self.win_post} must be a multiple of the scale {self.scale}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.win_pre is None:
            self.win_pre = max(self.lr_stride, numcore.overlap_window_size(self.win_post, self.scale, self.alpha))
        if self.win_pre < self.lr_stride:
            raise ConfigError(f"win_pre {self.win_pre} is smaller than the LR stride {self.lr_stride}")
        if self.alpha == 0.0 and self.win_pre != self.lr_stride:
            raise ConfigError("alpha = 0 requires win_pre == win_post / scale")
        if self.deconv_kernel is None:
            self.deconv_kernel = self.scale + 2
        if (self.deconv_kernel - self.scale) % 2 or self.deconv_kernel < self.scale:
            raise ConfigError("deconv_kernel - scale must be a non-negative even number")

    @property
    def lr_stride(self) -> int:
        return self.win_post // self.scale

    @property
    def effective_alpha(self) -> float:
        """Overlap ratio implied by the window pair."""
        return self.win_pre / self.lr_stride - 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FgaConfig":
        return cls(**d)


def lattice_frequencies(count: int) -> np.ndarray:
    """First ``count`` non-negative integer lattice points ordered by norm."""
    k = int(math.isqrt(count)) + 2
    pts = sorted(((a * a + b * b, a, b) for a in range(k) for b in range(k)))
    return np.array([[a, b] for _, a, b in pts[:count]], dtype=np.float64)


# --------------------------------------------------------------------------
# Parameter layout
# --------------------------------------------------------------------------


def _stage_shapes(cfg: FgaConfig, i: int, s: int, fga: bool) -> dict[str, tuple]:
    c = cfg.channels
    shapes = {
        f"stage{i}.conv.weight": (s * s * c, c, 3, 3),
        f"stage{i}.conv.bias": (s * s * c,),
    }
    if fga and cfg.use_ff:
        shapes[f"stage{i}.freq"] = (s * s, c // 2, 2)
    if fga and cfg.use_mlp:
        g = 1 if cfg.share_mlp else s * s
        hid = cfg.mlp_hidden
        shapes[f"stage{i}.mlp1.weight"] = (g, hid, c)
        shapes[f"stage{i}.mlp1.bias"] = (g, hid)
        shapes[f"stage{i}.mlp2.weight"] = (g, c, hid)
        shapes[f"stage{i}.mlp2.bias"] = (g, c)
    return shapes


def _cal_shapes(cfg: FgaConfig) -> dict[str, tuple]:
    c = cfg.channels
    f = cfg.ffn_ratio * c
    return {
        "cal.norm_q.gain": (c,),
        "cal.norm_q.offset": (c,),
        "cal.norm_kv.gain": (c,),
        "cal.norm_kv.offset": (c,),
        "cal.proj_k": (c, c),
        "cal.proj_v": (c, c),
        "cal.proj_out.weight": (c, c),
        "cal.proj_out.bias": (c,),
        "cal.norm_mlp.gain": (c,),
        "cal.norm_mlp.offset": (c,),
        "cal.ffn1.weight": (f, c, 1, 1),
        "cal.ffn1.bias": (f,),
        "cal.ffn2.weight": (c, f, 1, 1),
        "cal.ffn2.bias": (c,),
    }


def _final_shapes(cfg: FgaConfig) -> dict[str, tuple]:
    return {
        "final.weight": (cfg.out_channels, cfg.channels, 3, 3),
        "final.bias": (cfg.out_channels,),
    }


def param_shapes(cfg: FgaConfig, method: str = "fga") -> dict[str, tuple]:
    """Ordered name -> shape map of the learnable tensors of ``method``."""
    c = cfg.channels
    shapes: dict[str, tuple] = {}
    if method in ("fga", "spc"):
        for i, s in enumerate(cfg.stage_scales):
            shapes.update(_stage_shapes(cfg, i, s, fga=method == "fga"))
        if method == "fga" and cfg.use_cal:
            shapes.update(_cal_shapes(cfg))
    elif method == "deconv":
        k = cfg.deconv_kernel
        shapes["deconv.weight"] = (c, c, k, k)
        shapes["deconv.bias"] = (c,)
    elif method == "interp_conv":
        shapes["interp.conv.weight"] = (c, c, 3, 3)
        shapes["interp.conv.bias"] = (c,)
    else:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    shapes.update(_final_shapes(cfg))
    return shapes


def parameter_count(cfg: FgaConfig, method: str = "fga") -> int:
    return sum(math.prod(s) for s in param_shapes(cfg, method).values())


def _fan_in(name: str, shape: tuple) -> int:
    if name.endswith("proj_k") or name.endswith("proj_v") or name.endswith("proj_out.weight"):
        return shape[0]  # right-multiplied: tokens @ W
    if name.startswith("deconv"):
        # Cin x Cout x k x k; bound by the full kernel footprint per input channel
        return shape[0] * shape[2] * shape[3]
    return math.prod(shape[-1:]) if len(shape) == 3 else math.prod(shape[1:])


def init_params(cfg: FgaConfig, method: str = "fga") -> Params:
    """Deterministic initialization from ``cfg.seed``.

    Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)); biases and offsets 0;
    normalization gains 1; Fourier frequencies on the integer lattice.
    """
    rng = np.random.default_rng(cfg.seed)
    params: Params = {}
    for name, shape in param_shapes(cfg, method).items():
        if name.endswith(".freq"):
            lat = lattice_frequencies(shape[1])
            params[name] = np.broadcast_to(lat, shape).copy()
        elif name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith(".bias") or name.endswith(".offset"):
            params[name] = np.zeros(shape)
        else:
            bound = math.sqrt(1.0 / _fan_in(name, shape))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# --------------------------------------------------------------------------
# FF-MLP stage
# --------------------------------------------------------------------------


def subpixel_coordinates(h: int, w: int, s: int) -> np.ndarray:
    """Unshuffled HR coordinates for an ``h x w`` map upsampled by ``s``.

    Returns ``s^2 x 2 x h x w``: entry ``[g, :, i, j]`` is the (y, x)
    position of output pixel ``(s*i + a, s*j + b)`` with ``g = a*s + b``.
    """
    grid = numcore.coordinate_grid(s * h, s * w)[None]
    v = numcore.pixel_unshuffle(grid, s)[0]  # (2 s^2) x h x w, index d*s^2 + g
    return np.ascontiguousarray(v.reshape(2, s * s, h, w).transpose(1, 0, 2, 3))


def fourier_feature_embed(F, s: int, freq_matrix, tape: G.GradTape | None = None) -> np.ndarray:
    """Modulate expanded features ``N x (s^2 C) x h x w`` group by group."""
    F = np.asarray(F, dtype=np.float64)
    n, ch, h, w = F.shape
    groups = s * s
    if ch % groups or freq_matrix.shape != (groups, ch // groups // 2, 2) or (ch // groups) % 2:
        raise ShapeError(
            f"features with {ch} channels do not match {groups} groups and "
            f"frequency matrix {freq_matrix.shape}"
        )
    coords = subpixel_coordinates(h, w, s)
    xg = G.to_groups(F, s, tape=tape)
    yg = G.fourier_modulate(xg, freq_matrix, coords, tape=tape)
    return G.from_groups(yg, tape=tape)


def ffmlp_stage(x, params: Params, i: int, s: int, cfg: FgaConfig, tape: G.GradTape | None = None):
    """Expansion conv, Fourier modulation, per-group MLP, pixel shuffle."""
    p = f"stage{i}."
    y = G.conv2d(x, params[p + "conv.weight"], params[p + "conv.bias"], padding=1, tape=tape)
    if cfg.use_ff or cfg.use_mlp:
        yg = G.to_groups(y, s, tape=tape)
        if cfg.use_ff:
            coords = subpixel_coordinates(y.shape[2], y.shape[3], s)
            yg = G.fourier_modulate(yg, params[p + "freq"], coords, tape=tape)
        if cfg.use_mlp:
            hid = G.grouped_linear(yg, params[p + "mlp1.weight"], params[p + "mlp1.bias"], tape=tape)
            hid = G.gelu(hid, tape=tape)
            yg = G.grouped_linear(hid, params[p + "mlp2.weight"], params[p + "mlp2.bias"], tape=tape)
        y = G.from_groups(yg, tape=tape)
    return G.pixel_shuffle(y, s, tape=tape)


# --------------------------------------------------------------------------
# Correlation attention
# --------------------------------------------------------------------------


def cal_windows(lr_hw: tuple[int, int], cfg: FgaConfig):
    """Paired window indices: HR tiling and overlapping LR windows."""
    h, w = lr_hw
    r = cfg.scale
    m = cfg.win_post
    hr_rows, hr_cols, _, grid = numcore.window_indices(h * r, w * r, m, m)
    lr_rows, lr_cols, _, lr_grid = numcore.window_indices(h, w, cfg.win_pre, cfg.lr_stride, count=grid)
    return (hr_rows, hr_cols), (lr_rows, lr_cols), grid


def cal_forward(F_lr, F_hr, params: Params, cfg: FgaConfig, tape: G.GradTape | None = None, return_attention: bool = False):
    """Cross-resolution window attention from HR queries to LR keys/values.

    One attention block with pre-normalization and two residual branches
    (attention, then a pointwise feed-forward MLP).
    """
    F_lr = np.asarray(F_lr, dtype=np.float64)
    F_hr = np.asarray(F_hr, dtype=np.float64)
    b, c, h, w = F_lr.shape
    r = cfg.scale
    if F_hr.shape != (b, c, h * r, w * r):
        raise ShapeError(f"HR features {F_hr.shape} are not {r}x the LR features {F_lr.shape}")
    (hr_rows, hr_cols), (lr_rows, lr_cols), grid = cal_windows((h, w), cfg)

    q_in = G.layer_norm(F_hr, params["cal.norm_q.gain"], params["cal.norm_q.offset"], tape=tape)
    kv_in = G.layer_norm(F_lr, params["cal.norm_kv.gain"], params["cal.norm_kv.offset"], tape=tape)
    q = G.gather_tokens(q_in, hr_rows, hr_cols, tape=tape)
    lr_tok = G.gather_tokens(kv_in, lr_rows, lr_cols, tape=tape)
    k = G.token_linear(lr_tok, params["cal.proj_k"], tape=tape)
    v = G.token_linear(lr_tok, params["cal.proj_v"], tape=tape)
    scores = G.scale(G.bmm(q, G.swap_last(k, tape=tape), tape=tape), 1.0 / math.sqrt(c), tape=tape)
    attn = G.softmax(scores, axis=-1, tape=tape)
    out = G.bmm(attn, v, tape=tape)
    out = G.token_linear(out, params["cal.proj_out.weight"], params["cal.proj_out.bias"], tape=tape)
    delta = G.merge_tiles(out, grid, (cfg.win_post, cfg.win_post), (h * r, w * r), tape=tape)
    x = G.add(F_hr, delta, tape=tape)

    y = G.layer_norm(x, params["cal.norm_mlp.gain"], params["cal.norm_mlp.offset"], tape=tape)
    y = G.conv2d(y, params["cal.ffn1.weight"], params["cal.ffn1.bias"], tape=tape)
    y = G.gelu(y, tape=tape)
    y = G.conv2d(y, params["cal.ffn2.weight"], params["cal.ffn2.bias"], tape=tape)
    x = G.add(x, y, tape=tape)
    if return_attention:
        return x, attn
    return x


# --------------------------------------------------------------------------
# Full upsamplers
# --------------------------------------------------------------------------


def fga_forward(F, params: Params, cfg: FgaConfig, tape: G.GradTape | None = None, return_features: bool = False):
    """Stages of FF-MLP + shuffle, then CAL, then the final 3x3 conv.

    With ``return_features`` also returns ``{"pre": F, "post": features fed
    to the final conv}``.
    """
    F = numcore.as_tensor(F, 4)
    if F.shape[1] != cfg.channels:
        raise ShapeError(f"input has {F.shape[1]} channels, config expects {cfg.channels}")
    x = F
    for i, s in enumerate(cfg.stage_scales):
        x = ffmlp_stage(x, params, i, s, cfg, tape=tape)
    if cfg.use_cal:
        x = cal_forward(F, x, params, cfg, tape=tape)
    out = G.conv2d(x, params["final.weight"], params["final.bias"], padding=1, tape=tape)
    if return_features:
        return out, {"pre": F, "post": x}
    return out


def _spc_stage_scales(params: Params) -> list[int]:
    scales = []
    i = 0
    while f"stage{i}.conv.weight" in params:
        w = params[f"stage{i}.conv.weight"]
        s = math.isqrt(w.shape[0] // w.shape[1])
        if s * s * w.shape[1] != w.shape[0]:
            raise ShapeError(f"stage{i} conv does not expand channels by a square factor")
        scales.append(s)
        i += 1
    return scales


def baseline_forward(kind: str, x, params: Params, r: int, tape: G.GradTape | None = None, return_features: bool = False):
    """Baseline upsamplers followed by the shared final conv.

    ``spc``: per stage conv (C -> s^2 C) + pixel shuffle; ``deconv``: one
    transposed conv with stride r; ``interp_conv``: nearest-neighbour
    upsampling then a 3x3 conv.
    """
    x = numcore.as_tensor(x, 4)
    if kind == "spc":
        scales = _spc_stage_scales(params)
        if math.prod(scales) != r:
            raise ShapeError(f"spc stage scales {scales} do not multiply to {r}")
        y = x
        for i, s in enumerate(scales):
            y = G.conv2d(y, params[f"stage{i}.conv.weight"], params[f"stage{i}.conv.bias"], padding=1, tape=tape)
            y = G.pixel_shuffle(y, s, tape=tape)
    elif kind == "deconv":
        wt = params["deconv.weight"]
        k = wt.shape[2]
        if (k - r) % 2 or k < r:
            raise ShapeError(f"deconv kernel {k} cannot produce an exact x{r} output")
        y = G.transposed_conv2d(x, wt, params["deconv.bias"], stride=r, padding=(k - r) // 2, tape=tape)
    elif kind == "interp_conv":
        y = G.nn_interp(x, r, tape=tape)
        y = G.conv2d(y, params["interp.conv.weight"], params["interp.conv.bias"], padding=1, tape=tape)
    else:
        raise ConfigError(f"unknown baseline {kind!r}")
    out = G.conv2d(y, params["final.weight"], params["final.bias"], padding=1, tape=tape)
    if return_features:
        return out, {"pre": x, "post": y}
    return out


def upsampler_forward(method: str, x, params: Params, cfg: FgaConfig, tape: G.GradTape | None = None, return_features: bool = False):
    """Dispatch to :func:`fga_forward` or :func:`baseline_forward`."""
    if method == "fga":
        return fga_forward(x, params, cfg, tape=tape, return_features=return_features)
    return baseline_forward(method, x, params, cfg.scale, tape=tape, return_features=return_features)


# --------------------------------------------------------------------------
# Complexity
# --------------------------------------------------------------------------


def flops_estimate(kind: str, H: float, W: float, C: float, M: float, r: float = 1.0, alpha: float = 0.0) -> float:
    """Closed-form multiply counts of self, cross and overlapping cross attention."""
    hw = H * W
    if kind == "sa":
        return 4.0 * hw * C * C + 2.0 * M * M * hw * C
    proj = (1.0 + 2.0 / (r * r)) * hw * C * C
    attn = (2.0 * M * M / (r * r)) * hw * C
    if kind == "ca":
        return proj + attn
    if kind == "owca":
        return proj + (1.0 + alpha) ** 2 * attn
    raise ConfigError(f"unknown attention kind {kind!r}")
