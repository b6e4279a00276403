"""
The FGA upsampler end to end
============================

Configuration, parameter budget, a forward pass and attention shapes.
"""

# %%
import numpy as np

from fgasr import fga
from fgasr.fga import FgaConfig

cfg = FgaConfig()  # x4, 64 channels, 5x5 LR / 4x4 HR windows
print("stages:", cfg.stage_scales, " windows:", cfg.win_pre, "/", cfg.win_post)
print("parameters  fga:", fga.parameter_count(cfg), " spc:", fga.parameter_count(cfg, "spc"))

# %% A small configuration so the forward runs instantly
small = FgaConfig(channels=16, scale=4)
params = fga.init_params(small)
x = np.random.default_rng(0).normal(size=(1, 16, 8, 8))
y, feats = fga.fga_forward(x, params, small, return_features=True)
print("input", x.shape, "-> output", y.shape, " post features", feats["post"].shape)

# %% Every HR window of 4x4 queries a 5x5 LR neighbourhood
lr = np.random.default_rng(1).normal(size=(1, 16, 4, 4))
hr = fga.ffmlp_stage(fga.ffmlp_stage(lr, params, 0, 2, small), params, 1, 2, small)
_, attn = fga.cal_forward(lr, hr, params, small, return_attention=True)
print("attention maps (batch, windows, queries, keys):", attn.shape)

# %% With every module switched off the pipeline is plain sub-pixel convolution
bare = FgaConfig(channels=16, scale=4, use_ff=False, use_mlp=False, use_cal=False)
p = fga.init_params(bare, "spc")
same = np.array_equal(fga.fga_forward(x, p, bare), fga.baseline_forward("spc", x, p, 4))
print("toggles off == spc:", same)

# %% Attention cost at 64x64 HR, C=64, M=16, x4
for kind, alpha in (("sa", 0), ("ca", 0), ("owca", 0.5)):
    print(f"{kind:5s}", f"{fga.flops_estimate(kind, 64, 64, 64, 16, 4, alpha):.3e}")
