"""
Aliasing of a transposed convolution
====================================

Fit a deconvolution upsampler and FGA to the same band-limited sinusoid,
then look at how much energy the upsampled features carry at the images of
the LR frequency.
"""

# %%
from fgasr import metrics
from fgasr.fga import FgaConfig
from fgasr.train import TrainConfig, sinusoid_target, train_toy

freq = (0, 3)
target = sinusoid_target(32, freq)
cfg = FgaConfig(channels=16, scale=4)
print("alias bins:", metrics.alias_bins((32, 32), 4, freq)[:6], "...")

# %%
for method in ("deconv", "spc", "fga"):
    res = train_toy(target, 4, TrainConfig(iterations=200, method=method, loss="l1+fl1"), cfg)
    alias, fund = metrics.alias_energy(res.features["post"], 4, freq)
    print(f"{method:7s} alias/fundamental = {alias / fund:.3f}   final psnr = {res.log[-1]['psnr']:.2f} dB")
