"""
Component ablation at desk scale
================================

Conv only, then MLP, Fourier features, attention and the frequency loss
switched on one at a time.
"""

# %%
from fgasr.fga import FgaConfig
from fgasr.train import TrainConfig, ablate, report_csv, texture_suite

targets = texture_suite(2, size=32)
records, outputs = ablate(targets, r=4, train_cfg=TrainConfig(iterations=100), fga_cfg=FgaConfig(channels=16, scale=4))
print(report_csv(records))
