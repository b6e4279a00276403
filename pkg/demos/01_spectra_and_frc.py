"""
Spectra, rings and Fourier ring correlation
===========================================

How the spectral measuring tools behave on hand-made images.
"""

# %%
import numpy as np

from fgasr import metrics, numcore

rng = np.random.default_rng(0)

# %% A cosine along x puts all energy in two conjugate bins
x = np.tile(np.cos(2 * np.pi * 3 * np.arange(16) / 16), (16, 1))
spec = numcore.fft2d(x)
peaks = np.argwhere(spec.magnitude() > 1e-9)
print("non-zero bins:", peaks.tolist())

# %% 64 rings of roughly equal population on a 64x64 plane
rings = metrics.ring_index_map(64, 64)
print("ring sizes (first 8):", rings.counts[:8].tolist(), "...  total", rings.counts.sum())
print("high-frequency rings start at", rings.i_hf)

# %% FRC of an image with a noisy copy, and with itself
img = rng.normal(size=(64, 64))
noisy = img + 0.8 * rng.normal(size=img.shape)
print("frc_auc(img, img)   =", round(metrics.frc(img, img, rings).frc_auc, 6))
print("frc_auc(img, noisy) =", round(metrics.frc(img, noisy, rings).frc_auc, 4))

# A 4-neighbour average has a negative response near Nyquist: the top rings flip sign
blurred = 0.25 * (np.roll(img, 1, 0) + np.roll(img, -1, 0) + np.roll(img, 1, 1) + np.roll(img, -1, 1))
curve = metrics.frc(img, blurred, rings)
print("FRC(img, blurred) low rings:", np.round(curve.values[:4], 3), " high rings:", np.round(curve.values[-4:], 3))

# %% The band map keeps only the top-quartile rings
i, j = np.mgrid[0:32, 0:32]
board = (-1.0) ** (i + j)
print("checkerboard energy kept by the band map:", np.sum(metrics.hf_band_map(board) ** 2) / np.sum(board**2))
