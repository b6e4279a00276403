"""
Command line walkthrough
========================

Each subcommand run once in a scratch directory. The same calls work from a
shell as ``fgasr <command> ...``.
"""

# %%
import os
import tempfile

import numpy as np

from fgasr import io
from fgasr.cli import main

os.chdir(tempfile.mkdtemp())
rng = np.random.default_rng(0)
io.save_png("a.png", rng.uniform(size=(3, 32, 32)))
io.save_png("b.png", np.clip(io.load_png("a.png") + 0.1 * rng.normal(size=(3, 32, 32)), 0, 1))

# %%
main(["frc", "a.png", "b.png"])
main(["spectrum", "a.png", "--out-dir", "spec"])
main(["flops", "--H", "64", "--W", "64", "--C", "64", "--M", "16", "--r", "4", "--alpha", "0.5"])

# %% Train a tiny model, then reuse its weights for upsampling
main(["train-toy", "--scale", "2", "--channels", "8", "--iterations", "20", "--size", "16", "--out-dir", "toy"])
main(["upsample", "a.png", "up.png", "--scale", "2", "--weights", "toy/weights", "--features", "feats"])
print(sorted(os.listdir("toy")), sorted(os.listdir("feats")))

# %% Every output has a schema; manifests make runs replayable
main(["validate", "toy/log.csv", "--kind", "log"])
main(["replay", "toy/manifest.json"])
