"""Fourier-guided attention upsampling, baselines, frequency losses and FRC metrics."""

from .errors import ConfigError, FgaError, NumericError, ShapeError
from .fga import (
    FgaConfig,
    baseline_forward,
    cal_forward,
    fga_forward,
    flops_estimate,
    init_params,
    parameter_count,
    upsampler_forward,
)
from .losses import l1_freq, l1_pixel

__version__ = "0.1.0"
