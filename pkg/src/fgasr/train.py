"""Desk-scale training: Adam, single-image upsampler fitting and ablations.

A fixed-architecture 3x3 shallow conv (``encoder.*``) maps the RGB LR input
to C feature channels and stands in for the SR backbone, so the only thing
that changes between runs is the upsampler.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import grad as G
from . import losses, metrics
from .errors import ConfigError, NumericError, ShapeError
from .fga import FgaConfig, Params, init_params, upsampler_forward

LOSS_CHOICES = ("l1", "fl1", "l1+fl1")
SCHEDULES = ("constant", "cosine")
DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "l1"
    lambda_pix: float = 1.0
    lambda_freq: float = 1.0
    seed: int = 0
    method: str = "fga"
    train_encoder: bool = True
    schedule: str = "constant"

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if self.loss not in LOSS_CHOICES:
            raise ConfigError(f"loss must be one of {LOSS_CHOICES}, got {self.loss!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")

    def loss_weights(self) -> tuple[float, float]:
        if self.loss == "l1":
            return 1.0, 0.0
        if self.loss == "fl1":
            return 0.0, 1.0
        return self.lambda_pix, self.lambda_freq

    def lr_at(self, it: int) -> float:
        """Learning rate of iteration ``it``; cosine decays to 0 at the end."""
        if self.schedule == "cosine":
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * it / self.iterations))
        return self.lr


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Params, grads: Params, state: OptimizerState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, OptimizerState(m_new, v_new, t)


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------


def block_downsample(img, r: int) -> np.ndarray:
    """r x r block mean of a ``C x H x W`` (or ``N x C x H x W``) image."""
    img = np.asarray(img, dtype=np.float64)
    *lead, h, w = img.shape
    if h % r or w % r:
        raise ShapeError(f"extents {h}x{w} are not divisible by {r}")
    return img.reshape(*lead, h // r, r, w // r, r).mean(axis=(-1, -3))


def texture_target(size: int = 32, seed: int = 0, channels: int = 3) -> np.ndarray:
    """Seeded periodic texture: a few oriented gratings over 1/f noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = np.zeros((size, size))
    for _ in range(4):
        ky, kx = rng.integers(-size // 2 + 1, size // 2, size=2)
        base += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (ky * yy + kx * xx) + rng.uniform(0, 2 * np.pi))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.sqrt(fy**2 + fx**2)
    radius[0, 0] = 1.0
    noise = np.fft.ifft2(np.fft.fft2(rng.normal(size=(size, size))) / radius).real
    base += noise / (noise.std() + 1e-12) * 0.5
    colour = rng.uniform(0.4, 1.0, size=channels)
    img = colour[:, None, None] * base[None] + rng.normal(scale=0.2, size=(channels, 1, 1)) * base[None] ** 2
    img -= img.min()
    img /= img.max() + 1e-12
    return 0.1 + 0.8 * img


def texture_suite(count: int = 5, size: int = 32, seed: int = 0) -> list[np.ndarray]:
    return [texture_target(size, seed=seed + i) for i in range(count)]


def sinusoid_target(size: int = 32, cycles: tuple[int, int] = (0, 3), channels: int = 3) -> np.ndarray:
    """Band-limited single-frequency target, ``cycles`` per image along (y, x)."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    plane = 0.5 + 0.4 * np.cos(2 * np.pi * (cycles[0] * yy + cycles[1] * xx))
    return np.repeat(plane[None], channels, axis=0)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


class TrainingDiverged(NumericError):
    """Loss exceeded the divergence limit; ``params`` holds the last good state."""

    def __init__(self, message: str, params: Params, log: list[dict]):
        super().__init__(message)
        self.params = params
        self.log = log


@dataclass
class TrainResult:
    params: Params
    log: list[dict]
    output: np.ndarray
    lr_input: np.ndarray
    features: dict[str, np.ndarray]

    def log_csv(self) -> str:
        return metric_log_csv(self.log)


def metric_log_csv(log: list[dict]) -> str:
    buf = io.StringIO()
    buf.write("iter,l1,fl1,psnr\n")
    for row in log:
        buf.write(f"{row['iter']},{row['l1']:.12g},{row['fl1']:.12g},{row['psnr']:.12g}\n")
    return buf.getvalue()


def encoder_shapes(fga_cfg: FgaConfig, in_channels: int = 3) -> dict[str, tuple]:
    c = fga_cfg.channels
    return {"encoder.weight": (c, in_channels, 3, 3), "encoder.bias": (c,)}


def init_model(method: str, fga_cfg: FgaConfig, in_channels: int = 3) -> Params:
    """Encoder + upsampler parameters.

    The encoder and the final conv draw from a generator seeded independently
    of the method, so all methods share them at initialization.
    """
    c = fga_cfg.channels
    rng = np.random.default_rng([fga_cfg.seed, 1])
    bound = math.sqrt(1.0 / (in_channels * 9))
    params = {
        "encoder.weight": rng.uniform(-bound, bound, size=(c, in_channels, 3, 3)),
        "encoder.bias": np.zeros(c),
    }
    up = init_params(fga_cfg, method)
    shared = init_params(replace(fga_cfg, use_ff=False, use_mlp=False, use_cal=False), "spc")
    for name in up:
        if name.startswith("final.") or (name.startswith("stage") and name.endswith((".conv.weight", ".conv.bias"))):
            up[name] = shared[name]
    params.update(up)
    return params


def model_forward(method: str, lr_img, params: Params, fga_cfg: FgaConfig, tape: G.GradTape | None = None, return_features: bool = False):
    """Encoder conv followed by the upsampler; ``lr_img`` is ``N x 3 x h x w``."""
    feats = G.conv2d(lr_img, params["encoder.weight"], params["encoder.bias"], padding=1, tape=tape)
    return upsampler_forward(method, feats, params, fga_cfg, tape=tape, return_features=return_features)


def _as_batch(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    if img.ndim != 4:
        raise ShapeError(f"expected C x H x W or N x C x H x W, got {img.shape}")
    return img


def _log_row(it: int, out: np.ndarray, target: np.ndarray) -> dict:
    return {
        "iter": it,
        "l1": losses.l1_pixel(out, target).value,
        "fl1": losses.l1_freq(out, target).value,
        "psnr": metrics.psnr(out, target),
    }


def train_toy(target_hr, r: int, cfg: TrainConfig, fga_cfg: FgaConfig, params: Params | None = None) -> TrainResult:
    """Fit encoder + upsampler to reproduce ``target_hr`` from its block-mean LR.

    The log holds one row per iteration, measured before that iteration's
    update. Raises :class:`TrainingDiverged` if the loss exceeds 1e6.
    """
    if fga_cfg.scale != r:
        raise ConfigError(f"upsampler scale {fga_cfg.scale} != requested scale {r}")
    target = _as_batch(target_hr)
    lr_img = block_downsample(target, r)
    if params is None:
        params = init_model(cfg.method, fga_cfg, in_channels=target.shape[1])
    w_pix, w_freq = cfg.loss_weights()
    state = OptimizerState()
    log: list[dict] = []
    trainable = {k: v for k, v in params.items() if cfg.train_encoder or not k.startswith("encoder.")}

    for it in range(cfg.iterations):
        tape = G.GradTape()
        out = model_forward(cfg.method, lr_img, params, fga_cfg, tape=tape)
        loss = losses.combined_loss(out, target, w_pix, w_freq, tape=tape)
        log.append(_log_row(it, out, target))
        if not math.isfinite(loss.value) or loss.value > DIVERGENCE_LIMIT:
            raise TrainingDiverged(f"loss {loss.value:g} at iteration {it}", params, log)
        grads = G.backward(1.0, tape, trainable, output=loss.node)
        params, state = adam_step(params, grads, state, cfg.lr_at(it), cfg.beta1, cfg.beta2, cfg.eps)
        trainable = {k: params[k] for k in trainable}

    out, feats = model_forward(cfg.method, lr_img, params, fga_cfg, return_features=True)
    return TrainResult(params, log, out[0], lr_img[0], {k: v[0] for k, v in feats.items()})


# --------------------------------------------------------------------------
# Ablation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    name: str
    mlp: bool
    ff: bool
    cal: bool
    loss: str

    @property
    def components(self) -> int:
        return 1 + self.mlp + self.ff + self.cal + (self.loss != "l1")


# ordered by increasing number of active components
ABLATION_ROWS = (
    AblationRow("conv", False, False, False, "l1"),
    AblationRow("conv+mlp", True, False, False, "l1"),
    AblationRow("conv+mlp+ff", True, True, False, "l1"),
    AblationRow("conv+mlp+ff+cal", True, True, True, "l1"),
    AblationRow("conv+mlp+ff+cal+fl1", True, True, True, "l1+fl1"),
)

REPORT_COLUMNS = ("row", "conv", "mlp", "ff", "cal", "l1", "fl1", "psnr", "ssim", "frc", "final_fl1")


def evaluate_output(output, target) -> dict:
    """PSNR / SSIM / FRC-AUC on luminance plus FL1 on the RGB output."""
    y_out = metrics.to_luminance(output)
    y_ref = metrics.to_luminance(target)
    return {
        "psnr": metrics.psnr(y_out, y_ref),
        "ssim": metrics.ssim(y_out, y_ref),
        "frc": metrics.frc_auc(metrics.frc(y_out, y_ref)),
        "final_fl1": losses.l1_freq(output, target).value,
    }


def _run_row(row: AblationRow, targets, r, train_cfg, fga_cfg):
    record = {
        "row": row.name,
        "conv": True,
        "mlp": row.mlp,
        "ff": row.ff,
        "cal": row.cal,
        "l1": row.loss in ("l1", "l1+fl1"),
        "fl1": row.loss in ("fl1", "l1+fl1"),
    }
    cfg = replace(fga_cfg, use_mlp=row.mlp, use_ff=row.ff, use_cal=row.cal)
    tcfg = replace(train_cfg, loss=row.loss, method="fga")
    try:
        results = [train_toy(t, r, tcfg, cfg) for t in targets]
    except NumericError as exc:
        # keep the table going; the failed row reports NaNs
        record.update({k: math.nan for k in ("psnr", "ssim", "frc", "final_fl1")}, error=str(exc))
        return record, []
    evals = [evaluate_output(res.output, t) for res, t in zip(results, targets)]
    for key in ("psnr", "ssim", "frc", "final_fl1"):
        record[key] = float(np.mean([e[key] for e in evals]))
    return record, [res.output for res in results]


def ablate(targets, r: int = 4, rows=ABLATION_ROWS, train_cfg: TrainConfig | None = None, fga_cfg: FgaConfig | None = None, jobs: int = 1):
    """Train every row on every target; returns ``(records, outputs)``.

    ``outputs[i]`` lists the final output image of row ``i`` per target.
    Rows are independent, so ``jobs > 1`` runs them in threads; the report
    order is the row order regardless.
    """
    targets = list(targets)
    train_cfg = train_cfg or TrainConfig()
    fga_cfg = fga_cfg or FgaConfig(scale=r)
    if not targets:
        return [], []
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(lambda row: _run_row(row, targets, r, train_cfg, fga_cfg), rows))
    else:
        done = [_run_row(row, targets, r, train_cfg, fga_cfg) for row in rows]
    return [d[0] for d in done], [d[1] for d in done]


def report_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(",".join(REPORT_COLUMNS) + "\n")
    for rec in records:
        cells = []
        for col in REPORT_COLUMNS:
            val = rec[col]
            if isinstance(val, bool):
                cells.append("1" if val else "0")
            elif isinstance(val, float):
                cells.append(f"{val:.12g}")
            else:
                cells.append(str(val))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()
