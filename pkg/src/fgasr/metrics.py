"""Fourier ring correlation, image-quality metrics and spectral diagnostics."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

ZERO_ENERGY = 1e-20


def to_luminance(img) -> np.ndarray:
    """``3 x H x W`` RGB (or a single plane) -> ``H x W`` luminance."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 1:
        return img[0]
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(LUMA_WEIGHTS, img, axes=1)
    raise ShapeError(f"cannot convert shape {img.shape} to luminance")


# --------------------------------------------------------------------------
# Ring quantization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RingIndexMap:
    """Ring id of every frequency bin, stored with DC at the origin."""

    index: np.ndarray
    n_rings: int
    counts: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.index.shape

    def centered(self) -> np.ndarray:
        """Ring ids with DC moved to the centre (display layout)."""
        return np.fft.fftshift(self.index)

    @property
    def i_hf(self) -> int:
        return high_frequency_start(self.n_rings)


def high_frequency_start(n_rings: int) -> int:
    """First ring of the top quartile, ``ceil(0.75 N)``, kept below N."""
    return min(math.ceil(0.75 * n_rings), n_rings - 1)


def _radius_key(u: int, v: int) -> np.ndarray:
    """Exact integer proxy for the normalized radius ``|(ku/U, kv/V)|``."""
    ku = np.rint(np.fft.fftfreq(u) * u).astype(np.int64)
    kv = np.rint(np.fft.fftfreq(v) * v).astype(np.int64)
    return (ku[:, None] ** 2) * (v * v) + (kv[None, :] ** 2) * (u * u)


def ring_index_map(u: int, v: int, n_rings: int = 64) -> RingIndexMap:
    """Split the U x V frequency plane into ``n_rings`` near-equal rings.

    Bins are ordered by (radius, centered row, centered col) and cut into
    contiguous groups whose sizes differ by at most one. A cut that would
    separate bins of equal radius is pushed past the whole tie group, so a
    ring can absorb a tie group and a later ring can end up empty.
    """
    if n_rings < 1:
        raise ConfigError("need at least one ring")
    if u * v < n_rings:
        raise ConfigError(f"{u}x{v} plane has fewer bins than {n_rings} rings")
    key = np.fft.fftshift(_radius_key(u, v)).reshape(-1)
    rows, cols = np.divmod(np.arange(u * v), v)
    order = np.lexsort((cols, rows, key))
    sorted_key = key[order]

    total = u * v
    sizes = np.full(n_rings, total // n_rings)
    sizes[: total % n_rings] += 1
    cuts = np.cumsum(sizes)[:-1]
    # end (exclusive) of the tie group containing each sorted position
    change = np.flatnonzero(np.diff(sorted_key)) + 1
    group_end = np.searchsorted(change, np.arange(total), side="right")
    group_end = np.append(change, total)[group_end]
    fixed = []
    prev = 0
    for c in cuts:
        if sorted_key[c - 1] == sorted_key[c]:
            c = group_end[c - 1]
        c = max(int(c), prev)
        fixed.append(c)
        prev = c
    ring_of_sorted = np.searchsorted(np.array(fixed, dtype=np.int64), np.arange(total), side="right")

    centered = np.empty(total, dtype=np.int64)
    centered[order] = ring_of_sorted
    index = np.fft.ifftshift(centered.reshape(u, v))
    counts = np.bincount(index.reshape(-1), minlength=n_rings)
    return RingIndexMap(index, n_rings, counts)


# --------------------------------------------------------------------------
# FRC
# --------------------------------------------------------------------------


@dataclass
class FrcCurve:
    values: np.ndarray
    rings: RingIndexMap

    @property
    def n_rings(self) -> int:
        return len(self.values)

    @property
    def frc_auc(self) -> float:
        return frc_auc(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("ring,frc\n")
        for i, val in enumerate(self.values):
            buf.write(f"{i},{val:.12g}\n")
        buf.write(f"# frc_auc={self.frc_auc:.12g}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "n_rings": self.n_rings,
            "values": [float(x) for x in self.values],
            "frc_auc": float(self.frc_auc),
            "i_hf": self.rings.i_hf,
        }
        return json.dumps(doc, indent=2)


def frc(a, b, rings: RingIndexMap | None = None) -> FrcCurve:
    """Ring-wise normalized cross-correlation of two planes' spectra.

    Rings where either image has energy below ``1e-20`` get value 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"frc needs two equal 2-D planes, got {a.shape} and {b.shape}")
    if rings is None:
        rings = ring_index_map(*a.shape)
    if rings.shape != a.shape:
        raise ShapeError(f"ring map {rings.shape} does not match images {a.shape}")
    f1 = np.fft.fft2(a)
    f2 = np.fft.fft2(b)
    idx = rings.index.reshape(-1)
    n = rings.n_rings
    num = np.bincount(idx, weights=(f1 * np.conj(f2)).real.reshape(-1), minlength=n)
    e1 = np.bincount(idx, weights=(np.abs(f1) ** 2).reshape(-1), minlength=n)
    e2 = np.bincount(idx, weights=(np.abs(f2) ** 2).reshape(-1), minlength=n)
    ok = (e1 >= ZERO_ENERGY) & (e2 >= ZERO_ENERGY)
    values = np.zeros(n)
    values[ok] = num[ok] / np.sqrt(e1[ok] * e2[ok])
    return FrcCurve(values, rings)


def frc_auc(curve: FrcCurve | np.ndarray) -> float:
    """Mean FRC over the top quartile of rings (48..63 for 64 rings)."""
    values = curve.values if isinstance(curve, FrcCurve) else np.asarray(curve, dtype=np.float64)
    start = high_frequency_start(len(values))
    return float(np.mean(values[start:]))


# --------------------------------------------------------------------------
# PSNR / SSIM
# --------------------------------------------------------------------------


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a, b, peak: float = 1.0, window: int = 8, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all (valid) ``window x window`` uniform windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"ssim needs two equal 2-D planes, got {a.shape} and {b.shape}")
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} is smaller than the {window}x{window} window")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = (wa * wa).mean(axis=(-1, -2)) - mu_a**2
    var_b = (wb * wb).mean(axis=(-1, -2)) - mu_b**2
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


# --------------------------------------------------------------------------
# Spectral diagnostics
# --------------------------------------------------------------------------


def hf_band_map(img, rings: RingIndexMap | None = None) -> np.ndarray:
    """Magnitude of the image restricted to the top-quartile rings."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"hf_band_map expects a 2-D plane, got {img.shape}")
    if rings is None:
        rings = ring_index_map(*img.shape)
    if rings.shape != img.shape:
        raise ShapeError(f"ring map {rings.shape} does not match image {img.shape}")
    spec = np.fft.fft2(img)
    spec[rings.index < rings.i_hf] = 0.0
    return np.abs(np.fft.ifft2(spec))


def _minmax(x: np.ndarray, degenerate: float) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.full_like(x, degenerate)
    return (x - lo) / (hi - lo)


def spectrum_dump(x) -> np.ndarray:
    """Channel-mean ``log(1 + |S|)`` with DC centred, scaled to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"spectrum_dump expects C x H x W, got {x.shape}")
    mag = np.log1p(np.abs(np.fft.fft2(x)))
    return _minmax(np.fft.fftshift(mag.mean(axis=0)), 0.0)


def pca_project(x, k: int = 3, normalize: bool = True, return_eigenvalues: bool = False):
    """Project per-pixel channel vectors onto the top-``k`` principal axes.

    Eigenvector signs are fixed so each axis' largest-magnitude entry is
    positive. With ``normalize`` each component is min-max scaled to [0, 1]
    (constant components become 0.5).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"pca_project expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    if k > c:
        raise ShapeError(f"cannot take {k} components from {c} channels")
    data = x.reshape(c, -1).T
    data = data - data.mean(axis=0)
    cov = data.T @ data / data.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals, evecs = evals[order], evecs[:, order]
    pivot = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[pivot, np.arange(k)])
    proj = (data @ evecs).T.reshape(k, h, w)
    if normalize:
        proj = np.stack([_minmax(p, 0.5) for p in proj])
    if return_eigenvalues:
        return proj, evals
    return proj


def alias_bins(hr_shape: tuple[int, int], r: int, freq: tuple[int, int]) -> list[tuple[int, int]]:
    """Images of an LR frequency after x``r`` upsampling, the true bins excluded.

    ``freq`` is in cycles per image; replicas sit at shifts of the LR extent
    along each axis.
    """
    h, w = hr_shape
    if h % r or w % r:
        raise ShapeError(f"{hr_shape} is not divisible by {r}")
    lh, lw = h // r, w // r
    fy, fx = freq
    true = {(fy % h, fx % w), (-fy % h, -fx % w)}
    out = set()
    for a in range(r):
        for b in range(r):
            for sy, sx in ((fy, fx), (-fy, -fx)):
                out.add(((sy + a * lh) % h, (sx + b * lw) % w))
    return sorted(out - true)


def alias_energy(x, r: int, freq: tuple[int, int]) -> tuple[float, float]:
    """``(alias, fundamental)`` spectral magnitudes of a ``C x H x W`` map.

    Channel means are removed first; both numbers are root-sum-square over
    channels and bins.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"alias_energy expects C x H x W, got {x.shape}")
    h, w = x.shape[1:]
    power = (np.abs(np.fft.fft2(x - x.mean(axis=(1, 2), keepdims=True))) ** 2).sum(axis=0)
    bins = alias_bins((h, w), r, freq)
    fy, fx = freq
    fund = {(fy % h, fx % w), (-fy % h, -fx % w)}
    alias = math.sqrt(sum(power[b] for b in bins))
    return alias, math.sqrt(sum(power[b] for b in fund))
