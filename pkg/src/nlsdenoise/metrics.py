"""Full-reference quality indices: PSNR, foreground PSNR, SSIM, SAM, ERGAS.

Multi-band inputs keep bands on the last axis. PSNR uses one MSE over all
elements (channels pooled); SSIM is averaged over channels; SAM treats the
last axis as the spectrum of each pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate

from .errors import DomainError


@dataclass(frozen=True)
class MetricParams:
    peak: float = 255.0
    window: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    scale_ratio: float = 1.0

    def __post_init__(self):
        if not self.peak > 0:
            raise ValueError(f"peak must be positive, got {self.peak}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"SSIM window must be odd and >= 3, got {self.window}")
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError("SSIM constants k1, k2 must be positive")
        if not self.scale_ratio > 0:
            raise ValueError(f"scale_ratio must be positive, got {self.scale_ratio}")


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def _psnr_from_mse(mse: float, peak: float) -> float:
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def psnr(x, y, peak: float = 255.0) -> float:
    """``10 log10(D^2 / MSE)`` in dB; ``inf`` for identical inputs."""
    x, y = _pair(x, y)
    d = x - y
    return _psnr_from_mse(float(np.mean(d * d)), peak)


def psnr_foreground(x, y, peak: float = 255.0) -> float:
    """PSNR over voxels where the clean ``x`` exceeds ``10 * D / 255``."""
    x, y = _pair(x, y)
    mask = x > 10.0 * peak / 255.0
    if not np.any(mask):
        raise DomainError("foreground is empty: no clean value exceeds 10*D/255")
    d = x[mask] - y[mask]
    return _psnr_from_mse(float(np.mean(d * d)), peak)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_2d(x: np.ndarray, y: np.ndarray, params: MetricParams) -> float:
    win = gaussian_window(params.window, params.window_sigma)
    c1 = (params.k1 * params.peak) ** 2
    c2 = (params.k2 * params.peak) ** 2

    def filt(a):
        return correlate(a, win, mode="valid", method="direct")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(x, y, params: MetricParams | None = None) -> float:
    """Mean SSIM with a Gaussian window; 3-D inputs average over the last axis."""
    params = params or MetricParams()
    x, y = _pair(x, y)
    if x.ndim not in (2, 3):
        raise ValueError(f"ssim expects a 2-D or 3-D array, got shape {x.shape}")
    if min(x.shape[:2]) < params.window:
        raise ValueError(f"image {x.shape[:2]} smaller than the {params.window}x{params.window} window")
    if x.ndim == 2:
        return _ssim_2d(x, y, params)
    return float(np.mean([_ssim_2d(x[:, :, i], y[:, :, i], params) for i in range(x.shape[2])]))


@dataclass(frozen=True)
class SamResult:
    value: float
    skipped: int


def sam_detail(x, y) -> SamResult:
    """Mean spectral angle (radians) plus the count of zero-spectrum pixels skipped."""
    x, y = _pair(x, y)
    if x.ndim < 2 or x.shape[-1] < 2:
        raise ValueError(f"SAM needs >= 2 bands on the last axis, got shape {x.shape}")
    xs = x.reshape(-1, x.shape[-1])
    ys = y.reshape(-1, y.shape[-1])
    nx = np.linalg.norm(xs, axis=1)
    ny = np.linalg.norm(ys, axis=1)
    ok = (nx > 0) & (ny > 0)
    if not np.any(ok):
        raise DomainError("every pixel has a zero-norm spectrum")
    ux = xs[ok] / nx[ok, None]
    uy = ys[ok] / ny[ok, None]
    # 2 atan2(|u - v|, |u + v|) is the angle between unit vectors, stable near 0 and pi
    ang = 2.0 * np.arctan2(np.linalg.norm(ux - uy, axis=1), np.linalg.norm(ux + uy, axis=1))
    return SamResult(float(np.mean(ang)), int(np.count_nonzero(~ok)))


def sam(x, y) -> float:
    return sam_detail(x, y).value


def ergas(x, y, params: MetricParams | None = None) -> float:
    """``100 * ratio * sqrt(mean_b (RMSE_b / mean_b)^2)`` with bands on the last axis."""
    params = params or MetricParams()
    x, y = _pair(x, y)
    xb = x.reshape(-1, 1) if x.ndim < 3 else x.reshape(-1, x.shape[-1])
    yb = y.reshape(-1, 1) if y.ndim < 3 else y.reshape(-1, y.shape[-1])
    means = xb.mean(axis=0)
    if np.any(means == 0):
        raise DomainError("ERGAS is undefined when a reference band has zero mean")
    rmse = np.sqrt(np.mean((xb - yb) ** 2, axis=0))
    return float(100.0 * params.scale_ratio * np.sqrt(np.mean((rmse / means) ** 2)))


def framewise(metric, x, y, **kwargs) -> float:
    """Average of ``metric`` over frames stacked on the last axis."""
    x, y = _pair(x, y)
    return float(np.mean([metric(x[..., i], y[..., i], **kwargs) for i in range(x.shape[-1])]))
