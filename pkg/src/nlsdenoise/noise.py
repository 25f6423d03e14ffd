"""Synthetic corruption (additive Gaussian, Rician) and blind noise estimation.

Random draws come from a Philox counter-based generator keyed by the seed,
consumed as a single stream in linear (C) element order. The noise added to
element ``i`` therefore depends only on ``(seed, i)`` and never on threading.
Generators never clip; clipping is a pipeline decision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import as_tensor

NOISE_KINDS = ("awgn", "rician")

# median(|N(0, 1)|)
MAD_TO_SIGMA = 0.6745


@dataclass(frozen=True)
class NoiseSpec:
    """Noise kind, standard deviation (intensity units) and seed."""

    kind: str
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def standard_normal(shape, seed: int, count: int = 1) -> np.ndarray:
    """``count`` stacked arrays of i.i.d. N(0, 1) draws of ``shape``."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return rng.standard_normal((count,) + tuple(shape))


def add_awgn(x, spec: NoiseSpec) -> np.ndarray:
    """Return ``x + n`` with ``n`` i.i.d. N(0, sigma^2)."""
    if spec.kind != "awgn":
        raise ValueError(f"add_awgn needs an 'awgn' spec, got {spec.kind!r}")
    x = as_tensor(x, "image")
    return x + spec.sigma * standard_normal(x.shape, spec.seed)[0]


def add_rician(x, spec: NoiseSpec) -> np.ndarray:
    """Magnitude of a complex signal with Gaussian noise in both channels::

        y = sqrt((x + sigma * eta_r)^2 + (sigma * eta_i)^2)
    """
    if spec.kind != "rician":
        raise ValueError(f"add_rician needs a 'rician' spec, got {spec.kind!r}")
    x = as_tensor(x, "image")
    if np.any(x < 0):
        raise ValueError("Rician corruption requires nonnegative intensities")
    eta_r, eta_i = standard_normal(x.shape, spec.seed, count=2)
    return np.hypot(x + spec.sigma * eta_r, spec.sigma * eta_i)


def add_noise(x, spec: NoiseSpec) -> np.ndarray:
    if spec.kind == "awgn":
        return add_awgn(x, spec)
    return add_rician(x, spec)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of an ``(..., 3)`` array."""
    return rgb @ np.array([0.299, 0.587, 0.114])


def estimate_sigma_mad(y) -> float:
    """Robust AWGN sigma estimate from the finest diagonal Haar subband.

    Works on the luminance of 3-channel images and on the first channel (last
    axis) of any other 3-D input.
    """
    y = as_tensor(y, "image")
    if y.size < 64:
        raise ValueError(f"need at least 64 elements to estimate noise, got {y.size}")
    if y.ndim == 3:
        y = luminance(y) if y.shape[2] == 3 else y[:, :, 0]
    elif y.ndim == 1:
        y = y[None, :]
    elif y.ndim > 3:
        raise ValueError(f"unsupported image order {y.ndim}")
    if min(y.shape) < 2:
        v = y.ravel()
        n = (v.size // 2) * 2
        d = (v[0:n:2] - v[1:n:2]) / np.sqrt(2.0)
    else:
        h, w = (y.shape[0] // 2) * 2, (y.shape[1] // 2) * 2
        b = y[:h, :w]
        d = (b[0::2, 0::2] - b[0::2, 1::2] - b[1::2, 0::2] + b[1::2, 1::2]) / 2.0
    return float(np.median(np.abs(d)) / MAD_TO_SIGMA)
