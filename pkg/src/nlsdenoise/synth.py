"""Deterministic synthetic test scenes in the 0-255 range."""

from __future__ import annotations

import numpy as np

SCENE_KINDS = ("flat", "piecewise", "gradient")


def flat(shape, level: float = 128.0) -> np.ndarray:
    return np.full(shape, float(level))


def piecewise(shape, seed: int = 0, regions: int = 6) -> np.ndarray:
    """Overlapping axis-aligned rectangles of constant integer level."""
    rng = np.random.default_rng(seed)
    h, w = shape[:2]
    img = np.full((h, w), float(rng.integers(30, 90)))
    for _ in range(regions):
        r0, c0 = rng.integers(0, h * 3 // 4), rng.integers(0, w * 3 // 4)
        r1 = min(h, r0 + int(rng.integers(h // 6 + 1, h // 2 + 2)))
        c1 = min(w, c0 + int(rng.integers(w // 6 + 1, w // 2 + 2)))
        img[r0:r1, c0:c1] = float(rng.integers(40, 230))
    if len(shape) == 3:
        img = np.repeat(img[:, :, None], shape[2], axis=2)
    return img


def gradient(shape, low: float = 32.0, high: float = 224.0) -> np.ndarray:
    """Diagonal linear ramp from ``low`` to ``high``."""
    h, w = shape[:2]
    rr, cc = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    img = low + (high - low) * 0.5 * (rr + cc)
    if len(shape) == 3:
        img = np.repeat(img[:, :, None], shape[2], axis=2)
    return img


def texture(shape, period: float = 6.0) -> np.ndarray:
    """Sinusoidal checker texture with full 0-255 swing."""
    h, w = shape[:2]
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return 127.5 + 127.5 * np.sin(2 * np.pi * rr / period) * np.sin(2 * np.pi * cc / (period * 1.3))


def phantom_volume(shape, seed: int = 0) -> np.ndarray:
    """Stack of nested boxes with slowly varying levels along the third axis."""
    rng = np.random.default_rng(seed)
    h, w, d = shape
    vol = np.full(shape, 20.0)
    for level in rng.integers(60, 220, size=3):
        r0, c0, t0 = rng.integers(0, h // 2), rng.integers(0, w // 2), rng.integers(0, max(1, d // 2))
        vol[r0 : r0 + h // 2, c0 : c0 + w // 2, t0 : t0 + max(2, d // 2)] = float(level)
    return vol


def make_scene(kind: str, shape, seed: int = 0) -> np.ndarray:
    if kind == "flat":
        return flat(shape)
    if kind == "piecewise":
        return piecewise(shape, seed)
    if kind == "gradient":
        return gradient(shape)
    raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
