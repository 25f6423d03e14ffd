"""Grouping -> collaborative filtering -> aggregation denoisers.

Reference patches are processed in fixed-size chunks. Each chunk writes to
its own canvas and the canvases are summed in chunk order, so the output
does not depend on how many workers ran the chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ive

from .filtering import FilterParams, filter_batch
from .grouping import Footprint, GroupingParams, PatchSearcher, as_stack

WEIGHT_MODES = ("uniform", "inverse_retained")
CHUNK_SIZE = 64


@dataclass(frozen=True)
class DenoiseConfig:
    grouping: GroupingParams
    filtering: FilterParams
    weight_mode: str = "uniform"
    clip_output: bool = False
    peak: float = 255.0
    workers: int = 1

    def __post_init__(self):
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if not self.peak > 0:
            raise ValueError(f"peak must be positive, got {self.peak}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def with_sigma(self, sigma: float) -> "DenoiseConfig":
        return replace(self, filtering=replace(self.filtering, sigma=float(sigma)))


def default_config(image, sigma: float, family: str = "msvd", **kwargs) -> DenoiseConfig:
    """Config for ``image``: opponent color filtering for 3-channel images."""
    x = np.asarray(image)
    color = "opponent" if x.ndim == 3 and x.shape[2] == 3 else "none"
    return DenoiseConfig(GroupingParams(), FilterParams(sigma, family=family, color_mode=color), **kwargs)


def group_weight(retained: int, weight_mode: str) -> float:
    if weight_mode == "uniform":
        return 1.0
    return 1.0 / (1.0 + retained)


@dataclass
class AggregationCanvas:
    """Per-pixel running sums of weighted patch values and of weights."""

    shape: tuple
    weight_mode: str = "uniform"
    values: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        self.values = np.zeros(self.shape)
        self.weights = np.zeros(self.shape)

    def merge(self, other: "AggregationCanvas") -> None:
        self.values += other.values
        self.weights += other.weights

    def finalize(self) -> np.ndarray:
        if np.any(self.weights <= 0):
            raise RuntimeError("aggregation left pixels without any covering patch")
        return self.values / self.weights


def _flat_indices(shape, footprint: Footprint) -> np.ndarray:
    """(K, ph*pw*pd) flat canvas indices covered by each slice."""
    _, w, depth = shape
    ph, pw, pd = footprint.patch_shape
    offsets = (
        np.arange(ph)[:, None, None] * (w * depth)
        + np.arange(pw)[None, :, None] * depth
        + np.arange(pd)[None, None, :]
    ).ravel()
    c = np.asarray(footprint.coords, dtype=np.int64)
    base = c[:, 0] * (w * depth) + c[:, 1] * depth + c[:, 2]
    return base[:, None] + offsets[None, :]


def _accumulate(canvas: AggregationCanvas, index: np.ndarray, values: np.ndarray, weights: np.ndarray):
    n = canvas.values.size
    canvas.values += np.bincount(index, weights=values, minlength=n).reshape(canvas.shape)
    canvas.weights += np.bincount(index, weights=weights, minlength=n).reshape(canvas.shape)


def _stack_shape(shape) -> tuple:
    return tuple(shape) if len(shape) == 3 else tuple(shape) + (1,)


def scatter_group(canvas: AggregationCanvas, group_data, footprint: Footprint, weight: float) -> None:
    """Add ``weight * patch`` and ``weight`` at every position of every slice."""
    data = np.asarray(group_data, dtype=np.float64)
    idx = _flat_indices(_stack_shape(canvas.shape), footprint)
    vals = np.moveaxis(data, -1, 0).reshape(len(footprint), -1)
    _accumulate(canvas, idx.ravel(), weight * vals.ravel(), np.full(idx.size, float(weight)))


def _process_chunk(searcher: PatchSearcher, refs: np.ndarray, cfg: DenoiseConfig) -> AggregationCanvas:
    canvas = AggregationCanvas(searcher.stack.shape, cfg.weight_mode)
    found = [searcher.search(ref) for ref in refs]
    groups = np.stack([searcher.gather(coords) for coords, _, _ in found])
    filtered, kept = filter_batch(groups, cfg.filtering)
    coords = np.concatenate([c for c, _, _ in found])
    idx = _flat_indices(canvas.shape, Footprint(coords, searcher.patch_shape))
    w = np.array([group_weight(int(n), cfg.weight_mode) for n in kept])
    k = filtered.shape[-1]
    # (B, ph, pw, pd, K) -> (B*K, ph*pw*pd) in the same slice order as coords
    vals = np.moveaxis(filtered, -1, 1).reshape(len(coords), -1)
    wk = np.repeat(w, k)[:, None]
    _accumulate(canvas, idx.ravel(), (wk * vals).ravel(), np.broadcast_to(wk, idx.shape).ravel())
    return canvas


def _run(stack_image, cfg: DenoiseConfig) -> np.ndarray:
    searcher = PatchSearcher(stack_image, cfg.grouping)
    refs = searcher.grid()
    chunks = [refs[i : i + CHUNK_SIZE] for i in range(0, len(refs), CHUNK_SIZE)]
    total = AggregationCanvas(searcher.stack.shape, cfg.weight_mode)
    if cfg.workers == 1:
        for chunk in chunks:
            total.merge(_process_chunk(searcher, chunk, cfg))
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            # map yields in submission order, keeping the reduction order fixed
            for part in pool.map(lambda ch: _process_chunk(searcher, ch, cfg), chunks):
                total.merge(part)
    out = total.finalize()
    if not np.all(np.isfinite(out)):
        raise RuntimeError("denoised output contains NaN or Inf")
    if cfg.clip_output:
        out = np.clip(out, 0.0, cfg.peak)
    return out


def denoise(image, cfg: DenoiseConfig) -> np.ndarray:
    """Denoise a 2-D grayscale or ``H x W x C`` image; output has the input shape."""
    x = np.asarray(image, dtype=np.float64)
    if cfg.grouping.temporal:
        raise ValueError("volumetric grouping config passed to denoise(); use denoise_volume()")
    if cfg.filtering.color_mode == "opponent" and (x.ndim != 3 or x.shape[2] != 3):
        raise ValueError(f"opponent color mode needs an H x W x 3 image, got shape {x.shape}")
    out = _run(as_stack(x), cfg)
    return out.reshape(x.shape)


def denoise_volume(volume, cfg: DenoiseConfig) -> np.ndarray:
    """Denoise an ``H x W x D`` volume with cubic patches searched in 3-D."""
    v = np.asarray(volume, dtype=np.float64)
    if v.ndim != 3:
        raise ValueError(f"denoise_volume expects a 3-D array, got shape {v.shape}")
    if not cfg.grouping.temporal:
        raise ValueError("denoise_volume needs volumetric grouping (GroupingParams.for_volume())")
    if cfg.filtering.color_mode != "none":
        raise ValueError("volumes are filtered with color_mode='none'")
    return _run(v, cfg)


# Rician wrapper

_SNR_GRID = np.linspace(0.0, 40.0, 40001)


def rice_mean(nu, sigma: float) -> np.ndarray:
    """Mean of a Rician variable with signal ``nu`` and noise ``sigma``."""
    nu = np.asarray(nu, dtype=np.float64)
    z = nu * nu / (4.0 * sigma * sigma)
    return sigma * np.sqrt(np.pi / 2) * ((1.0 + 2.0 * z) * ive(0, z) + 2.0 * z * ive(1, z))


_MEAN_GRID = rice_mean(_SNR_GRID, 1.0)


class RiceMeanStabilizer:
    """Denoise the magnitudes directly, then invert the Rician mean.

    A Gaussian denoiser applied to magnitude data estimates ``E[y]``, which
    is biased upward by the noise floor. The inverse solves
    ``rice_mean(x, sigma) = m`` for ``x``; estimates below the Rayleigh
    mean ``sigma * sqrt(pi / 2)`` map to 0.
    """

    def forward(self, y: np.ndarray, sigma: float):
        return y, sigma

    def inverse(self, m: np.ndarray, sigma: float) -> np.ndarray:
        r = np.asarray(m, dtype=np.float64) / sigma
        out = np.interp(r, _MEAN_GRID, _SNR_GRID)
        high = r > _MEAN_GRID[-1]
        # far above the noise floor E[y] ~ x + sigma^2 / (2 x)
        out[high] = 0.5 * (r[high] + np.sqrt(np.maximum(r[high] ** 2 - 2.0, 0.0)))
        # one Newton step on the tabulated region
        low = ~high & (out > 0)
        if np.any(low):
            x = out[low]
            f = rice_mean(x, 1.0) - r[low]
            h = 1e-6 * np.maximum(x, 1.0)
            df = (rice_mean(x + h, 1.0) - rice_mean(x, 1.0)) / h
            out[low] = np.maximum(x - f / np.maximum(df, 1e-12), 0.0)
        return out * sigma


class BiasCorrectionStabilizer:
    """Second-moment correction ``sqrt(max(m^2 - 2 sigma^2, 0))``.

    Exact when ``m`` estimates ``sqrt(E[y^2])``; applied to a denoised
    magnitude (an estimate of ``E[y]``) it over-corrects at low SNR.
    """

    def forward(self, y: np.ndarray, sigma: float):
        return y, sigma

    def inverse(self, m: np.ndarray, sigma: float) -> np.ndarray:
        return np.sqrt(np.maximum(np.asarray(m) ** 2 - 2.0 * sigma * sigma, 0.0))


def denoise_rician(volume, sigma: float, cfg: DenoiseConfig, stabilizer=None) -> np.ndarray:
    """Stabilize, denoise with a Gaussian denoiser, and invert.

    ``stabilizer`` provides ``forward(y, sigma) -> (z, sigma_vst)`` and
    ``inverse(m, sigma)``; defaults to :class:`RiceMeanStabilizer`.
    2-D inputs go through :func:`denoise`, 3-D inputs through
    :func:`denoise_volume` when ``cfg`` is volumetric.
    """
    y = np.asarray(volume, dtype=np.float64)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if np.any(y < 0):
        raise ValueError("Rician data must be nonnegative")
    stab = stabilizer or RiceMeanStabilizer()
    z, sigma_vst = stab.forward(y, sigma)
    run_cfg = cfg.with_sigma(sigma_vst)
    m = denoise_volume(z, run_cfg) if cfg.grouping.temporal else denoise(z, run_cfg)
    out = np.maximum(stab.inverse(m, sigma), 0.0)
    if cfg.clip_output:
        out = np.clip(out, 0.0, cfg.peak)
    return out
