"""Nonlocal patch-based image denoising (M-SVD and 4-D HOSVD group filters).

Typical use::

    from nlsdenoise import default_config, denoise
    clean_estimate = denoise(noisy, default_config(noisy, sigma=25.0))
"""

from .filtering import FilterParams, hard_threshold, hosvd_filter_group, msvd_filter_group
from .grouping import GroupingParams, PatchGroup, reference_grid, search_similar
from .metrics import MetricParams, ergas, psnr, psnr_foreground, sam, ssim
from .noise import NoiseSpec, add_awgn, add_rician, estimate_sigma_mad
from .pipeline import DenoiseConfig, default_config, denoise, denoise_rician, denoise_volume

__all__ = [
    "DenoiseConfig",
    "FilterParams",
    "GroupingParams",
    "MetricParams",
    "NoiseSpec",
    "PatchGroup",
    "add_awgn",
    "add_rician",
    "default_config",
    "denoise",
    "denoise_rician",
    "denoise_volume",
    "ergas",
    "estimate_sigma_mad",
    "hard_threshold",
    "hosvd_filter_group",
    "msvd_filter_group",
    "psnr",
    "psnr_foreground",
    "reference_grid",
    "sam",
    "search_similar",
    "ssim",
]
