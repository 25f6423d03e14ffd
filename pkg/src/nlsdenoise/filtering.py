"""Collaborative filtering of patch groups by transform-domain hard thresholding.

Two transform families operate on a group tensor ``G`` of shape
``H x W x N x K``:

``msvd``
    Group-level and patch-level transforms ``U`` (K x r) and ``V`` (HWN x r),
    ``r = min(K, HWN)``, taken from the SVD of the mode-4 unfolding
    ``G_(4)`` (K x HWN). Coefficients ``C = U.T @ G_(4) @ V`` are hard
    thresholded and mapped back with ``U @ C_trun @ V.T``. For color groups
    the whole procedure runs in the opponent color space.

``hosvd4d``
    One orthogonal factor per mode from the left singular vectors of each
    unfolding; the core tensor is thresholded and multiplied back.

The threshold is ``tau = lam * sigma``. When ``lam`` is not given, ``msvd``
uses ``sqrt(K) + sqrt(HWN)``, the size of the largest singular value of a
``K x HWN`` matrix of unit-variance white noise; ``hosvd4d`` uses 2.7.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError
from .grouping import PatchGroup
from .tensor import fold, mode_n_product, svd, unfold

FAMILIES = ("msvd", "hosvd4d")
COLOR_MODES = ("none", "opponent")
HOSVD_LAMBDA = 2.7

OPPONENT = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [1 / 2, 0.0, -1 / 2],
        [1 / 4, -1 / 2, 1 / 4],
    ]
)
OPPONENT_INV = np.array(
    [
        [1.0, 1.0, 2 / 3],
        [1.0, 0.0, -4 / 3],
        [1.0, -1.0, 2 / 3],
    ]
)


@dataclass(frozen=True)
class FilterParams:
    sigma: float
    lam: float | None = None
    family: str = "msvd"
    color_mode: str = "none"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.lam is not None and not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.color_mode not in COLOR_MODES:
            raise ValueError(f"color_mode must be one of {COLOR_MODES}, got {self.color_mode!r}")

    def multiplier(self, group_shape) -> float:
        if self.lam is not None:
            return float(self.lam)
        if self.family == "hosvd4d":
            return HOSVD_LAMBDA
        h, w, n, k = group_shape
        return float(np.sqrt(k) + np.sqrt(h * w * n))

    def threshold(self, group_shape) -> float:
        return self.multiplier(group_shape) * self.sigma


@dataclass(frozen=True)
class TransformSet:
    """Learned orthogonal factors of one group.

    ``msvd``: ``factors = (U, V)``. ``hosvd4d``: one square factor per mode.
    """

    family: str
    factors: tuple


def _channel_transform(x: np.ndarray, mat: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != 3:
            raise ValueError(f"opponent transform needs 3 channels, got {x.shape[0]}")
        return mat @ x
    if x.ndim < 3 or x.shape[2] != 3:
        raise ValueError(f"opponent transform needs 3 channels on axis 3, got shape {x.shape}")
    return mode_n_product(x, mat, 3)


def opponent_forward(x) -> np.ndarray:
    """Apply the opponent color matrix along the channel mode (mode 3)."""
    return _channel_transform(x, OPPONENT)


def opponent_inverse(x) -> np.ndarray:
    return _channel_transform(x, OPPONENT_INV)


def hard_threshold(coeffs, tau: float) -> tuple[np.ndarray, int]:
    """Keep coefficients with ``|c| >= tau``, zero the rest.

    Returns the thresholded array and the number of retained coefficients.
    """
    if not tau >= 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    c = np.asarray(coeffs, dtype=np.float64)
    keep = np.abs(c) >= tau
    return np.where(keep, c, 0.0), int(np.count_nonzero(keep))


def _group_data(group) -> np.ndarray:
    data = group.data if isinstance(group, PatchGroup) else np.asarray(group, dtype=np.float64)
    if data.ndim != 4:
        raise ValueError(f"group tensor must be 4-D (H x W x N x K), got shape {data.shape}")
    return data


def _with_data(group, data):
    return replace(group, data=data) if isinstance(group, PatchGroup) else data


def _msvd_factors(g: np.ndarray) -> TransformSet:
    a = unfold(g, 4)
    k, m = a.shape
    r = min(k, m)
    if not np.any(a):
        return TransformSet("msvd", (np.eye(k)[:, :r], np.eye(m)[:, :r]))
    u, _, v = svd(a)
    return TransformSet("msvd", (u, v))


def learn_msvd_transforms(group, color_mode: str = "none") -> TransformSet:
    """Group-level ``U`` and patch-level ``V`` transforms of a group."""
    g = _group_data(group)
    if color_mode == "opponent":
        g = opponent_forward(g)
    elif color_mode != "none":
        raise ValueError(f"unknown color_mode {color_mode!r}")
    return _msvd_factors(g)


def msvd_filter_group(group, params: FilterParams):
    """Hard-threshold a group in its own SVD basis.

    Returns ``(filtered, retained_count)`` where ``filtered`` has the type
    of ``group`` (``PatchGroup`` or bare tensor).
    """
    if params.family != "msvd":
        raise ValueError(f"msvd_filter_group got family {params.family!r}")
    data = _group_data(group)
    opponent = params.color_mode == "opponent"
    g = opponent_forward(data) if opponent else data
    u, v = _msvd_factors(g).factors
    a = unfold(g, 4)
    c = u.T @ a @ v
    c_trun, kept = hard_threshold(c, params.threshold(g.shape))
    out = fold(u @ c_trun @ v.T, 4, g.shape)
    if opponent:
        out = opponent_inverse(out)
    return _with_data(group, out), kept


def learn_hosvd_transforms(group) -> TransformSet:
    g = _group_data(group)
    factors = []
    for mode in range(1, 5):
        a = unfold(g, mode)
        factors.append(svd(a, full_matrices=a.shape[0] > a.shape[1])[0])
    return TransformSet("hosvd4d", tuple(factors))


def hosvd_filter_group(group, params: FilterParams):
    """Hard-threshold the HOSVD core of a group. Returns ``(filtered, retained)``."""
    if params.family != "hosvd4d":
        raise ValueError(f"hosvd_filter_group got family {params.family!r}")
    data = _group_data(group)
    opponent = params.color_mode == "opponent"
    g = opponent_forward(data) if opponent else data
    factors = learn_hosvd_transforms(g).factors
    core = g
    for mode, u in enumerate(factors, start=1):
        core = mode_n_product(core, u.T, mode)
    core, kept = hard_threshold(core, params.threshold(g.shape))
    out = core
    for mode, u in enumerate(factors, start=1):
        out = mode_n_product(out, u, mode)
    if opponent:
        out = opponent_inverse(out)
    return _with_data(group, out), kept


def filter_group(group, params: FilterParams):
    if params.family == "msvd":
        return msvd_filter_group(group, params)
    return hosvd_filter_group(group, params)


# Batched kernels used by the pipeline. ``groups`` has shape (B, H, W, N, K).


def _batched_svd(a: np.ndarray, full_matrices: bool = False):
    try:
        return np.linalg.svd(a, full_matrices=full_matrices)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"batched SVD did not converge on {a.shape[0]} matrices of shape {a.shape[1:]}"
        ) from exc


def _batch_channels(groups: np.ndarray, mat: np.ndarray) -> np.ndarray:
    return np.einsum("ij,bhwjk->bhwik", mat, groups)


def filter_batch(groups: np.ndarray, params: FilterParams) -> tuple[np.ndarray, np.ndarray]:
    """Filter a stack of equally shaped groups.

    Returns the filtered stack and per-group retained counts.
    """
    opponent = params.color_mode == "opponent"
    g = _batch_channels(groups, OPPONENT) if opponent else groups
    tau = params.threshold(g.shape[1:])
    if params.family == "msvd":
        out, kept = _msvd_batch(g, tau)
    else:
        out, kept = _hosvd_batch(g, tau)
    if opponent:
        out = _batch_channels(out, OPPONENT_INV)
    return out, kept


def _msvd_batch(g: np.ndarray, tau: float):
    b, h, w, n, k = g.shape
    # mode-4 unfolding: rows index patches, columns run h fastest, then w, n
    a = g.transpose(0, 4, 3, 2, 1).reshape(b, k, n * w * h)
    u, _, vt = _batched_svd(a)
    c = u.transpose(0, 2, 1) @ a @ vt.transpose(0, 2, 1)
    keep = np.abs(c) >= tau
    c = np.where(keep, c, 0.0)
    rec = u @ c @ vt
    out = rec.reshape(b, k, n, w, h).transpose(0, 4, 3, 2, 1)
    return out, keep.reshape(b, -1).sum(axis=1)


def _hosvd_batch(g: np.ndarray, tau: float):
    b = g.shape[0]
    factors = []
    for axis in range(1, 5):
        # column order of the unfolding does not affect its left singular vectors
        a = np.moveaxis(g, axis, 1).reshape(b, g.shape[axis], -1)
        u = _batched_svd(a, full_matrices=a.shape[1] > a.shape[2])[0]
        factors.append(u)
    u1, u2, u3, u4 = factors
    core = np.einsum("bhwnk,bhi,bwj,bnl,bkm->bijlm", g, u1, u2, u3, u4, optimize=True)
    keep = np.abs(core) >= tau
    core = np.where(keep, core, 0.0)
    out = np.einsum("bijlm,bhi,bwj,bnl,bkm->bhwnk", core, u1, u2, u3, u4, optimize=True)
    return out, keep.reshape(b, -1).sum(axis=1)
