"""Block matching: reference grid, windowed similar-patch search, 4D groups.

Images are handled through a common ``(H, W, L)`` stack: a grayscale image
gets ``L = 1``, a color or multiband image keeps its channels in ``L``, and a
volume or video keeps its slices/frames in ``L``.

* Planar data (``temporal=False``): a patch spans every channel, so a group
  has shape ``patch_h x patch_w x L x K`` and the search runs over rows and
  columns only. Coordinates are ``(row, col)``.
* Volumetric data (``temporal=True``): a patch is a
  ``patch_h x patch_w x patch_depth`` block and the search window extends
  along the third axis with the same radius. Coordinates are
  ``(row, col, slice)``.

Candidates whose squared distances are equal are ordered by their top-left
coordinate in lexicographic (raster) order. The reference patch always
comes first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .noise import luminance
from .tensor import as_tensor

DISTANCE_RULES = ("luminance", "first_channel", "all_channels")


@dataclass(frozen=True)
class GroupingParams:
    """Block-matching parameters.

    ``patch_depth`` is the third patch extent. For planar data it must be
    ``None`` (use all channels) or equal to the channel count; volumetric
    data requires an explicit value.
    """

    patch_h: int = 8
    patch_w: int = 8
    patch_depth: int | None = None
    group_size: int = 32
    search_radius: int = 19
    ref_stride: int = 4
    distance_channel: str = "luminance"
    temporal: bool = False

    def __post_init__(self):
        if self.patch_h < 2 or self.patch_w < 2:
            raise ValueError(f"patch dims must be >= 2, got {self.patch_h}x{self.patch_w}")
        if self.patch_depth is not None and self.patch_depth < 1:
            raise ValueError(f"patch_depth must be >= 1, got {self.patch_depth}")
        if self.temporal and (self.patch_depth is None or self.patch_depth < 2):
            raise ValueError("volumetric grouping needs patch_depth >= 2")
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size}")
        if self.search_radius < 0:
            raise ValueError(f"search_radius must be >= 0, got {self.search_radius}")
        if self.ref_stride < 1:
            raise ValueError(f"ref_stride must be >= 1, got {self.ref_stride}")
        if self.distance_channel not in DISTANCE_RULES:
            raise ValueError(
                f"distance_channel must be one of {DISTANCE_RULES}, got {self.distance_channel!r}"
            )

    @classmethod
    def for_volume(cls, **overrides) -> "GroupingParams":
        """Defaults for 3-D data: 4x4x4 cubes searched in a 7x7x7 window."""
        base = dict(
            patch_h=4,
            patch_w=4,
            patch_depth=4,
            group_size=32,
            search_radius=3,
            ref_stride=3,
            distance_channel="all_channels",
            temporal=True,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def ndim(self) -> int:
        return 3 if self.temporal else 2

    def patch_shape(self, stack_shape) -> tuple[int, int, int]:
        """Patch extents ``(ph, pw, pd)`` on an ``(H, W, L)`` stack."""
        h, w, depth = stack_shape
        if self.temporal:
            pd = self.patch_depth
        else:
            if self.patch_depth not in (None, depth):
                raise ValueError(
                    f"planar patches span all {depth} channels; got patch_depth={self.patch_depth}"
                )
            pd = depth
        if self.patch_h > h or self.patch_w > w or pd > depth:
            raise ValueError(
                f"patch {self.patch_h}x{self.patch_w}x{pd} does not fit image of shape {stack_shape}"
            )
        return self.patch_h, self.patch_w, pd


def as_stack(image) -> np.ndarray:
    """View a 2-D or 3-D image as an ``(H, W, L)`` float64 stack."""
    x = as_tensor(image, "image")
    if x.ndim == 2:
        return x[:, :, None]
    if x.ndim == 3:
        return x
    raise ValueError(f"expected a 2-D or 3-D image, got shape {x.shape}")


def _axis_positions(extent: int, patch: int, stride: int) -> list[int]:
    last = extent - patch
    pos = list(range(0, last + 1, stride))
    if pos[-1] != last:
        pos.append(last)
    return pos


def reference_grid(image_shape, params: GroupingParams) -> list[tuple[int, ...]]:
    """Top-left corners of reference patches.

    A strided grid per searched axis; when the stride does not land on the
    last valid position, that position is appended so the border is covered.
    """
    shape = tuple(int(s) for s in image_shape)
    if len(shape) == 2:
        shape = shape + (1,)
    if len(shape) != 3:
        raise ValueError(f"expected a 2-D or 3-D image shape, got {image_shape}")
    ph, pw, pd = params.patch_shape(shape)
    rows = _axis_positions(shape[0], ph, params.ref_stride)
    cols = _axis_positions(shape[1], pw, params.ref_stride)
    if not params.temporal:
        return [(r, c) for r in rows for c in cols]
    slices = _axis_positions(shape[2], pd, params.ref_stride)
    return [(r, c, t) for r in rows for c in cols for t in slices]


def _distance_view(a: np.ndarray, rule: str) -> np.ndarray:
    if a.ndim == 2 or rule == "all_channels":
        return a
    if rule == "first_channel":
        return a[..., 0]
    if a.shape[-1] == 3:
        return luminance(a)
    if a.shape[-1] == 1:
        return a
    raise ValueError(f"luminance distance needs 1 or 3 channels, got {a.shape[-1]}")


def patch_distance(a, b, rule: str = "all_channels") -> float:
    """Euclidean (Frobenius) distance between two patches.

    ``rule`` selects which channels (last axis of a 3-D patch) take part.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"patch shapes differ: {a.shape} vs {b.shape}")
    if rule not in DISTANCE_RULES:
        raise ValueError(f"unknown distance rule {rule!r}")
    d = _distance_view(a, rule) - _distance_view(b, rule)
    return float(np.sqrt(np.sum(d * d)))


@dataclass(frozen=True)
class Footprint:
    """Where each slice of a group lives in the ``(H, W, L)`` stack."""

    coords: np.ndarray  # (K, 3) top-left corners (row, col, slice)
    patch_shape: tuple[int, int, int]

    def slices(self, k: int) -> tuple[slice, slice, slice]:
        r, c, t = (int(v) for v in self.coords[k])
        ph, pw, pd = self.patch_shape
        return slice(r, r + ph), slice(c, c + pw), slice(t, t + pd)

    def __len__(self) -> int:
        return len(self.coords)


@dataclass
class PatchGroup:
    """``K`` similar patches stacked as an ``H x W x N x K`` tensor.

    ``repeated[k]`` marks slices that duplicate earlier candidates because
    the window held fewer than ``K`` positions; ``distances`` is sorted over
    the non-repeated prefix.
    """

    data: np.ndarray
    coords: np.ndarray
    distances: np.ndarray
    repeated: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.repeated is None:
            self.repeated = np.zeros(len(self.coords), dtype=bool)

    @property
    def footprint(self) -> Footprint:
        coords = np.asarray(self.coords, dtype=np.int64)
        if coords.shape[1] == 2:
            coords = np.column_stack([coords, np.zeros(len(coords), dtype=np.int64)])
        return Footprint(coords, tuple(self.data.shape[:3]))

    @property
    def size(self) -> int:
        return self.data.shape[3]


def _to_public(coords3: np.ndarray, params: GroupingParams) -> np.ndarray:
    return coords3 if params.temporal else coords3[:, :2].copy()


def _to_internal(coords, params: GroupingParams) -> np.ndarray:
    c = np.asarray(coords, dtype=np.int64)
    if c.ndim == 1:
        c = c[None, :]
    if c.shape[1] != params.ndim:
        raise ValueError(f"expected {params.ndim}-D coordinates, got shape {c.shape}")
    if c.shape[1] == 2:
        c = np.column_stack([c, np.zeros(len(c), dtype=np.int64)])
    return c


class PatchSearcher:
    """Precomputed sliding-window views of one image for repeated searches."""

    def __init__(self, image, params: GroupingParams):
        self.params = params
        self.stack = as_stack(image)
        self.patch_shape = params.patch_shape(self.stack.shape)
        ph, pw, pd = self.patch_shape
        depth = self.stack.shape[2]

        rule = params.distance_channel
        if params.temporal or rule == "all_channels":
            dist = self.stack
            dist_depth = pd
        elif rule == "first_channel":
            dist, dist_depth = self.stack[:, :, :1], 1
        elif depth == 3:
            dist, dist_depth = luminance(self.stack)[:, :, None], 1
        elif depth == 1:
            dist, dist_depth = self.stack, 1
        else:
            raise ValueError(f"luminance distance needs 1 or 3 channels, got {depth}")
        self._content = sliding_window_view(self.stack, self.patch_shape)
        self._dist = sliding_window_view(dist, (ph, pw, dist_depth))
        # number of valid top-left positions along each axis
        self.positions = self._content.shape[:3]

    def grid(self) -> np.ndarray:
        return _to_internal(reference_grid(self.stack.shape, self.params), self.params)

    def search(self, ref) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """K nearest candidates of ``ref`` (internal 3-coords).

        Returns ``(coords (K, 3), squared distances (K,), repeated (K,))``.
        """
        r, c, t = (int(v) for v in ref)
        rad = self.params.search_radius
        nr, nc, nt = self.positions
        if not (0 <= r < nr and 0 <= c < nc and 0 <= t < nt):
            raise ValueError(f"reference {tuple(ref)} outside valid positions {self.positions}")
        r0, r1 = max(0, r - rad), min(nr - 1, r + rad)
        c0, c1 = max(0, c - rad), min(nc - 1, c + rad)
        if self.params.temporal:
            t0, t1 = max(0, t - rad), min(nt - 1, t + rad)
        else:
            t0 = t1 = t
        diff = self._dist[r0 : r1 + 1, c0 : c1 + 1, t0 : t1 + 1] - self._dist[r, c, t]
        d2 = (diff * diff).sum(axis=(-3, -2, -1)).ravel()
        span = (r1 - r0 + 1, c1 - c0 + 1, t1 - t0 + 1)
        ref_idx = ((r - r0) * span[1] + (c - c0)) * span[2] + (t - t0)

        order = np.argsort(d2, kind="stable")
        order = np.concatenate(([ref_idx], order[order != ref_idx]))
        k = self.params.group_size
        n = min(k, order.size)
        order = order[:n]
        pick = np.arange(k) % n
        order = order[pick]
        rr, cc, tt = np.unravel_index(order, span)
        coords = np.column_stack([rr + r0, cc + c0, tt + t0])
        return coords, d2[order], np.arange(k) >= n

    def gather(self, coords3: np.ndarray) -> np.ndarray:
        """Group tensor ``(ph, pw, pd, K)`` for internal 3-coords."""
        coords3 = np.asarray(coords3, dtype=np.int64)
        if np.any(coords3 < 0) or np.any(coords3 >= np.array(self.positions)):
            raise ValueError(f"patch coordinates out of bounds for positions {self.positions}")
        block = self._content[coords3[:, 0], coords3[:, 1], coords3[:, 2]]
        return np.ascontiguousarray(np.moveaxis(block, 0, -1))


def search_similar(image, ref, params: GroupingParams) -> PatchGroup:
    """Group of the ``group_size`` patches nearest to the one at ``ref``."""
    searcher = PatchSearcher(image, params)
    coords3, d2, repeated = searcher.search(_to_internal(ref, params)[0])
    return PatchGroup(
        data=searcher.gather(coords3),
        coords=_to_public(coords3, params),
        distances=np.sqrt(d2),
        repeated=repeated,
    )


def gather_group(image, coords, params: GroupingParams) -> tuple[np.ndarray, Footprint]:
    """Copy the patches at ``coords`` into an ``H x W x N x K`` tensor.

    Returns the tensor and the footprint needed to write it back.
    """
    searcher = PatchSearcher(image, params)
    coords3 = _to_internal(coords, params)
    data = searcher.gather(coords3)
    return data, Footprint(coords3, searcher.patch_shape)
