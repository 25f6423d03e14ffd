"""8-bit PNG/PGM images and the raw ``NLSSVOL1`` volume container.

Volume layout (little-endian)::

    b"NLSSVOL1"                 8 bytes
    dim0, dim1, dim2            3 x uint32
    peak                        float64
    payload                     dim0*dim1*dim2 float32

The payload is written with dim0 varying fastest and dim2 slowest
(slice-major), i.e. ``volume.ravel(order="F")``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ImageIOError

VOLUME_MAGIC = b"NLSSVOL1"
_HEADER = struct.Struct("<8s3Id")
IMAGE_SUFFIXES = (".png", ".pgm")
VOLUME_SUFFIXES = (".vol",)
PEAK_8BIT = 255.0


def load_image(path) -> np.ndarray:
    """Decode an 8-bit grayscale/RGB PNG or 8-bit PGM into float64 in [0, 255]."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt not in ("PNG", "PPM"):
                raise ImageIOError(f"{path}: unsupported image format {fmt}")
            if mode not in ("L", "RGB"):
                raise ImageIOError(
                    f"{path}: unsupported pixel mode {mode!r} (need 8-bit grayscale or RGB)"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageIOError(f"{path}: not a readable PNG/PGM file") from exc
    return arr.astype(np.float64)


def save_image(path, image) -> None:
    """Round to nearest and clamp to 8 bits; format from the suffix (.png/.pgm)."""
    path = Path(path)
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if not (x.ndim == 2 or (x.ndim == 3 and x.shape[2] == 3)):
        raise ImageIOError(f"{path}: can only write grayscale or RGB images, got shape {x.shape}")
    suffix = path.suffix.lower()
    if suffix not in IMAGE_SUFFIXES:
        raise ImageIOError(f"{path}: unsupported output format {suffix!r}")
    if suffix == ".pgm" and x.ndim == 3:
        raise ImageIOError(f"{path}: PGM holds grayscale only")
    data = np.clip(np.rint(x), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG" if suffix == ".png" else "PPM")


def save_volume(path, volume, peak: float | None = None) -> None:
    v = np.asarray(volume, dtype=np.float64)
    if v.ndim != 3:
        raise FormatError(f"{path}: volumes must be 3-D, got shape {v.shape}")
    peak = float(v.max()) if peak is None else float(peak)
    header = _HEADER.pack(VOLUME_MAGIC, *v.shape, peak)
    payload = v.astype("<f4").ravel(order="F").tobytes()
    Path(path).write_bytes(header + payload)


def load_volume_with_peak(path) -> tuple[np.ndarray, float]:
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"no such volume file: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, d0, d1, d2, peak = _HEADER.unpack_from(raw)
    if magic != VOLUME_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    count = d0 * d1 * d2
    if count == 0:
        raise FormatError(f"{path}: empty volume shape {(d0, d1, d2)}")
    payload = raw[_HEADER.size :]
    if len(payload) != 4 * count:
        raise FormatError(
            f"{path}: shape {(d0, d1, d2)} needs {4 * count} payload bytes, found {len(payload)}"
        )
    v = np.frombuffer(payload, dtype="<f4").reshape((d0, d1, d2), order="F")
    return v.astype(np.float64), float(peak)


def load_volume(path) -> np.ndarray:
    return load_volume_with_peak(path)[0]


def load_any(path) -> tuple[np.ndarray, float]:
    """Load an image or volume by suffix; returns ``(data, peak)``."""
    path = Path(path)
    if path.suffix.lower() in VOLUME_SUFFIXES:
        return load_volume_with_peak(path)
    return load_image(path), PEAK_8BIT


def save_any(path, data, peak: float = PEAK_8BIT) -> None:
    path = Path(path)
    if path.suffix.lower() in VOLUME_SUFFIXES:
        save_volume(path, data, peak)
    else:
        save_image(path, data)
