"""File formats: 16-bit grayscale PNG and raw little-endian float grids.

PNG is for viewing: values are clipped to [0, 1] and quantized to 16 bits on
save, divided by the format's max value on load. The raw formats are for
lossless exchange: an 8-byte header (u32 LE height, u32 LE width) followed by
row-major pixels, float32 for `.f32` files (the interchange format, also used
for kernels) and float64 for `.f64` files (used for per-iteration snapshots,
where float32 rounding would corrupt recomputed objective values).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BlindSRError
from .imaging import ImageGrid, KernelGrid

__all__ = [
    "save_png16",
    "load_png",
    "save_raw",
    "load_raw",
    "save_image",
    "load_image",
    "save_kernel",
    "load_kernel",
]

_HEADER = struct.Struct("<II")


class ImageFormatError(BlindSRError):
    """Unreadable or unsupported image file."""


def save_png16(grid: ImageGrid, path):
    arr = np.clip(grid.data, 0.0, 1.0)
    img = Image.fromarray(np.round(arr * 65535.0).astype(np.uint16))
    img.save(path)


def load_png(path) -> ImageGrid:
    with Image.open(path) as img:
        if img.mode == "I;16":
            arr = np.asarray(img, dtype=np.float64) / 65535.0
        elif img.mode in ("L", "P"):
            arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        elif img.mode == "I":
            arr = np.asarray(img, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return ImageGrid(arr)


def _raw_dtype(path) -> str:
    return "<f8" if str(path).endswith(".f64") else "<f4"


def save_raw(data: np.ndarray, path):
    dtype = _raw_dtype(path)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(h, w))
        fh.write(np.ascontiguousarray(data, dtype=dtype).tobytes())


def load_raw(path) -> np.ndarray:
    dtype = _raw_dtype(path)
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ImageFormatError(f"{path}: truncated raw header")
    h, w = _HEADER.unpack_from(blob)
    itemsize = np.dtype(dtype).itemsize
    expected = _HEADER.size + h * w * itemsize
    if len(blob) != expected:
        raise ImageFormatError(
            f"{path}: {len(blob)} bytes, expected {expected} for {h}x{w}"
        )
    arr = np.frombuffer(blob, dtype=dtype, count=h * w, offset=_HEADER.size)
    return arr.reshape(h, w).astype(np.float64)


def save_image(grid: ImageGrid, path):
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        save_png16(grid, path)
    elif suffix in (".f32", ".f64", ".raw"):
        save_raw(grid.data, path)
    else:
        raise ImageFormatError(f"unsupported image format '{suffix}'")


def load_image(path) -> ImageGrid:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return load_png(path)
    if suffix in (".f32", ".f64", ".raw"):
        return ImageGrid(load_raw(path))
    raise ImageFormatError(f"unsupported image format '{suffix}'")


def save_kernel(kernel: KernelGrid, path):
    save_raw(kernel.data, path)


def load_kernel(path) -> KernelGrid:
    return KernelGrid(load_raw(path))
