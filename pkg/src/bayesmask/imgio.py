"""Image file formats.

Two containers are supported:

* PNG, 8-bit: decoded to floats ``v / 255``; saving rounds ``v * 255``.
* A raw float container: 12-byte header of ``c, w, h`` as little-endian
  32-bit unsigned integers, followed by the channel-major float32 data in
  little-endian byte order.  Round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage

from .core import Image
from .errors import DimensionError, DomainError

_HEADER = struct.Struct("<III")

PathLike = Union[str, Path]


def write_raw(image: Image, path: PathLike) -> None:
    """Write the raw float container (bit-exact)."""
    c, w, h = image.shape
    payload = image.data.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(c, w, h))
        fh.write(payload)


def read_raw(path: PathLike) -> Image:
    """Read the raw float container written by :func:`write_raw`."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DomainError(f"{path}: truncated header")
        c, w, h = _HEADER.unpack(head)
        expected = c * w * h * 4
        payload = fh.read()
    if len(payload) != expected:
        raise DimensionError(f"{path}: expected {expected} data bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(c, w, h)
    return Image(arr)


def write_png(image: Image, path: PathLike) -> None:
    """Write an 8-bit PNG (RGB for 3 channels, grayscale for 1)."""
    c, w, h = image.shape
    quantized = np.round(image.data * 255.0).astype(np.uint8)
    if c == 3:
        # (c, w, h) -> (h, w, c) raster order expected by PIL
        pil = PILImage.fromarray(quantized.transpose(2, 1, 0), mode="RGB")
    elif c == 1:
        pil = PILImage.fromarray(quantized[0].T, mode="L")
    else:
        raise DimensionError(f"PNG output supports 1 or 3 channels, got {c}")
    pil.save(path, format="PNG")


def read_png(path: PathLike) -> Image:
    """Read an 8-bit PNG into a [0, 1] float image."""
    with PILImage.open(path) as pil:
        if pil.mode not in ("RGB", "L"):
            pil = pil.convert("RGB")
        raster = np.asarray(pil, dtype=np.uint8)
    if raster.ndim == 2:
        data = raster.T[None, :, :]
    else:
        data = raster.transpose(2, 1, 0)
    return Image(data.astype(np.float32) / np.float32(255.0))


def load_image(path: PathLike) -> Image:
    """Dispatch on extension: .png -> PNG, anything else -> raw container."""
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return read_png(path)
    return read_raw(path)


def save_image(image: Image, path: PathLike) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        write_png(image, path)
    else:
        write_raw(image, path)
