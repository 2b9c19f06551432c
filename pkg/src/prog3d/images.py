"""Image emission and loading.

Color renders go out as 8-bit binary PPM (P6) and PNG. Opacity and depth maps
go out as raw 32-bit float binaries with a small dimension header, plus
16-bit grayscale PNG previews for eyeballing.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

from .errors import ContractViolation

__all__ = [
    "write_ppm",
    "write_png",
    "write_png_gray16",
    "write_float_map",
    "read_float_map",
    "load_png_rgb",
    "load_png_gray",
    "load_mask_png",
    "depth_preview",
]

_MAP_MAGIC = b"P3DM"


def _quantize8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary PPM (P6) from float RGB in [0, 1], shape (H, W, 3)."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ContractViolation("rgb must have shape (H, W, 3)")
    q = _quantize8(rgb)
    h, w = q.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def write_png(path, rgb: np.ndarray) -> None:
    """8-bit color PNG from float RGB in [0, 1]."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ContractViolation("rgb must have shape (H, W, 3)")
    Image.fromarray(_quantize8(rgb), mode="RGB").save(path, format="PNG")


def write_png_gray16(path, values: np.ndarray) -> None:
    """16-bit grayscale PNG preview from floats in [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ContractViolation("grayscale map must be 2-D")
    q = np.clip(np.round(v * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def write_float_map(path, values: np.ndarray) -> None:
    """Raw float map: magic, u32 height/width, row-major little-endian f32."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ContractViolation("float map must be 2-D")
    h, w = v.shape
    with open(path, "wb") as fh:
        fh.write(_MAP_MAGIC)
        fh.write(struct.pack("<2I", h, w))
        fh.write(v.astype("<f4").tobytes())


def read_float_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != _MAP_MAGIC:
        raise ContractViolation(f"bad float map magic: {data[:4]!r}")
    if len(data) < 12:
        raise ContractViolation("truncated float map header")
    h, w = struct.unpack_from("<2I", data, 4)
    if len(data) != 12 + 4 * h * w:
        raise ContractViolation(f"float map payload size mismatch for {h}x{w}")
    return np.frombuffer(data, dtype="<f4", offset=12).astype(np.float64).reshape(h, w)


def load_png_rgb(path) -> np.ndarray:
    """PNG to float RGB in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def load_png_gray(path) -> np.ndarray:
    """PNG to float grayscale in [0, 1], shape (H, W)."""
    with Image.open(path) as im:
        if im.mode == "I;16":
            return np.asarray(im, dtype=np.float64) / 65535.0
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def load_mask_png(path) -> np.ndarray:
    """Grayscale PNG to a binary uint8 mask, threshold 0.5."""
    return (load_png_gray(path) > 0.5).astype(np.uint8)


def depth_preview(depth: np.ndarray, near: float, far: float) -> np.ndarray:
    """Map depth to [0, 1] for previews: nearer is brighter, empty is black."""
    d = np.asarray(depth, dtype=np.float64)
    vis = (far - np.clip(d, near, far)) / (far - near)
    return np.where(np.isfinite(d), vis, 0.0)
