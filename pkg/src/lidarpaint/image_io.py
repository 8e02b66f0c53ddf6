"""Binary PPM (P6, 8-bit) and raw float32 image I/O.

Float images live in [0, 1] with shape (H, W, 3); PPM quantizes to 8 bits.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError


def write_ppm(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] (H, W, 3) as binary P6."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    data = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM into a float image in [0, 1], shape (H, W, 3)."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P6"):
        raise FormatError(path, "not a binary P6 PPM")
    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if i < len(blob) and blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(blob) and not blob[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError(path, "truncated PPM header")
        tokens.append(blob[start:i])
    i += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(path, f"bad PPM header tokens {tokens!r}") from None
    if maxval != 255:
        raise FormatError(path, f"unsupported maxval {maxval}")
    expected = w * h * 3
    raster = blob[i : i + expected]
    if len(raster) != expected:
        raise FormatError(path, f"raster has {len(raster)} bytes, expected {expected}")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return data.astype(np.float64) / 255.0


def write_f32(path, array: np.ndarray) -> None:
    """Write an array as raw little-endian float32 (row-major, no header)."""
    np.asarray(array, dtype="<f4").tofile(path)


def read_f32(path, shape) -> np.ndarray:
    """Read a raw little-endian float32 file into the given shape, as float64."""
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise FormatError(path, f"has {data.size} floats, expected {expected}")
    return data.reshape(shape).astype(np.float64)


def ensure_output(path, overwrite: bool) -> None:
    """Refuse to clobber an existing output unless overwrite is set."""
    if os.path.exists(path) and not overwrite:
        raise ValueError(f"output {path} exists (pass --overwrite to replace it)")
