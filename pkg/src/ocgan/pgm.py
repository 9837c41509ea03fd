"""Binary PGM (P5) image grids for the diagnostic commands."""
from __future__ import annotations

import math

import numpy as np

from .errors import FormatError


def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def tile(images: np.ndarray, cols: int) -> np.ndarray:
    """Row-major tiling of ``(N, 1, H, W)`` or ``(N, H, W)`` into one 2-d canvas."""
    images = np.asarray(images)
    if images.ndim == 4:
        images = images[:, 0]
    n, h, w = images.shape
    rows = math.ceil(n / cols)
    canvas = np.zeros((rows * h, cols * w), dtype=images.dtype)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = img
    return canvas


def encode_pgm(image: np.ndarray) -> bytes:
    """``image`` is 2-d, either uint8 or floats in [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM images are 2-d")
    pixels = image if image.dtype == np.uint8 else quantize(image)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def write_pgm(path, image: np.ndarray):
    with open(path, "wb") as f:
        f.write(encode_pgm(image))


def decode_pgm(data: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("PGM header is truncated")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise FormatError("only 8-bit binary PGM (P5, maxval 255) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos + 1:pos + 1 + w * h]
    if len(body) != w * h:
        raise FormatError("PGM payload is truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_pgm(f.read())
