"""8-bit grayscale image loading: PGM (bit-exact) and PNG.

Color inputs are converted with luma = round(0.299 R + 0.587 G + 0.114 B),
rounding half up.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError

_LUMA = np.array([0.299, 0.587, 0.114])


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb)
    return np.floor(rgb.astype(np.float64) @ _LUMA + 0.5).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Decode PGM or PNG to a (H, W) uint8 array."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P2", b"P5"):
        return read_pgm(path)
    if magic == b"\x89P":
        img = Image.open(path)
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img)
            if arr.dtype != np.uint8:
                raise ParseError("only 8-bit grayscale PNG is supported", path=path)
            return arr
        arr = np.asarray(img.convert("RGB"))
        return rgb_to_luma(arr)
    raise ParseError(f"unrecognized image magic {magic!r}", path=path)


def _next_token(fh: io.BufferedReader, path) -> bytes:
    """One whitespace-delimited PGM header token, skipping # comments."""
    token = b""
    while True:
        c = fh.read(1)
        if c == b"":
            if token:
                return token
            raise ParseError("unexpected end of file in header", path=path)
        if c == b"#":
            while c not in (b"\n", b"\r", b""):
                c = fh.read(1)
            continue
        if c.isspace():
            if token:
                return token
            continue
        token += c


def read_pgm(path) -> np.ndarray:
    """Bit-exact netpbm PGM reader (P2 ASCII and P5 raw), maxval <= 255."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic not in (b"P2", b"P5"):
            raise ParseError(f"not a PGM file (magic {magic!r})", path=path)
        try:
            width = int(_next_token(fh, path))
            height = int(_next_token(fh, path))
            maxval = int(_next_token(fh, path))
        except ValueError as exc:
            raise ParseError(f"non-numeric PGM header token: {exc}", path=path) from exc
        if width <= 0 or height <= 0:
            raise ParseError(f"bad PGM dimensions {width}x{height}", path=path)
        if not 0 < maxval <= 255:
            raise ParseError(f"unsupported PGM maxval {maxval} (8-bit only)", path=path)
        count = width * height
        if magic == b"P5":
            # exactly one whitespace byte separates the header from the raster
            raster = fh.read(count)
            if len(raster) != count:
                raise ParseError(f"truncated raster: expected {count} bytes, got {len(raster)}", path=path)
            data = np.frombuffer(raster, dtype=np.uint8)
        else:
            values = fh.read().split()
            if len(values) < count:
                raise ParseError(f"truncated raster: expected {count} samples, got {len(values)}", path=path)
            try:
                data = np.array([int(v) for v in values[:count]], dtype=np.int64)
            except ValueError as exc:
                raise ParseError(f"non-numeric PGM sample: {exc}", path=path) from exc
            if data.min() < 0 or data.max() > maxval:
                raise ParseError("PGM sample out of range", path=path)
            data = data.astype(np.uint8)
        return data.reshape(height, width)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary (P5) PGM."""
    image = np.ascontiguousarray(np.asarray(image, dtype=np.uint8))
    if image.ndim != 2:
        raise ParseError("PGM writer expects a 2-D grayscale array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())
