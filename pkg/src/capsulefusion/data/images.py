"""Binary PPM (P6, maxval 255) reading and writing, plus bilinear resizing."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DataError
from ..tensor import Tensor

PPM_MAGIC = b"P6"
PPM_MAXVAL = 255


def _header_tokens(raw: bytes, path: Path) -> tuple[list[int], int]:
    """Parse magic, width, height and maxval; returns them with the payload offset."""
    tokens: list[bytes] = []
    i = 0
    n = len(raw)
    while len(tokens) < 4:
        while i < n and raw[i : i + 1].isspace():
            i += 1
        if i < n and raw[i : i + 1] == b"#":
            while i < n and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not raw[i : i + 1].isspace() and raw[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise DataError(f"{path}: truncated PPM header", path=str(path))
        tokens.append(raw[start:i])
    if tokens[0] != PPM_MAGIC:
        raise DataError(f"{path}: not a binary PPM (magic {tokens[0]!r})", path=str(path))
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{path}: malformed PPM header {tokens!r}", path=str(path)) from None
    if width < 1 or height < 1:
        raise DataError(f"{path}: PPM size {width}x{height} must be positive", path=str(path))
    if maxval != PPM_MAXVAL:
        raise DataError(f"{path}: PPM maxval must be 255, got {maxval}", path=str(path), maxval=maxval)
    if i >= n or not raw[i : i + 1].isspace():
        raise DataError(f"{path}: truncated PPM header", path=str(path))
    return [width, height, maxval], i + 1


def read_ppm(path: str | Path) -> np.ndarray:
    """Raw bytes of a P6 file as uint8 [H, W, 3]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"image not found: {path}", path=str(path)) from None
    (width, height, _), offset = _header_tokens(raw, path)
    expected = width * height * 3
    payload = raw[offset : offset + expected]
    if len(payload) < expected:
        raise DataError(
            f"{path}: truncated PPM payload ({len(payload)} of {expected} bytes)",
            path=str(path), expected=expected, actual=len(payload),
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def quantize(image: np.ndarray) -> np.ndarray:
    """[3,H,W] floats in [0,1] → uint8 [H,W,3], halves rounded up."""
    data = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(data * PPM_MAXVAL + 0.5).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path: str | Path, image: Tensor | np.ndarray) -> Path:
    """Write a channels-first image in [0,1] (or a uint8 [H,W,3] array) as P6."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.dtype == np.uint8:
        pixels = data
    else:
        if data.ndim != 3 or data.shape[0] != 3:
            raise DataError(f"expected an image [3,H,W], got {data.shape}", shape=data.shape)
        pixels = quantize(data)
    height, width, _ = pixels.shape
    path = Path(path)
    path.write_bytes(b"P6\n%d %d\n255\n" % (width, height) + np.ascontiguousarray(pixels).tobytes())
    return path


def _axis_weights(size_in: int, size_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, clamped at the edges
    src = (np.arange(size_out, dtype=np.float64) + 0.5) * (size_in / size_out) - 0.5
    src = np.clip(src, 0.0, size_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size_in - 1)
    return lo, hi, src - lo


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a [C,H,W] array."""
    c, h, w = image.shape
    if (h, w) == (height, width):
        return image
    data = image.astype(np.float64)
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    rows = data[:, y0, :] * (1 - fy)[None, :, None] + data[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    return out.astype(image.dtype)


def load_image(path: str | Path, size: int | tuple[int, int] | None = None, dtype=np.float32) -> Tensor:
    """Decode a P6 file into a [3,H,W] tensor with v/255 values, resized bilinearly to ``size``."""
    pixels = read_ppm(path)
    image = (pixels.transpose(2, 0, 1).astype(np.float64) / PPM_MAXVAL).astype(dtype)
    if size is not None:
        height, width = (size, size) if isinstance(size, int) else size
        image = resize_bilinear(image, height, width)
    return Tensor(image)
