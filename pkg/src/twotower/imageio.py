"""PFM, binary PPM (P6) and PGM (P5) readers and writers.

Arrays are channel-first float64: PFM keeps its float32 values, PPM/PGM map
8-bit samples to ``k / 255``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np


class FormatError(ValueError):
    """Malformed or truncated image file."""

    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.offset = offset


def _tokens(raw: bytes, count: int, path) -> Tuple[list, int]:
    """Read ``count`` whitespace-separated header tokens (``#`` comments allowed).

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one.
    """
    out, pos, n = [], 0, len(raw)
    while len(out) < count:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(path, pos, f"header ended after {len(out)} of {count} fields")
        out.append(raw[start:pos].decode("ascii", errors="replace"))
    if pos >= n:
        raise FormatError(path, pos, "missing whitespace after header")
    return out, pos + 1


def _int_field(value: str, path, offset: int, what: str) -> int:
    try:
        v = int(value)
    except ValueError:
        raise FormatError(path, offset, f"{what} {value!r} is not an integer") from None
    if v <= 0:
        raise FormatError(path, offset, f"{what} must be positive, got {v}")
    return v


def read_pfm(path, with_scale: bool = False):
    """Read a PFM file into a C x H x W array (C = 1 for "Pf", 3 for "PF").

    A negative scale marks a little-endian payload, positive big-endian.
    Rows are stored bottom-up in the file.
    """
    raw = Path(path).read_bytes()
    (magic, w, h, scale_s), offset = _tokens(raw, 4, path)
    if magic not in ("PF", "Pf"):
        raise FormatError(path, 0, f"bad magic {magic!r}, expected 'PF' or 'Pf'")
    width = _int_field(w, path, 3, "width")
    height = _int_field(h, path, 3, "height")
    try:
        scale = float(scale_s)
    except ValueError:
        raise FormatError(path, offset, f"scale {scale_s!r} is not a number") from None
    if scale == 0:
        raise FormatError(path, offset, "scale must be nonzero")
    channels = 3 if magic == "PF" else 1
    count = width * height * channels
    if len(raw) - offset < 4 * count:
        raise FormatError(path, len(raw), f"truncated payload: need {4 * count} bytes after offset {offset}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(height, width, channels)
    out = np.flipud(data).transpose(2, 0, 1).astype(np.float64)
    return (out, scale) if with_scale else out


def write_pfm(path, array, scale: float = -1.0) -> None:
    """Write a 1 x H x W, 3 x H x W or H x W array as float32 PFM."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"PFM needs 1 or 3 channels, got shape {arr.shape}")
    if scale == 0:
        raise ValueError("scale must be nonzero")
    c, h, w = arr.shape
    dtype = "<f4" if scale < 0 else ">f4"
    payload = np.ascontiguousarray(np.flipud(arr.transpose(1, 2, 0)), dtype=dtype).tobytes()
    header = f"{'PF' if c == 3 else 'Pf'}\n{w} {h}\n{float(scale)!r}\n".encode("ascii")
    Path(path).write_bytes(header + payload)


def _read_pnm(path, magic: str, channels: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    (m, w, h, maxval), offset = _tokens(raw, 4, path)
    if m != magic:
        raise FormatError(path, 0, f"bad magic {m!r}, expected {magic!r}")
    width = _int_field(w, path, 3, "width")
    height = _int_field(h, path, 3, "height")
    if _int_field(maxval, path, offset, "maxval") != 255:
        raise FormatError(path, offset, f"only maxval 255 is supported, got {maxval}")
    count = width * height * channels
    if len(raw) - offset < count:
        raise FormatError(path, len(raw), f"truncated payload: need {count} bytes after offset {offset}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset)
    return data.reshape(height, width, channels).transpose(2, 0, 1) / 255.0


def _write_pnm(path, arr: np.ndarray, magic: str) -> None:
    c, h, w = arr.shape
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"{magic}\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes())


def read_ppm(path) -> np.ndarray:
    """Binary P6 (maxval 255) to a 3 x H x W array in [0, 1]."""
    return _read_pnm(path, "P6", 3)


def write_ppm(path, array) -> None:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"PPM needs a 3 x H x W array, got shape {arr.shape}")
    _write_pnm(path, arr, "P6")


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, "P5", 1)


def write_pgm(path, array) -> None:
    """Linear grayscale: 0 -> black, 1 -> white, values clipped to [0, 1]."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != 1:
        raise ValueError(f"PGM needs a 1 x H x W array, got shape {arr.shape}")
    _write_pnm(path, arr, "P5")
