"""8-bit frame helpers: quantization, binary PPM (P6) I/O and FNV-1a checksums."""

from __future__ import annotations

from pathlib import Path

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK
    return h


def quantize(frame: np.ndarray) -> np.ndarray:
    """Round a [0, 1] float frame onto the 8-bit grid (values k / 255)."""
    return to_uint8(frame).astype(np.float64) / 255.0


def to_uint8(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        return frame
    return np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def to_float(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    return frame.astype(np.float64, copy=False)


def encode_ppm(frame: np.ndarray) -> bytes:
    px = to_uint8(frame)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 frame, got shape {px.shape}")
    h, w, _ = px.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(px).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    """Parse a binary P6 image with maxval 255 into an ``(H, W, 3)`` uint8 array."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P6":
        raise ValueError(f"not a binary PPM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    raster = data[pos:]
    if len(raster) != w * h * 3:
        raise ValueError(f"PPM raster has {len(raster)} bytes, expected {w * h * 3}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, frame: np.ndarray) -> bytes:
    data = encode_ppm(frame)
    Path(path).write_bytes(data)
    return data


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())
