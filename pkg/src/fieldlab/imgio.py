"""Minimal netpbm I/O: PPM (P6) color, PGM (P5) 8/16-bit grayscale.

16-bit PGMs store millimeters big-endian, the netpbm convention.
"""

from __future__ import annotations

import numpy as np


def write_ppm(path, rgb) -> None:
    """rgb: (H, W, 3) floats in [0,1] or uint8."""
    a = np.asarray(rgb)
    if a.dtype != np.uint8:
        a = (np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w, _ = a.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(a.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    magic, rest = _header(data, b"P6")
    w, h, maxval, off = rest
    a = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off)
    return a.reshape(h, w, 3).copy()


def write_pgm16(path, values_m, scale=1000.0) -> None:
    """Depth map in meters -> 16-bit millimeter PGM."""
    mm = np.clip(np.asarray(values_m) * scale + 0.5, 0, 65535).astype(">u2")
    h, w = mm.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(mm.tobytes())


def read_pgm16(path, scale=1000.0) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    _, (w, h, maxval, off) = _header(data, b"P5")
    a = np.frombuffer(data, dtype=">u2", count=w * h, offset=off)
    return a.reshape(h, w).astype(np.float64) / scale


def write_pgm8(path, values) -> None:
    a = np.asarray(values).astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(a.tobytes())


def read_pgm8(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    _, (w, h, maxval, off) = _header(data, b"P5")
    a = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=off)
    return a.reshape(h, w).copy()


def _header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"expected {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    return magic, (w, h, maxval, pos)
