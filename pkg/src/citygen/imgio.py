"""Binary PPM/PGM and minimal PNG writers (all deterministic byte-for-byte).

Float images live in [0, 1]; files store round(v * 255) as 8-bit.  PPM/PGM
headers carry ``# key=value`` comment lines so every output records the
(config hash, seed) pair that produced it.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def _header(magic: str, w: int, h: int, meta: dict | None) -> bytes:
    lines = [magic]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v}")
    lines.append(f"{w} {h}")
    lines.append("255")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ppm(path, img: np.ndarray, meta: dict | None = None) -> None:
    """``img`` is (3, H, W) floats in [0, 1]."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {img.shape}")
    q = _quantize(img).transpose(1, 2, 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_header("P6", q.shape[1], q.shape[0], meta) + q.tobytes())


def write_pgm(path, img: np.ndarray, meta: dict | None = None) -> None:
    """``img`` is (H, W) floats in [0, 1]."""
    if img.ndim != 2:
        raise ValueError(f"expected (H, W), got {img.shape}")
    q = _quantize(img)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_header("P5", q.shape[1], q.shape[0], meta) + q.tobytes())


def _read_netpbm(path, magic: str):
    blob = Path(path).read_bytes()
    if not blob.startswith(magic.encode("ascii")):
        raise ValueError(f"{path}: expected {magic}")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return blob, pos, w, h


def read_ppm(path) -> np.ndarray:
    blob, pos, w, h = _read_netpbm(path, "P6")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    blob, pos, w, h = _read_netpbm(path, "P5")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 255.0


def write_png(path, img: np.ndarray) -> None:
    """Tiny RGB PNG encoder (zlib, no filtering) for human-readable montages."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {img.shape}")
    q = _quantize(img).transpose(1, 2, 0)
    h, w = q.shape[:2]
    raw = b"".join(b"\x00" + q[r].tobytes() for r in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    body = chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 6)) + chunk(b"IEND", b"")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"\x89PNG\r\n\x1a\n" + body)
