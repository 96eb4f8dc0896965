"""Minimal raster I/O: 8-bit RGB PNG and float32 PFM.

PNG keeps the dataset lossless, deterministic byte-for-byte (fixed zlib
level, filter 0) and directly displayable by the annotation UI. PFM (the
portable float map, rows stored bottom-to-top) carries linear-radiance HDR
images for the application pipelines.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class RasterError(ValueError):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))


def write_png(path, img: np.ndarray) -> None:
    """Write an H x W x 3 uint8 array as an RGB PNG (filter 0, zlib level 6)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise RasterError(f"expected H x W x 3 uint8, got {img.shape} {img.dtype}")
    h, w, _ = img.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + img[i].tobytes() for i in range(h))
    data = PNG_MAGIC + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw, 6)) \
        + _chunk(b"IEND", b"")
    with open(path, "wb") as f:
        f.write(data)


def _iter_chunks(raw: bytes, path):
    pos = len(PNG_MAGIC)
    while pos + 8 <= len(raw):
        (length,) = struct.unpack_from(">I", raw, pos)
        tag = raw[pos + 4:pos + 8]
        payload = raw[pos + 8:pos + 8 + length]
        if len(payload) != length:
            raise RasterError(f"{path}: truncated chunk {tag!r}")
        yield tag, payload
        pos += 12 + length


def png_dims(path) -> tuple[int, int]:
    """(height, width) from the PNG header without decoding pixel data."""
    with open(path, "rb") as f:
        head = f.read(33)
    if not head.startswith(PNG_MAGIC) or head[12:16] != b"IHDR":
        raise RasterError(f"{path}: not a PNG file")
    w, h = struct.unpack_from(">II", head, 16)
    return h, w


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def read_png(path) -> np.ndarray:
    """Decode an 8-bit RGB PNG to H x W x 3 uint8 (filters 0-4 supported)."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(PNG_MAGIC):
        raise RasterError(f"{path}: not a PNG file")
    width = height = None
    idat = b""
    for tag, payload in _iter_chunks(raw, path):
        if tag == b"IHDR":
            width, height, depth, ctype = struct.unpack_from(">IIBB", payload)
            if depth != 8 or ctype != 2:
                raise RasterError(
                    f"{path}: only 8-bit RGB PNGs are supported "
                    f"(depth={depth}, colortype={ctype})")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if width is None:
        raise RasterError(f"{path}: missing IHDR")
    decoded = zlib.decompress(idat)
    stride = width * 3
    if len(decoded) != height * (stride + 1):
        raise RasterError(f"{path}: pixel data has wrong length")
    out = np.empty((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(height):
        row_start = y * (stride + 1)
        ftype = decoded[row_start]
        line = np.frombuffer(
            decoded, dtype=np.uint8, count=stride, offset=row_start + 1
        ).astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        else:
            cur = np.empty(stride, dtype=np.int32)
            for i in range(stride):
                a = cur[i - 3] if i >= 3 else 0
                b = prev[i]
                c = prev[i - 3] if i >= 3 else 0
                if ftype == 1:
                    base = a
                elif ftype == 3:
                    base = (a + b) // 2
                elif ftype == 4:
                    base = _paeth(a, b, c)
                else:
                    raise RasterError(f"{path}: unknown filter type {ftype}")
                cur[i] = (line[i] + base) & 0xFF
        out[y] = cur.astype(np.uint8)
        prev = cur
    return out.reshape(height, width, 3)


# ---------------------------------------------------------------------------
# unit-domain helpers: the pipelines process images as floats in [0, 1]


def load_image(path) -> np.ndarray:
    """PNG -> H x W x 3 float64 in [0, 1]."""
    return read_png(path).astype(np.float64) / 255.0


def save_image(path, img: np.ndarray) -> None:
    """H x W x 3 floats in [0, 1] -> PNG, rounding to 8 bits."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    write_png(path, np.round(arr * 255.0).astype(np.uint8))


# ---------------------------------------------------------------------------
# PFM (HDR float raster)


def write_pfm(path, img: np.ndarray) -> None:
    """Write H x W x 3 floats as a little-endian color PFM."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise RasterError(f"expected H x W x 3 floats, got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale = little-endian
        f.write(img[::-1].astype("<f4").tobytes())  # rows bottom-to-top


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise RasterError(f"{path}: not a PFM file")
    if parts[0] != b"PF":
        raise RasterError(f"{path}: only color PFM is supported")
    w, h = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dtype, count=h * w * 3)
    return data.reshape(h, w, 3)[::-1].astype(np.float64)
