"""Minimal PNG reader/writer on stdlib zlib.

Supports exactly what the pipeline needs: 8-bit grayscale and RGB, and
16-bit grayscale (instance-id maps), non-interlaced.  The writer always
emits filter type 0 rows and a fixed zlib level, so identical arrays
produce byte-identical files.  The reader handles filter types 0-4 and
validates chunk CRCs; anything else fails loudly with the file path in
the message.

Pixel-value convention for images: byte p maps to 2p/255 - 1 in [-1, 1];
the inverse round trips every byte exactly.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngError(ValueError):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png(path: str, array: np.ndarray) -> None:
    """uint8 [H,W] or [H,W,3], or uint16 [H,W] (grayscale)."""
    arr = np.asarray(array)
    if arr.dtype == np.uint8 and arr.ndim == 2:
        color_type, depth = 0, 8
        raw_rows = arr[:, :, None]
    elif arr.dtype == np.uint8 and arr.ndim == 3 and arr.shape[2] == 3:
        color_type, depth = 2, 8
        raw_rows = arr
    elif arr.dtype == np.uint16 and arr.ndim == 2:
        color_type, depth = 0, 16
        raw_rows = arr[:, :, None]
    else:
        raise PngError(f"unsupported array for PNG write: dtype {arr.dtype}, shape {arr.shape}")
    h, w = arr.shape[0], arr.shape[1]
    if depth == 16:
        body = raw_rows.astype(">u2").tobytes()
        row_bytes = w * 2
    else:
        body = np.ascontiguousarray(raw_rows).tobytes()
        row_bytes = w * raw_rows.shape[2]
    scanlines = bytearray()
    for y in range(h):
        scanlines.append(0)  # filter type none
        scanlines += body[y * row_bytes : (y + 1) * row_bytes]
    ihdr = struct.pack(">IIBBBBB", w, h, depth, color_type, 0, 0, 0)
    data = (
        _SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(bytes(scanlines), 6))
        + _chunk(b"IEND", b"")
    )
    with open(path, "wb") as f:
        f.write(data)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, h: int, w: int, bpp: int) -> bytearray:
    row_bytes = w * bpp
    out = bytearray(h * row_bytes)
    pos = 0
    for y in range(h):
        if pos >= len(raw):
            raise PngError("truncated scanline data")
        ftype = raw[pos]
        pos += 1
        line = bytearray(raw[pos : pos + row_bytes])
        if len(line) < row_bytes:
            raise PngError("truncated scanline data")
        pos += row_bytes
        prev_start = (y - 1) * row_bytes
        if ftype == 0:
            pass
        elif ftype == 1:  # sub
            for i in range(bpp, row_bytes):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:  # up
            if y > 0:
                for i in range(row_bytes):
                    line[i] = (line[i] + out[prev_start + i]) & 0xFF
        elif ftype == 3:  # average
            for i in range(row_bytes):
                left = line[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if y > 0 else 0
                line[i] = (line[i] + (left + up) // 2) & 0xFF
        elif ftype == 4:  # paeth
            for i in range(row_bytes):
                left = line[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if y > 0 else 0
                ul = out[prev_start + i - bpp] if (y > 0 and i >= bpp) else 0
                line[i] = (line[i] + _paeth(left, up, ul)) & 0xFF
        else:
            raise PngError(f"unknown filter type {ftype}")
        out[y * row_bytes : (y + 1) * row_bytes] = line
    return out


def read_png(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise PngError(f"cannot read {path}: {e}") from e
    if blob[:8] != _SIGNATURE:
        raise PngError(f"{path}: not a PNG file")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos + 8 <= len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        if len(payload) != length or pos + 12 + length > len(blob):
            raise PngError(f"{path}: truncated chunk {tag!r}")
        (crc,) = struct.unpack(">I", blob[pos + 8 + length : pos + 12 + length])
        if crc != (zlib.crc32(tag + payload) & 0xFFFFFFFF):
            raise PngError(f"{path}: CRC mismatch in chunk {tag!r}")
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = payload
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise PngError(f"{path}: missing IHDR")
    w, h, depth, color_type, comp, filt, interlace = struct.unpack(">IIBBBBB", ihdr)
    if interlace != 0:
        raise PngError(f"{path}: interlaced PNG not supported")
    if comp != 0 or filt != 0:
        raise PngError(f"{path}: unsupported compression/filter method")
    if (depth, color_type) not in ((8, 0), (8, 2), (16, 0)):
        raise PngError(
            f"{path}: unsupported format (bit depth {depth}, color type {color_type}); "
            "supported: 8-bit gray, 8-bit RGB, 16-bit gray"
        )
    channels = 3 if color_type == 2 else 1
    bpp = channels * (depth // 8)
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as e:
        raise PngError(f"{path}: corrupt image data: {e}") from e
    expected = h * (w * bpp + 1)
    if len(raw) != expected:
        raise PngError(f"{path}: scanline size mismatch ({len(raw)} vs {expected} bytes)")
    data = _unfilter(raw, h, w, bpp)
    if depth == 16:
        return np.frombuffer(bytes(data), dtype=">u2").reshape(h, w).astype(np.uint16)
    arr = np.frombuffer(bytes(data), dtype=np.uint8).reshape(h, w, channels)
    return arr[:, :, 0].copy() if channels == 1 else arr.copy()


def to_unit(bytes_img: np.ndarray) -> np.ndarray:
    """uint8 [H,W,3] or [H,W] -> float in [-1, 1]."""
    return bytes_img.astype(np.float64) * (2.0 / 255.0) - 1.0


def from_unit(x: np.ndarray) -> np.ndarray:
    """float in [-1, 1] -> uint8; exact inverse of to_unit on byte values."""
    return np.clip(np.round((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def chw_to_png_array(x: np.ndarray) -> np.ndarray:
    """float [3,H,W] in [-1,1] -> uint8 [H,W,3]."""
    return from_unit(np.transpose(x, (1, 2, 0)))


def png_array_to_chw(arr: np.ndarray) -> np.ndarray:
    """uint8 [H,W,3] -> float [3,H,W] in [-1,1]."""
    return np.transpose(to_unit(arr), (2, 0, 1))
