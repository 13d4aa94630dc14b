"""Binary tensor files (NFT1), flow checkpoints (NFCK) and PGM images.

NFT1 layout: ``b"NFT1"``, u32 ndim, ndim x u64 dims, row-major f64 payload,
all little-endian.

NFCK layout: ``b"NFCK"``, u32 version (1), u32 entry count, then per entry
u32 name length, UTF-8 name, u32 ndim, ndim x u64 dims, f64 payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .exceptions import FormatError

NFT_MAGIC = b"NFT1"
NFCK_MAGIC = b"NFCK"
NFCK_VERSION = 1


def _pack_array(arr):
    arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d arrays 0-d
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def _unpack_array(buf, offset):
    if offset + 4 > len(buf):
        raise FormatError("truncated ndim field", offset)
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if offset + 8 * ndim > len(buf):
        raise FormatError("truncated dims", offset)
    dims = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    nbytes = 8 * count
    if offset + nbytes > len(buf):
        raise FormatError(f"payload needs {nbytes} bytes, {len(buf) - offset} available", offset)
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(dims).astype(np.float64)
    return arr, offset + nbytes


def tensor_to_bytes(arr):
    return NFT_MAGIC + _pack_array(arr)


def tensor_from_bytes(buf):
    if buf[:4] != NFT_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {NFT_MAGIC!r}", 0)
    arr, end = _unpack_array(buf, 4)
    if end != len(buf):
        raise FormatError("trailing bytes after payload", end)
    return arr


def write_tensor(path, arr):
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def read_tensor(path):
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def checkpoint_to_bytes(entries):
    """Serialize an ordered mapping ``name -> array``."""
    out = [NFCK_MAGIC, struct.pack("<II", NFCK_VERSION, len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(_pack_array(arr))
    return b"".join(out)


def checkpoint_from_bytes(buf):
    if buf[:4] != NFCK_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {NFCK_MAGIC!r}", 0)
    if len(buf) < 12:
        raise FormatError("truncated header", 4)
    version, count = struct.unpack_from("<II", buf, 4)
    if version != NFCK_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    offset = 12
    entries = {}
    for _ in range(count):
        if offset + 4 > len(buf):
            raise FormatError("truncated entry name length", offset)
        (nlen,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        if offset + nlen > len(buf):
            raise FormatError("truncated entry name", offset)
        try:
            name = buf[offset:offset + nlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("entry name is not UTF-8", offset) from exc
        offset += nlen
        entries[name], offset = _unpack_array(buf, offset)
    if offset != len(buf):
        raise FormatError("trailing bytes after last entry", offset)
    return entries


def write_checkpoint(path, entries):
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(entries))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def _pgm_token(buf, pos):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PGM header", start)
    return buf[start:pos], pos, start


def pgm_from_bytes(buf):
    """Decode a binary (P5) PGM into floats in [0, 1]."""
    if buf[:2] != b"P5":
        raise FormatError(f"unsupported PGM magic {buf[:2]!r}; only binary P5 is supported", 0)
    pos = 2
    vals = []
    for field in ("width", "height", "maxval"):
        tok, pos, start = _pgm_token(buf, pos)
        try:
            v = int(tok)
        except ValueError:
            raise FormatError(f"bad PGM {field} {tok!r}", start) from None
        if v <= 0:
            raise FormatError(f"PGM {field} must be positive", start)
        vals.append(v)
    width, height, maxval = vals
    if maxval > 65535:
        raise FormatError("PGM maxval exceeds 65535", pos)
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PGM maxval", pos)
    pos += 1
    dtype = ">u1" if maxval < 256 else ">u2"
    nbytes = width * height * np.dtype(dtype).itemsize
    if len(buf) - pos < nbytes:
        raise FormatError(f"PGM raster needs {nbytes} bytes, {len(buf) - pos} available", pos)
    raster = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    return raster.reshape(height, width).astype(np.float64) / maxval


def pgm_to_bytes(img, maxval=65535):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM images are 2D")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u1" if maxval < 256 else ">u2"
    head = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    return head + q.astype(dtype).tobytes()


def read_pgm(path):
    with open(path, "rb") as fh:
        return pgm_from_bytes(fh.read())


def write_pgm(path, img, maxval=65535):
    with open(path, "wb") as fh:
        fh.write(pgm_to_bytes(img, maxval))


def read_image(path):
    """Load an ``.nft`` tensor or a ``.pgm`` image by extension."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    return read_tensor(path)
