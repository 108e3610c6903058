"""On-disk formats: complex matrix dumps, PGM images and CSV number formatting.

Dump layout (little-endian)::

    4 bytes   magic, b"CFLD" for field sets or b"CMAP" for contrast maps
    u32       version (1)
    u32       rows
    u32       cols
    rows*cols (re, im) float64 pairs, row-major
"""

import struct
from pathlib import Path

import numpy as np

FIELD_MAGIC = b"CFLD"
CONTRAST_MAGIC = b"CMAP"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_dump(path, array, magic=FIELD_MAGIC) -> None:
    arr = np.asarray(array, dtype=complex)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"dumps hold 2-D matrices, got shape {arr.shape}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, DUMP_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())


def read_dump(path, magic=None) -> np.ndarray:
    """Read a dump; if ``magic`` is given the file must carry it."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    found, version, rows, cols = _HEADER.unpack_from(data)
    if found not in (FIELD_MAGIC, CONTRAST_MAGIC):
        raise ValueError(f"{path}: bad magic {found!r}")
    if magic is not None and found != magic:
        raise ValueError(f"{path}: expected {magic!r} dump, found {found!r}")
    if version != DUMP_VERSION:
        raise ValueError(f"{path}: unsupported dump version {version}")
    expected = _HEADER.size + rows * cols * 16
    if len(data) != expected:
        raise ValueError(f"{path}: size {len(data)} does not match header ({expected})")
    return np.frombuffer(data, dtype="<c16", offset=_HEADER.size).reshape(rows, cols).astype(complex)


def write_field(path, field) -> None:
    write_dump(path, field, FIELD_MAGIC)


def read_field(path) -> np.ndarray:
    return read_dump(path, FIELD_MAGIC)


def write_contrast(path, chi) -> None:
    write_dump(path, chi, CONTRAST_MAGIC)


def read_contrast(path) -> np.ndarray:
    return read_dump(path, CONTRAST_MAGIC)


def write_pgm(path, image, display_max) -> None:
    """Write a binary 8-bit PGM, mapping [0, display_max] linearly to [0, 255]."""
    img = np.asarray(image, dtype=float)
    scale = 255.0 / display_max if display_max > 0 else 0.0
    pix = np.clip(np.rint(img * scale), 0, 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 (binary) or P2 (ASCII) PGM; returns intensities in [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        dtype = np.uint8 if maxval < 256 else ">u2"
        count = w * h
        pix = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    elif magic == b"P2":
        pix = np.array(data[pos:].split()[: w * h], dtype=float)
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    if pix.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, got {pix.size}")
    return pix.reshape(h, w).astype(float) / maxval


def fmt_float(value) -> str:
    """CSV float formatting with 17 significant digits."""
    return f"{float(value):.17g}"
